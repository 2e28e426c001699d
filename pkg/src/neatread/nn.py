"""Numeric core: LSTM cells, dense layers, softmax cross-entropy, SGD, checkpoints.

Parameters are plain ``dict[str, np.ndarray]`` (float64). Every backward
function returns or accumulates gradients into a dict with the same keys
and shapes, so a gradient dict can be handed straight to :func:`sgd_update`.
Only the fixed architectures of this package are differentiated; there is
no tape.
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import kernels

log = logging.getLogger(__name__)

Params = dict  # name -> np.ndarray


class ConfigError(ValueError):
    """Inconsistent dimensions or settings."""


@dataclass
class ParamTensor:
    """A named parameter with its gradient accumulator."""

    value: np.ndarray
    grad: np.ndarray | None = None

    def __post_init__(self):
        self.value = np.asarray(self.value, dtype=np.float64)
        if self.grad is None:
            self.grad = np.zeros_like(self.value)
        elif self.grad.shape != self.value.shape:
            raise ConfigError(f"gradient shape {self.grad.shape} != value shape {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0


@dataclass
class LstmState:
    hidden: np.ndarray
    cell: np.ndarray

    @classmethod
    def zeros(cls, n_cells, batch=None):
        shape = (n_cells,) if batch is None else (batch, n_cells)
        return cls(np.zeros(shape), np.zeros(shape))


# --------------------------------------------------------------------------
# initialization


def uniform(rng, shape, scale=0.05):
    return rng.uniform(-scale, scale, size=shape)


def init_lstm(rng, n_in, n_cells, scale=0.05, prefix=""):
    """Weights ``W`` of shape (n_in + n_cells, 4 * n_cells), gate order i, f, g, o."""
    return {
        prefix + "W": uniform(rng, (n_in + n_cells, 4 * n_cells), scale),
        prefix + "b": np.zeros(4 * n_cells),
    }


def init_dense(rng, n_in, n_out, scale=0.05, prefix=""):
    return {prefix + "W": uniform(rng, (n_in, n_out), scale), prefix + "b": np.zeros(n_out)}


# --------------------------------------------------------------------------
# LSTM


def lstm_forward(W, b, x, h, c):
    """One batched LSTM step. ``x`` (B, I), ``h``/``c`` (B, H).

    Returns ``(h_new, c_new, cache)``.
    """
    n_cells = h.shape[1]
    if W.shape != (x.shape[1] + n_cells, 4 * n_cells):
        raise ConfigError(
            f"LSTM weight shape {W.shape} does not fit input {x.shape[1]} and {n_cells} cells"
        )
    xh = np.concatenate([x, h], axis=1)
    z = xh @ W + b
    h_new, c_new, acts, tanh_c = kernels.lstm_gates_forward(z, c)
    return h_new, c_new, (xh, c, acts, tanh_c)


def lstm_backward(W, dh, dc, cache, gW, gb):
    """Backprop one step; accumulates into ``gW``/``gb`` and returns ``(dx, dh_prev, dc_prev)``."""
    xh, c_prev, acts, tanh_c = cache
    dz, dc_prev = kernels.lstm_gates_backward(dh, dc, acts, c_prev, tanh_c)
    gW += xh.T @ dz
    gb += dz.sum(axis=0)
    dxh = dz @ W.T
    n_in = xh.shape[1] - dh.shape[1]
    return dxh[:, :n_in], dxh[:, n_in:], dc_prev


def lstm_step(params: Mapping[str, np.ndarray], state: LstmState, x, prefix="") -> LstmState:
    """Unbatched convenience wrapper: one step from ``state`` on input vector ``x``."""
    W, b = params[prefix + "W"], params[prefix + "b"]
    x = np.asarray(x, dtype=np.float64)
    n_cells = W.shape[1] // 4
    if state.hidden.shape != (n_cells,) or state.cell.shape != (n_cells,):
        raise ConfigError(f"state dimension does not match {n_cells} cells")
    if x.ndim != 1 or W.shape[0] != x.shape[0] + n_cells:
        raise ConfigError(f"input dimension {x.shape} does not match LSTM weights {W.shape}")
    h, c, _ = lstm_forward(W, b, x[None, :], state.hidden[None, :], state.cell[None, :])
    return LstmState(h[0], c[0])


def lstm_run(W, b, xs, h0=None, c0=None):
    """Run an LSTM over a list of (B, I) inputs; returns hidden states and caches."""
    B = xs[0].shape[0]
    n_cells = W.shape[1] // 4
    h = np.zeros((B, n_cells)) if h0 is None else h0
    c = np.zeros((B, n_cells)) if c0 is None else c0
    hs, caches = [], []
    for x in xs:
        h, c, cache = lstm_forward(W, b, x, h, c)
        hs.append(h)
        caches.append(cache)
    return hs, caches


def lstm_run_backward(W, dhs, caches, gW, gb):
    """Backprop through :func:`lstm_run`; ``dhs`` are gradients on each output hidden state."""
    n_cells = W.shape[1] // 4
    B = dhs[0].shape[0]
    dh_next = np.zeros((B, n_cells))
    dc_next = np.zeros((B, n_cells))
    dxs = [None] * len(caches)
    for t in range(len(caches) - 1, -1, -1):
        dx, dh_next, dc_next = lstm_backward(W, dhs[t] + dh_next, dc_next, caches[t], gW, gb)
        dxs[t] = dx
    return dxs, dh_next, dc_next


# --------------------------------------------------------------------------
# output layers


def log_softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax_xent(logits, target):
    """Cross-entropy of one logit vector against ``target``: ``(loss, d loss / d logits)``."""
    logits = np.asarray(logits, dtype=np.float64)
    if logits.size == 0:
        raise ValueError("empty logits")
    loss, grad = kernels.softmax_xent(logits[None, :], np.array([target]))
    return float(loss[0]), grad[0]


def softmax_xent_batch(logits, targets):
    return kernels.softmax_xent(logits, targets)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def log_sigmoid(x):
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


# --------------------------------------------------------------------------
# optimization


def global_norm(grads):
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def sgd_update(params, grads, lr, clip=5.0):
    """In-place SGD on the keys of ``grads`` with global-norm clipping.

    Returns the pre-clipping gradient norm. A zero learning rate leaves
    ``params`` bitwise unchanged.
    """
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ConfigError(f"gradient for {name} has shape {g.shape}, expected {params[name].shape}")
    norm = global_norm(grads)
    if not np.isfinite(norm):
        raise FloatingPointError("non-finite gradient norm")
    if lr == 0:
        return norm
    scale = lr
    if clip is not None and norm > clip:
        scale = lr * clip / norm
    for name, g in grads.items():
        params[name] -= scale * g
    return norm


def zeros_like(params, names=None):
    names = params.keys() if names is None else names
    return {k: np.zeros_like(params[k]) for k in names}


# --------------------------------------------------------------------------
# gradient checking


def grad_check(
    fn: Callable[[Params], tuple[float, Params]],
    params: Params,
    tolerance=1e-5,
    names=None,
    eps=1e-4,
    floor=1e-4,
    max_per_tensor=None,
    rng=None,
):
    """Compare analytic gradients of ``fn`` with central finite differences.

    ``fn(params)`` must return ``(loss, grads)``. The relative error per
    coordinate is ``|a - n| / max(|a|, |n|, floor)``; ``floor`` keeps
    coordinates whose true gradient is ~0 from dividing rounding noise by
    rounding noise. Returns the maximum over checked coordinates and logs
    a warning when it exceeds ``tolerance``.
    """
    loss, grads = fn(params)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss in grad_check")
    names = list(grads) if names is None else list(names)
    rng = np.random.default_rng(0) if rng is None else rng
    worst = 0.0
    for name in names:
        value = params[name]
        flat = value.reshape(-1)
        analytic = grads[name].reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = rng.choice(flat.size, size=max_per_tensor, replace=False)
        for k in idx:
            orig = flat[k]
            flat[k] = orig + eps
            lp, _ = fn(params)
            flat[k] = orig - eps
            lm, _ = fn(params)
            flat[k] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise FloatingPointError(f"non-finite loss perturbing {name}[{k}]")
            numeric = (lp - lm) / (2 * eps)
            err = abs(analytic[k] - numeric) / max(abs(analytic[k]), abs(numeric), floor)
            worst = max(worst, err)
    if worst > tolerance:
        log.warning("gradient check: max relative error %.3g exceeds %.3g", worst, tolerance)
    return worst


# --------------------------------------------------------------------------
# checkpoints
#
# Layout (all integers little-endian):
#   8 bytes   magic b"NEATCKPT"
#   uint32    format version (1)
#   uint64    header length in bytes
#   header    UTF-8 JSON, sorted keys: {"meta": {...}, "tensors": [{"name", "shape"}, ...]}
#   payload   float64 little-endian, row-major, tensors concatenated in header order

CHECKPOINT_MAGIC = b"NEATCKPT"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, meta=None):
    names = sorted(params)
    header = {
        "meta": meta or {},
        "tensors": [{"name": n, "shape": list(params[n].shape)} for n in names],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(blob)))
        fh.write(blob)
        for n in names:
            arr = np.asarray(params[n], dtype="<f8")
            if not np.all(np.isfinite(arr)):
                raise FloatingPointError(f"refusing to save non-finite tensor {n}")
            fh.write(np.ascontiguousarray(arr).tobytes())


def load_checkpoint(path):
    """Return ``(params, meta)`` from a file written by :func:`save_checkpoint`."""
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a neatread checkpoint")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        params = {}
        for t in header["tensors"]:
            shape = tuple(t["shape"])
            count = int(np.prod(shape)) if shape else 1
            data = fh.read(8 * count)
            if len(data) != 8 * count:
                raise ValueError(f"{path}: truncated tensor {t['name']}")
            params[t["name"]] = np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)
    return params, header["meta"]
