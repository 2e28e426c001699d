"""Two-phase training.

Phase 1 trains the reader and decoder by SGD under i.i.d. Bernoulli(p)
masks. Phase 2 freezes them and trains the attention policy with the
score-function (REINFORCE) estimator, a learned expected-cost baseline and
an entropy bonus.
"""
from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import nn
from .model import (
    ATTENTION_KEYS,
    NeatModel,
    attention_backward,
    loss_and_grads,
    run_decoder,
    run_reader,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    alpha: float = 5.0
    gamma: float = 5.0
    mask_rate: float = 0.62
    lr_lm: float = 0.1
    lr_attention: float = 0.01
    lr_value: float = 0.01
    batch_size: int = 16
    batch_size_attention: int = 64
    epochs_lm: int = 5
    epochs_attention: int = 5
    clip: float = 5.0
    value_cells: int = 20
    seed: int = 0

    def validate(self):
        if self.alpha < 0 or self.gamma < 0:
            raise nn.ConfigError("alpha and gamma must be nonnegative")
        if not 0.0 <= self.mask_rate <= 1.0:
            raise nn.ConfigError("mask_rate must lie in [0, 1]")
        if self.batch_size < 1 or self.batch_size_attention < 1:
            raise nn.ConfigError("batch sizes must be >= 1")
        return self

    def to_dict(self):
        return asdict(self)


class DivergenceError(FloatingPointError):
    pass


def entropy(prob):
    """Binary entropy in nats, with 0 log 0 taken as 0."""
    p = np.asarray(prob, dtype=np.float64)
    if np.any((p < 0) | (p > 1)):
        raise ValueError("probability outside [0, 1]")
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(p > 0, p * np.log(p), 0.0) - np.where(p < 1, (1 - p) * np.log1p(-p), 0.0)
    return float(h) if h.ndim == 0 else h


def _entropy_from_logit(z):
    # H(sigmoid(z)) = softplus(-z) + z * (1 - sigmoid(z)) rewritten stably
    p = nn.sigmoid(z)
    return -(p * nn.log_sigmoid(z) + (1 - p) * nn.log_sigmoid(-z))


# --------------------------------------------------------------------------
# phase 1


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start : start + batch_size]


def train_phase1(model: NeatModel, data, config: TrainConfig, rng=None, logger=None, on_epoch=None):
    """Fit reader and decoder under random masks; attention parameters are untouched.

    ``data`` is an int array (S, N). Returns the list of per-epoch mean losses.
    ``on_epoch(epoch, mean_loss)`` runs after every epoch.
    """
    config.validate()
    data = np.asarray(data, dtype=np.int64)
    if len(data) == 0:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    history = []
    for epoch in range(config.epochs_lm):
        total, count = 0.0, 0
        for bi, idx in enumerate(_batches(len(data), config.batch_size, rng)):
            ids = data[idx]
            mask = rng.random(ids.shape) < config.mask_rate
            losses, grads = loss_and_grads(model, ids, mask)
            if not np.all(np.isfinite(losses)):
                raise DivergenceError(f"non-finite loss in epoch {epoch}, batch {bi}")
            for g in grads.values():
                g /= len(idx)
            nn.sgd_update(model.params, grads, config.lr_lm, config.clip)
            total += float(losses.sum())
            count += len(idx)
            if logger is not None:
                logger.record(
                    phase="lm", epoch=epoch, batch=bi, mean_cost=float(losses.mean()),
                    fixation_rate=float(mask.mean()),
                )
        history.append(total / count)
        log.info("phase 1 epoch %d: mean loss %.4f", epoch, history[-1])
        if on_epoch is not None:
            on_epoch(epoch, history[-1])
    return history


# --------------------------------------------------------------------------
# value estimator


def init_value_params(rng, emb_dim, cells=20, scale=0.05):
    p = {}
    p.update(nn.init_lstm(rng, emb_dim, cells, scale, "val.fwd."))
    p.update(nn.init_lstm(rng, emb_dim, cells, scale, "val.bwd."))
    p.update(nn.init_lstm(rng, 2 * cells + 1, cells, scale, "val.comb."))
    p["val.out.W"] = nn.uniform(rng, (cells,), scale)
    p["val.out.b"] = np.zeros(1)
    return p


VALUE_KEYS = (
    "val.fwd.W", "val.fwd.b", "val.bwd.W", "val.bwd.b",
    "val.comb.W", "val.comb.b", "val.out.W", "val.out.b",
)


def value_forward(vp, emb, ids, mask, keep=False):
    """Predicted episode cost per decision step, in per-word units.

    A bidirectional LSTM over the word embeddings summarizes the whole
    sequence at every position; a forward LSTM reads those summaries
    together with omega_{i-1}, so the output at step i sees all of ``w``
    but only the mask prefix omega_1..omega_{i-1}. Multiply by N to get
    the cost scale.
    """
    ids = np.asarray(ids, dtype=np.int64)
    B, N = ids.shape
    xs = [emb[ids[:, i]] for i in range(N)]
    f_hs, f_c = nn.lstm_run(vp["val.fwd.W"], vp["val.fwd.b"], xs)
    b_hs, b_c = nn.lstm_run(vp["val.bwd.W"], vp["val.bwd.b"], xs[::-1])
    b_hs = b_hs[::-1]
    prev = np.zeros((B, N))
    prev[:, 1:] = np.asarray(mask, dtype=np.float64)[:, :-1]
    comb_in = [np.concatenate([f_hs[i], b_hs[i], prev[:, i : i + 1]], axis=1) for i in range(N)]
    g_hs, g_c = nn.lstm_run(vp["val.comb.W"], vp["val.comb.b"], comb_in)
    out = np.stack([h @ vp["val.out.W"] for h in g_hs], axis=1) + vp["val.out.b"][0]
    cache = (f_c, b_c, g_hs, g_c) if keep else None
    return out, cache


def value_backward(vp, dout, cache):
    f_c, b_c, g_hs, g_c = cache
    N = dout.shape[1]
    cells = vp["val.out.W"].shape[0]
    grads = nn.zeros_like(vp, VALUE_KEYS)
    grads["val.out.b"] += dout.sum()
    dg = []
    for i in range(N):
        grads["val.out.W"] += g_hs[i].T @ dout[:, i]
        dg.append(np.outer(dout[:, i], vp["val.out.W"]))
    dcomb, _, _ = nn.lstm_run_backward(vp["val.comb.W"], dg, g_c, grads["val.comb.W"], grads["val.comb.b"])
    df = [d[:, :cells] for d in dcomb]
    db = [d[:, cells : 2 * cells] for d in dcomb][::-1]
    nn.lstm_run_backward(vp["val.fwd.W"], df, f_c, grads["val.fwd.W"], grads["val.fwd.b"])
    nn.lstm_run_backward(vp["val.bwd.W"], db, b_c, grads["val.bwd.W"], grads["val.bwd.b"])
    return grads


def value_estimate(vp, emb, ids, mask):
    """Expected total cost (L + alpha * |omega|) before each decision, cost units."""
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    out, _ = value_forward(vp, emb, ids, np.atleast_2d(mask))
    return out * ids.shape[1]


def value_regression_grads(vp, emb, ids, mask, costs):
    """Squared error of per-word predictions against ``costs / N``, summed over steps and batch."""
    ids = np.asarray(ids, dtype=np.int64)
    N = ids.shape[1]
    out, cache = value_forward(vp, emb, ids, mask, keep=True)
    resid = out - np.asarray(costs, dtype=np.float64)[:, None] / N
    return 0.5 * float(np.sum(resid * resid)), value_backward(vp, resid, cache)


# --------------------------------------------------------------------------
# phase 2


@dataclass
class Episodes:
    mask: np.ndarray
    costs: np.ndarray  # L + alpha * |omega| per sequence
    losses: np.ndarray
    logits: np.ndarray  # attention logits (B, N)
    att_cache: list


def run_episodes(model: NeatModel, ids, alpha, rng):
    """Sample masks from the attention policy and score them."""
    p = model.params
    ids = np.asarray(ids, dtype=np.int64)
    rd = run_reader(p, ids, rng=rng, keep_attention=True)
    dc = run_decoder(p, ids, rd.hs[-1], rd.cs[-1], mode=model.config.decoder_mode)
    losses = rd.nll.sum(axis=1) + dc.nll.sum(axis=1)
    costs = losses + alpha * rd.mask.sum(axis=1)
    return Episodes(rd.mask, costs, losses, rd.att_logits, rd.att_cache)


def policy_logit_coefficients(ep: Episodes, baseline, gamma):
    """d(estimate)/d(attention logit) per sequence and step.

    ``(C - U_i) * (omega_i - p_i)`` is the score-function term; the entropy
    bonus contributes ``-gamma * dH/dz = gamma * z * p * (1 - p)``.
    """
    z = ep.logits
    pz = nn.sigmoid(z)
    adv = ep.costs[:, None] - (0.0 if baseline is None else baseline)
    return adv * (ep.mask - pz) + gamma * z * pz * (1.0 - pz)


def attention_gradient(model: NeatModel, ep: Episodes, coef):
    """Sum over sequences and steps of ``coef * d logit / d theta_A``."""
    grads = nn.zeros_like(model.params, ATTENTION_KEYS)
    for i, (a_in, hid) in enumerate(ep.att_cache):
        attention_backward(model.params, a_in, hid, coef[:, i], grads)
    return grads


def per_sample_attention_gradients(model: NeatModel, ep: Episodes, coef):
    """One flattened gradient per sequence, shape (B, |theta_A|), keys in ATTENTION_KEYS order."""
    p = model.params
    B = coef.shape[0]
    parts = {k: np.zeros((B,) + p[k].shape) for k in ATTENTION_KEYS}
    for i, (a_in, hid) in enumerate(ep.att_cache):
        dz = coef[:, i]
        parts["att.w2"] += hid * dz[:, None]
        parts["att.b2"] += dz[:, None]
        dpre = np.outer(dz, p["att.w2"]) * (1.0 - hid * hid)
        parts["att.W1"] += a_in[:, :, None] * dpre[:, None, :]
        parts["att.b1"] += dpre
    return np.concatenate([parts[k].reshape(B, -1) for k in ATTENTION_KEYS], axis=1)


def reinforce_update(model: NeatModel, vparams, ids, config: TrainConfig, rng, update_value=True):
    """One policy-gradient step on the attention network (and the baseline).

    Reader and decoder parameters are not touched. Sequences whose cost is
    not finite are dropped. Returns a stats dict.
    """
    ids = np.asarray(ids, dtype=np.int64)
    ep = run_episodes(model, ids, config.alpha, rng)
    ok = np.isfinite(ep.costs)
    skipped = int((~ok).sum())
    if skipped:
        log.warning("skipping %d episodes with non-finite cost", skipped)
        if not ok.any():
            return {"skipped": skipped}
        ids = ids[ok]
        ep = Episodes(ep.mask[ok], ep.costs[ok], ep.losses[ok], ep.logits[ok],
                      [(a[ok], h[ok]) for a, h in ep.att_cache])
    B, N = ids.shape
    emb = model.params["emb"]
    baseline = None
    if vparams is not None:
        baseline = value_estimate(vparams, emb, ids, ep.mask)
    coef = policy_logit_coefficients(ep, baseline, config.gamma)
    grads = attention_gradient(model, ep, coef / B)
    norm = nn.sgd_update(model.params, grads, config.lr_attention, config.clip)
    value_loss = None
    if vparams is not None and update_value:
        value_loss, vgrads = value_regression_grads(vparams, emb, ids, ep.mask, ep.costs)
        for g in vgrads.values():
            g /= B
        nn.sgd_update(vparams, vgrads, config.lr_value, config.clip)
        value_loss /= B * N
    pz = nn.sigmoid(ep.logits)
    return {
        "mean_cost": float(ep.costs.mean()),
        "mean_loss": float(ep.losses.mean()),
        "fixation_rate": float(ep.mask.mean()),
        "entropy": float(_entropy_from_logit(ep.logits).mean()),
        "mean_prob": float(pz.mean()),
        "grad_norm": norm,
        "value_loss": value_loss,
        "skipped": skipped,
    }


def calibrate_value_bias(model: NeatModel, vparams, ids, alpha, rng):
    """Set the baseline's output bias to the mean per-word cost of sampled episodes.

    Episode costs are O(N log V); starting the regression there saves
    thousands of clipped SGD steps.
    """
    ep = run_episodes(model, ids, alpha, rng)
    vparams["val.out.b"][0] = float(np.mean(ep.costs)) / ids.shape[1]


def train_phase2(model: NeatModel, data, config: TrainConfig, vparams=None, rng=None, logger=None,
                 on_epoch=None):
    """Train the attention network with the reader and decoder frozen.

    Returns ``(vparams, history)``; history holds per-epoch mean stats.
    """
    config.validate()
    data = np.asarray(data, dtype=np.int64)
    if len(data) == 0:
        raise ValueError("empty training corpus")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if vparams is None:
        vparams = init_value_params(rng, model.params["emb"].shape[1], config.value_cells,
                                    model.config.init_scale)
        calibrate_value_bias(model, vparams, data[: max(config.batch_size_attention, 64)], config.alpha, rng)
    history = []
    for epoch in range(config.epochs_attention):
        acc = {}
        n = 0
        for bi, idx in enumerate(_batches(len(data), config.batch_size_attention, rng)):
            stats = reinforce_update(model, vparams, data[idx], config, rng)
            if "mean_cost" not in stats:
                continue
            for k in ("mean_cost", "fixation_rate", "entropy", "value_loss"):
                acc[k] = acc.get(k, 0.0) + stats[k]
            n += 1
            if logger is not None:
                logger.record(
                    phase="attention", epoch=epoch, batch=bi, mean_cost=stats["mean_cost"],
                    fixation_rate=stats["fixation_rate"], entropy=stats["entropy"],
                )
        summary = {k: v / max(n, 1) for k, v in acc.items()}
        history.append(summary)
        log.info("phase 2 epoch %d: %s", epoch, summary)
        if on_epoch is not None:
            on_epoch(epoch, summary)
    return vparams, history


def objective_estimate(model: NeatModel, data, alpha, rng, samples=1):
    """Monte-Carlo estimate of E[L + alpha |omega|]: ``(mean, standard error)``."""
    data = np.asarray(data, dtype=np.int64)
    costs = np.concatenate(
        [run_episodes(model, data, alpha, rng).costs for _ in range(samples)]
    )
    se = float(costs.std(ddof=1) / math.sqrt(len(costs))) if len(costs) > 1 else float("nan")
    return float(costs.mean()), se


class JsonLineLogger:
    """Writes one JSON object per line; keys are sorted so runs diff cleanly."""

    def __init__(self, path=None, echo=None):
        self.fh = open(path, "w", encoding="utf-8") if path else None
        self.echo = echo

    def record(self, **fields):
        line = json.dumps(fields, sort_keys=True)
        if self.fh:
            self.fh.write(line + "\n")
        if self.echo:
            self.echo(line)

    def close(self):
        if self.fh:
            self.fh.close()
            self.fh = None
