"""The reading network: reader LSTM with next-word predictions, reconstructing
decoder, and the feed-forward attention policy that decides fixate/skip.

Everything is batched over a leading dimension ``B``; token ids come in as
an int array of shape (B, N). Single-sequence wrappers at the bottom of the
module accept 1-D arrays.

Indexing convention: ``hs[0]`` is the reader state after consuming the
begin-of-sequence symbol; the reader's prediction for word ``i`` (0-based)
is read off ``hs[i]``; consuming word ``i`` (or the skip vector) produces
``hs[i + 1]``. ``hs[N]`` conditions the decoder.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .corpus import BOS_ID
from .nn import ConfigError


@dataclass
class ModelConfig:
    vocab_size: int
    emb_dim: int = 32
    reader_cells: int = 64
    decoder_cells: int = 64
    att_hidden: int = 32
    seq_len: int = 20
    init_scale: float = 0.05
    skip_mode: str = "learned"  # "learned" | "zero"
    decoder_mode: str = "init"  # "init": h_N initializes the decoder state | "concat": h_N joins every input

    def validate(self):
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must include the reserved ids and at least one word")
        if self.skip_mode not in ("learned", "zero"):
            raise ConfigError(f"unknown skip_mode {self.skip_mode!r}")
        if self.decoder_mode not in ("init", "concat"):
            raise ConfigError(f"unknown decoder_mode {self.decoder_mode!r}")
        if self.decoder_mode == "init" and self.decoder_cells != self.reader_cells:
            raise ConfigError("decoder_mode 'init' needs decoder_cells == reader_cells")
        if self.seq_len < 2:
            raise ConfigError("seq_len must be >= 2")
        return self

    def to_dict(self):
        return asdict(self)


@dataclass
class FixationMask:
    """Binary decisions ``omega`` with the probability each was drawn from."""

    omega: np.ndarray
    probs: np.ndarray

    @property
    def rate(self):
        return float(np.mean(self.omega))


READER_KEYS = ("emb", "skip", "reader.W", "reader.b", "reader_out.W", "reader_out.b")
DECODER_KEYS = ("dec.W", "dec.b", "dec_out.W", "dec_out.b")
ATTENTION_KEYS = ("att.W1", "att.b1", "att.w2", "att.b2")


def init_params(config: ModelConfig, rng):
    config.validate()
    V, d, H = config.vocab_size, config.emb_dim, config.reader_cells
    Hd, A, s = config.decoder_cells, config.att_hidden, config.init_scale
    p = {"emb": nn.uniform(rng, (V, d), s)}
    p["skip"] = nn.uniform(rng, (d,), s) if config.skip_mode == "learned" else np.zeros(d)
    p.update(nn.init_lstm(rng, d, H, s, "reader."))
    p.update(nn.init_dense(rng, H, V, s, "reader_out."))
    dec_in = d if config.decoder_mode == "init" else d + H
    p.update(nn.init_lstm(rng, dec_in, Hd, s, "dec."))
    p.update(nn.init_dense(rng, Hd, V, s, "dec_out."))
    p["att.W1"] = nn.uniform(rng, (d + H + 1, A), s)
    p["att.b1"] = np.zeros(A)
    p["att.w2"] = nn.uniform(rng, (A,), s)
    p["att.b2"] = np.zeros(1)
    return p


class NeatModel:
    """Configuration plus a parameter dict; all computation lives in module functions."""

    def __init__(self, config: ModelConfig, params=None, seed=0):
        self.config = config.validate()
        self.params = init_params(config, np.random.default_rng(seed)) if params is None else params
        expected = set(READER_KEYS + DECODER_KEYS + ATTENTION_KEYS)
        missing = expected - set(self.params)
        if missing:
            raise ConfigError(f"parameters missing: {sorted(missing)}")

    @property
    def lm_keys(self):
        """Parameters trained in the first phase."""
        keys = READER_KEYS + DECODER_KEYS
        if self.config.skip_mode == "zero":
            keys = tuple(k for k in keys if k != "skip")
        return keys

    @property
    def attention_keys(self):
        return ATTENTION_KEYS

    def zero_attention(self):
        for k in ATTENTION_KEYS:
            self.params[k][...] = 0.0


# --------------------------------------------------------------------------
# attention network


def attention_inputs(params, word_ids, h_prev, logp_word):
    """Concatenate [embedding(w_i); h_{i-1}; log P_R(w_i)] for a batch."""
    return np.concatenate(
        [params["emb"][word_ids], h_prev, np.asarray(logp_word, dtype=np.float64)[:, None]],
        axis=1,
    )


def attention_forward(params, a_in):
    """Return ``(logit, hidden)``; the fixation probability is ``sigmoid(logit)``."""
    hid = np.tanh(a_in @ params["att.W1"] + params["att.b1"])
    z = hid @ params["att.w2"] + params["att.b2"][0]
    return z, hid


def attention_backward(params, a_in, hid, dz, grads):
    """Accumulate d(sum dz * logit)/d theta_A into ``grads``."""
    grads["att.w2"] += hid.T @ dz
    grads["att.b2"] += dz.sum()
    dpre = np.outer(dz, params["att.w2"]) * (1.0 - hid * hid)
    grads["att.W1"] += a_in.T @ dpre
    grads["att.b1"] += dpre.sum(axis=0)


def attention_prob(params, word_id, h_prev, logp_word):
    """Probability of fixating ``word_id`` given the previous reader state."""
    a_in = attention_inputs(params, np.array([word_id]), np.asarray(h_prev)[None, :], [logp_word])
    z, _ = attention_forward(params, a_in)
    return float(nn.sigmoid(z)[0])


# --------------------------------------------------------------------------
# reader


@dataclass
class ReaderPass:
    ids: np.ndarray
    mask: np.ndarray  # (B, N) bool, the omega actually used
    nll: np.ndarray  # (B, N) -log P_R(w_i | fixated prefix)
    hs: list  # N + 1 arrays (B, H)
    cs: list
    att_logits: np.ndarray | None = None  # (B, N)
    att_cache: list = field(default_factory=list)  # per step (a_in, hidden)
    step_caches: list = field(default_factory=list)  # BOS step first, then N steps
    dlogits: list = field(default_factory=list)  # per step softmax - onehot

    @property
    def att_probs(self):
        return None if self.att_logits is None else nn.sigmoid(self.att_logits)


def run_reader(params, ids, mask=None, rng=None, attend=False, keep=False, keep_attention=False):
    """Run the reader over ``ids``.

    With ``mask`` given, that omega is used (forced); the attention network
    is still evaluated when ``attend`` is set, giving the probability of
    each decision under the forced prefix. With ``mask=None`` each omega_i is
    sampled from the attention network using ``rng``.
    ``keep`` retains what backpropagation needs; ``keep_attention`` only the
    attention-network inputs the policy gradient needs.
    """
    ids = np.asarray(ids, dtype=np.int64)
    B, N = ids.shape
    sampling = mask is None
    if sampling:
        if rng is None:
            raise ValueError("sampling a mask needs an rng")
        attend = True
        mask = np.zeros((B, N), dtype=bool)
    else:
        mask = np.asarray(mask).astype(bool)
        if mask.shape != ids.shape:
            raise ValueError(f"mask shape {mask.shape} does not match sequence shape {ids.shape}")
    E, skip = params["emb"], params["skip"]
    W, b = params["reader.W"], params["reader.b"]
    Wo, bo = params["reader_out.W"], params["reader_out.b"]
    H = W.shape[1] // 4
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    h, c, cache = nn.lstm_forward(W, b, np.repeat(E[BOS_ID][None, :], B, axis=0), h, c)
    out = ReaderPass(ids, mask, np.empty((B, N)), [h], [c])
    if attend:
        out.att_logits = np.empty((B, N))
    if keep:
        out.step_caches.append(cache)
    for i in range(N):
        w = ids[:, i]
        loss, dlog = nn.softmax_xent_batch(h @ Wo + bo, w)
        out.nll[:, i] = loss
        if attend:
            a_in = attention_inputs(params, w, h, -loss)
            z, hid = attention_forward(params, a_in)
            out.att_logits[:, i] = z
            if keep or keep_attention:
                out.att_cache.append((a_in, hid))
            if sampling:
                mask[:, i] = rng.random(B) < nn.sigmoid(z)
        if keep:
            out.dlogits.append(dlog)
        x = np.where(mask[:, i : i + 1], E[w], skip[None, :])
        h, c, cache = nn.lstm_forward(W, b, x, h, c)
        out.hs.append(h)
        out.cs.append(c)
        if keep:
            out.step_caches.append(cache)
    return out


# --------------------------------------------------------------------------
# decoder


@dataclass
class DecoderPass:
    nll: np.ndarray
    hs: list
    caches: list = field(default_factory=list)
    dlogits: list = field(default_factory=list)


def _decoder_inputs(params, ids, i, h_final, mode):
    E = params["emb"]
    prev = np.full(ids.shape[0], BOS_ID) if i == 0 else ids[:, i - 1]
    x = E[prev]
    if mode == "concat":
        x = np.concatenate([x, h_final], axis=1)
    return x


def run_decoder(params, ids, h_final, c_final, mode="init", keep=False):
    """Teacher-forced reconstruction of ``ids`` conditioned on the reader's final state."""
    ids = np.asarray(ids, dtype=np.int64)
    B, N = ids.shape
    W, b = params["dec.W"], params["dec.b"]
    Wo, bo = params["dec_out.W"], params["dec_out.b"]
    Hd = W.shape[1] // 4
    if mode == "init":
        if h_final.shape[1] != Hd:
            raise ConfigError("decoder cells must match reader cells in 'init' mode")
        h, c = h_final, c_final
    else:
        h, c = np.zeros((B, Hd)), np.zeros((B, Hd))
    out = DecoderPass(np.empty((B, N)), [])
    for i in range(N):
        x = _decoder_inputs(params, ids, i, h_final, mode)
        h, c, cache = nn.lstm_forward(W, b, x, h, c)
        loss, dlog = nn.softmax_xent_batch(h @ Wo + bo, ids[:, i])
        out.nll[:, i] = loss
        out.hs.append(h)
        if keep:
            out.caches.append(cache)
            out.dlogits.append(dlog)
    return out


# --------------------------------------------------------------------------
# loss and gradients for the reader and decoder


def loss_and_grads(model: NeatModel, ids, mask):
    """Sequence loss under a fixed mask and its gradient w.r.t. the reader/decoder.

    Returns ``(losses, grads)``: ``losses`` has one summed loss per sequence;
    ``grads`` is the gradient of ``losses.sum()``.
    """
    p = model.params
    mode = model.config.decoder_mode
    ids = np.asarray(ids, dtype=np.int64)
    B, N = ids.shape
    rd = run_reader(p, ids, mask=mask, keep=True)
    hN, cN = rd.hs[-1], rd.cs[-1]
    dc = run_decoder(p, ids, hN, cN, mode=mode, keep=True)
    g = nn.zeros_like(p, model.lm_keys)
    g.setdefault("skip", np.zeros_like(p["skip"]))
    dE = np.zeros_like(p["emb"])

    # decoder
    Wd, Wdo = p["dec.W"], p["dec_out.W"]
    Hd = Wd.shape[1] // 4
    d = p["emb"].shape[1]
    dh = np.zeros((B, Hd))
    dcell = np.zeros((B, Hd))
    dh_final = np.zeros_like(hN)
    for i in range(N - 1, -1, -1):
        dlog = dc.dlogits[i]
        g["dec_out.W"] += dc.hs[i].T @ dlog
        g["dec_out.b"] += dlog.sum(axis=0)
        dh = dh + dlog @ Wdo.T
        dx, dh, dcell = nn.lstm_backward(Wd, dh, dcell, dc.caches[i], g["dec.W"], g["dec.b"])
        prev = np.full(B, BOS_ID) if i == 0 else ids[:, i - 1]
        np.add.at(dE, prev, dx[:, :d])
        if mode == "concat":
            dh_final += dx[:, d:]
    if mode == "init":
        dh_r, dc_r = dh + dh_final, dcell
    else:
        dh_r, dc_r = dh_final, np.zeros_like(cN)

    # reader
    Wr, Wro = p["reader.W"], p["reader_out.W"]
    for i in range(N - 1, -1, -1):
        dx, dh_r, dc_r = nn.lstm_backward(Wr, dh_r, dc_r, rd.step_caches[i + 1], g["reader.W"], g["reader.b"])
        m = rd.mask[:, i]
        np.add.at(dE, ids[m, i], dx[m])
        g["skip"] += dx[~m].sum(axis=0)
        dlog = rd.dlogits[i]
        g["reader_out.W"] += rd.hs[i].T @ dlog
        g["reader_out.b"] += dlog.sum(axis=0)
        dh_r = dh_r + dlog @ Wro.T
    dx, _, _ = nn.lstm_backward(Wr, dh_r, dc_r, rd.step_caches[0], g["reader.W"], g["reader.b"])
    dE[BOS_ID] += dx.sum(axis=0)
    g["emb"] = dE
    if model.config.skip_mode == "zero":
        del g["skip"]
    return rd.nll.sum(axis=1) + dc.nll.sum(axis=1), g


def sequence_losses(model: NeatModel, ids, mask):
    """Per-sequence loss: reader NLL plus decoder NLL summed over all positions."""
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    rd = run_reader(model.params, ids, mask=np.atleast_2d(mask))
    dc = run_decoder(model.params, ids, rd.hs[-1], rd.cs[-1], mode=model.config.decoder_mode)
    return rd.nll.sum(axis=1) + dc.nll.sum(axis=1), rd, dc


# --------------------------------------------------------------------------
# single-sequence operations


def reader_forward(model: NeatModel, seq, mask):
    """Reader states ``h_0..h_N`` and P_R distribution over the vocabulary for each word."""
    ids = np.asarray(getattr(seq, "ids", seq), dtype=np.int64)
    mask = np.asarray(mask)
    if mask.shape != ids.shape:
        raise ValueError(f"mask length {mask.shape} != sequence length {ids.shape}")
    rd = run_reader(model.params, ids[None, :], mask=mask[None, :])
    p = model.params
    hs = np.stack([h[0] for h in rd.hs])
    cs = np.stack([c[0] for c in rd.cs])
    logp = nn.log_softmax(hs[:-1] @ p["reader_out.W"] + p["reader_out.b"])
    return [nn.LstmState(h, c) for h, c in zip(hs, cs)], np.exp(logp)


def decoder_forward(model: NeatModel, h_final: nn.LstmState, seq):
    """P_Decoder distribution for each position given the reader's final state."""
    ids = np.asarray(getattr(seq, "ids", seq), dtype=np.int64)[None, :]
    p = model.params
    dc = run_decoder(
        p, ids, h_final.hidden[None, :], h_final.cell[None, :], mode=model.config.decoder_mode
    )
    hs = np.stack([h[0] for h in dc.hs])
    return np.exp(nn.log_softmax(hs @ p["dec_out.W"] + p["dec_out.b"]))


def sample_mask(model: NeatModel, seq, rng) -> FixationMask:
    """Sample omega word by word from the attention network."""
    ids = np.asarray(getattr(seq, "ids", seq), dtype=np.int64)
    rd = run_reader(model.params, ids[None, :], rng=rng)
    return FixationMask(rd.mask[0].astype(np.int64), rd.att_probs[0])


def surprisal(model: NeatModel, seq, mask):
    """-log P_R(w_i | fixated preceding words); full surprisal when the mask is all ones."""
    ids = np.asarray(getattr(seq, "ids", seq), dtype=np.int64)
    return run_reader(model.params, ids[None, :], mask=np.asarray(mask)[None, :]).nll[0]


def sequence_loss(model: NeatModel, seq, mask):
    ids = np.asarray(getattr(seq, "ids", seq), dtype=np.int64)
    losses, _, _ = sequence_losses(model, ids[None, :], np.asarray(mask)[None, :])
    return float(losses[0])


def forced_attention_probs(model: NeatModel, ids, mask):
    """P(omega_i = 1 | given prefix, w) at each position while the reader follows ``mask``."""
    ids = np.atleast_2d(np.asarray(ids, dtype=np.int64))
    rd = run_reader(model.params, ids, mask=np.atleast_2d(mask), attend=True)
    return rd.att_probs
