"""Measurements against eye-tracking data: perplexities, fixation-sequence
likelihood, accuracy/F1, reading-time regressions, correlations, PoS
tables, successive-fixation statistics and heatmaps.

Masks with missing human decisions use ``-1`` for "missing".
"""
from __future__ import annotations

import html
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from . import nn
from .corpus import UNIVERSAL_TAGS
from .model import NeatModel, forced_attention_probs

MISSING = -1


class EvaluationError(ValueError):
    pass


# --------------------------------------------------------------------------
# perplexities


def perplexity(nlls):
    """``exp(mean negative log-likelihood)`` in nats."""
    nlls = np.asarray(nlls, dtype=np.float64).ravel()
    if nlls.size == 0:
        raise EvaluationError("perplexity of an empty list")
    if not np.all(np.isfinite(nlls)):
        raise EvaluationError("non-finite negative log-likelihood")
    return float(np.exp(nlls.mean()))


class ConstantPolicy:
    """Context-free Bernoulli(p) fixation policy."""

    def __init__(self, p):
        self.p = float(p)

    def decision_probs(self, ids, mask):
        return np.full(np.shape(ids), self.p)


class PerWordPolicy:
    """Fixation probability looked up per token id (context-free)."""

    def __init__(self, rates, default=0.5):
        self.rates = dict(rates)
        self.default = default

    def decision_probs(self, ids, mask):
        ids = np.asarray(ids)
        return np.vectorize(lambda t: self.rates.get(int(t), self.default), otypes=[float])(ids)


class NeatPolicy:
    """The attention network, driven along a given decision prefix."""

    def __init__(self, model: NeatModel):
        self.model = model

    def decision_probs(self, ids, mask):
        return forced_attention_probs(self.model, ids, mask)


def fixation_nlls(policy, ids, human, include=None):
    """Per-decision ``-log P(omega_i = human_i | human prefix, w)`` for non-missing decisions.

    Missing prefix decisions are driven as fixations; ``include`` (bool,
    same shape) restricts which decisions are scored.
    """
    ids = np.atleast_2d(ids)
    human = np.atleast_2d(np.asarray(human))
    drive = np.where(human == MISSING, 1, human).astype(bool)
    p = np.atleast_2d(policy.decision_probs(ids, drive))
    ok = human != MISSING
    if include is not None:
        ok &= np.atleast_2d(include)
    with np.errstate(divide="ignore"):
        ll = np.where(human == 1, np.log(p), np.log1p(-p))
    return -ll[ok]


def fixation_likelihood_ppl(policy, ids, human_masks, include=None):
    """Perplexity of human fixation sequences under ``policy``, per decision.

    ``human_masks`` is a list (one per reader) of (S, N) arrays with -1 for
    missing decisions.
    """
    nlls = np.concatenate([fixation_nlls(policy, ids, h, include) for h in human_masks])
    return perplexity(nlls)


# --------------------------------------------------------------------------
# classification scores


def _f1(tp, fp, fn):
    denom = 2 * tp + fp + fn
    return 1.0 if denom == 0 else 2 * tp / denom


def accuracy_f1(pred, gold):
    """``(accuracy, F1 with fixation positive, F1 with skip positive)``."""
    pred = np.asarray(pred).ravel().astype(np.int64)
    gold = np.asarray(gold).ravel().astype(np.int64)
    if pred.shape != gold.shape:
        raise EvaluationError("prediction and gold differ in length")
    if pred.size == 0:
        raise EvaluationError("accuracy of an empty sequence")
    tp = int(np.sum((pred == 1) & (gold == 1)))
    tn = int(np.sum((pred == 0) & (gold == 0)))
    fp = int(np.sum((pred == 1) & (gold == 0)))
    fn = int(np.sum((pred == 0) & (gold == 1)))
    acc = (tp + tn) / pred.size
    return acc, _f1(tp, fp, fn), _f1(tn, fn, fp)


def accuracy_f1_per_reader(pred, human_masks, include=None):
    """Mean of :func:`accuracy_f1` over readers, each against its non-missing decisions."""
    rows = []
    pred = np.asarray(pred)
    for h in human_masks:
        ok = h != MISSING
        if include is not None:
            ok &= include
        if ok.any():
            rows.append(accuracy_f1(pred[ok], h[ok]))
    if not rows:
        raise EvaluationError("no reader has usable decisions")
    return tuple(float(np.mean(c)) for c in zip(*rows))


# --------------------------------------------------------------------------
# regression


@dataclass
class OLSResult:
    names: list
    coef: np.ndarray
    se: np.ndarray
    t: np.ndarray
    loglik: float
    sigma2: float  # maximum-likelihood residual variance
    n: int

    def as_dict(self):
        return {
            name: {"coef": _num(c), "se": _num(s), "t": _num(t)}
            for name, c, s, t in zip(self.names, self.coef, self.se, self.t)
        }


def _design(X, names=None):
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    n, k = X.shape
    names = [f"x{j}" for j in range(k)] if names is None else list(names)
    return np.column_stack([np.ones(n), X]), ["(Intercept)"] + names


def _check_rank(D, names):
    rank = np.linalg.matrix_rank(D)
    if rank == D.shape[1]:
        return
    kept, bad = [], []
    for j in range(D.shape[1]):
        if np.linalg.matrix_rank(D[:, kept + [j]]) == len(kept) + 1:
            kept.append(j)
        else:
            bad.append(names[j])
    raise EvaluationError(f"design matrix is rank deficient; collinear columns: {bad}")


def ols_regression(y, X, names=None) -> OLSResult:
    """Least squares with an intercept; Gaussian log-likelihood at the ML variance."""
    y = np.asarray(y, dtype=np.float64)
    D, names = _design(X if np.size(X) else np.empty((len(y), 0)), names)
    n, k = D.shape
    if n < k + 2:
        raise EvaluationError(f"need at least {k + 2} rows for {k} coefficients, got {n}")
    if not (np.all(np.isfinite(y)) and np.all(np.isfinite(D))):
        raise EvaluationError("missing or non-finite values in regression data")
    _check_rank(D, names)
    Q, R = np.linalg.qr(D)
    coef = np.linalg.solve(R, Q.T @ y)
    resid = y - D @ coef
    rss = float(resid @ resid)
    Rinv = np.linalg.inv(R)
    s2 = rss / (n - k)
    se = np.sqrt(s2 * np.sum(Rinv * Rinv, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        t = coef / se
    sigma2 = rss / n
    loglik = math.inf if sigma2 == 0 else -0.5 * n * (math.log(2 * math.pi * sigma2) + 1)
    return OLSResult(names, coef, se, t, loglik, sigma2, n)


def deviance(model_ll, baseline_ll):
    """``-2 * (baseline log-likelihood - model log-likelihood)``; positive when the model fits better."""
    return -2.0 * (baseline_ll - model_ll)


def residualize(x, baseline):
    """``x`` minus its least-squares projection on the baseline predictors plus intercept."""
    x = np.asarray(x, dtype=np.float64)
    D, names = _design(baseline)
    _check_rank(D, names)
    coef, *_ = np.linalg.lstsq(D, x, rcond=None)
    return x - D @ coef


# --------------------------------------------------------------------------
# correlations and context dependence


def correlations(a, b):
    """``(Pearson r, Spearman rho)``; ``None`` entries when a variance is zero."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise EvaluationError("correlations need two equal-length vectors")
    if a.size < 3:
        raise EvaluationError("correlations need at least 3 points")

    def pearson(u, v):
        u = u - u.mean()
        v = v - v.mean()
        denom = math.sqrt(float(u @ u) * float(v @ v))
        return None if denom == 0 else float(u @ v) / denom

    return pearson(a, b), pearson(rankdata(a), rankdata(b))


def conditional_fixation_ratio(masks):
    """``P(omega_i = 1 | omega_{i-1} = 1) / P(omega_i = 1)`` from pooled adjacent pairs.

    ``masks`` is an iterable of 1-D or 2-D arrays (rows are sequences);
    pairs involving a missing decision are ignored. The marginal is taken
    over the second element of the same pairs. Returns ``None`` when no
    pair has a fixated first element.
    """
    prev_fix = both = cur_fix = pairs = 0
    for m in masks:
        m = np.atleast_2d(np.asarray(m))
        a, b = m[:, :-1], m[:, 1:]
        ok = (a != MISSING) & (b != MISSING)
        pairs += int(ok.sum())
        prev_fix += int((ok & (a == 1)).sum())
        both += int((ok & (a == 1) & (b == 1)).sum())
        cur_fix += int((ok & (b == 1)).sum())
    if prev_fix == 0 or cur_fix == 0:
        return None
    return (both / prev_fix) / (cur_fix / pairs)


# --------------------------------------------------------------------------
# parts of speech


@dataclass
class PosTable:
    tags: list
    percent: dict  # column -> {tag: percent}
    ranks: dict  # column -> {tag: rank}
    stats: dict = field(default_factory=dict)  # column -> {"spearman", "pearson", "mse"}

    def as_dict(self):
        return {"tags": self.tags, "percent": self.percent, "ranks": self.ranks, "stats": self.stats}


def pos_table(columns, tags, reference=None, skip_tags=(".",)):
    """Mean fixation probability (percent) per tag for each named column.

    ``columns`` maps a name to per-token values (probabilities or 0/1
    decisions). When ``reference`` names one of the columns, the others get
    Spearman, Pearson and mean squared error (percent units) against it.
    """
    tags = list(tags)
    unknown = sorted({t for t in tags if t not in UNIVERSAL_TAGS})
    if unknown:
        raise EvaluationError(f"unknown PoS tags: {unknown}")
    present = [t for t in UNIVERSAL_TAGS if t in set(tags) and t not in skip_tags]
    tag_arr = np.array(tags)
    out = PosTable(present, {}, {})
    for name, vals in columns.items():
        vals = np.asarray(vals, dtype=np.float64)
        pct = {t: 100.0 * float(vals[tag_arr == t].mean()) for t in present}
        out.percent[name] = pct
        r = rankdata([-pct[t] for t in present], method="min")
        out.ranks[name] = {t: int(k) for t, k in zip(present, r)}
    if reference is not None:
        ref = np.array([out.percent[reference][t] for t in present])
        for name in columns:
            if name == reference:
                continue
            col = np.array([out.percent[name][t] for t in present])
            mse = float(np.mean((col - ref) ** 2))
            if len(present) >= 3:
                pr, sp = correlations(col, ref)
            else:
                pr = sp = None
            out.stats[name] = {"spearman": sp, "pearson": pr, "mse": mse}
    return out


# --------------------------------------------------------------------------
# heatmap


def heat_bin(prob, bins=21):
    return int(round(float(np.clip(prob, 0.0, 1.0)) * (bins - 1)))


def bin_color(k, bins=21):
    """Blue (low) to red (high) through magenta, as ``rgb()`` text."""
    half = (bins - 1) / 2
    red = min(1.0, k / half)
    blue = 1.0 if k <= half else 1.0 - (k - half) / half
    return f"rgb({round(255 * red)},{round(255 * 0.2)},{round(255 * blue)})"


def emit_heatmap(tokens, probs, path, excluded=None, title="fixation probabilities"):
    """Write a standalone HTML page colouring each word by its probability."""
    if len(tokens) != len(probs):
        raise EvaluationError("tokens and probabilities differ in length")
    excluded = [False] * len(tokens) if excluded is None else list(excluded)
    spans = []
    for tok, p, ex in zip(tokens, probs, excluded):
        word = html.escape(tok)
        if ex or p is None or (isinstance(p, float) and math.isnan(p)):
            spans.append(f'<span class="w">{word}</span>')
        else:
            k = heat_bin(p)
            spans.append(
                f'<span class="w b{k}" style="background:{bin_color(k)}" '
                f'title="{float(p):.3f}">{word}</span>'
            )
    page = (
        "<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\">"
        f"<title>{html.escape(title)}</title>"
        "<style>body{font-family:serif;line-height:2}.w{padding:1px 3px;margin:1px}</style>"
        "</head><body>\n<p>" + " ".join(spans) + "</p>\n</body></html>\n"
    )
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(page)


# --------------------------------------------------------------------------
# report


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else None


def clean_json(obj):
    """Replace non-finite floats by ``None`` and numpy scalars by Python ones."""
    if isinstance(obj, dict):
        return {str(k): clean_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean_json(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


@dataclass
class EvalReport:
    lm_perplexity: float
    reconstruction_perplexity: float
    fixation_rate: float
    fixation_likelihood_ppl: float | None
    accuracy: float | None
    f1_fix: float | None
    f1_skip: float | None
    intrinsic: dict = field(default_factory=dict)
    fixation_likelihood: dict = field(default_factory=dict)
    prediction: dict = field(default_factory=dict)
    regression: dict = field(default_factory=dict)
    correlations: dict = field(default_factory=dict)
    pos: dict = field(default_factory=dict)
    conditional_fixation_ratio: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def to_dict(self):
        return clean_json(self.__dict__)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_text(self):
        def f(x, fmt="{:.3f}"):
            return "-" if x is None else fmt.format(x)

        lines = ["Language modeling / reconstruction perplexity"]
        lines.append(f"{'condition':<22}{'LM':>10}{'recon':>10}{'rate':>8}")
        for name, row in self.intrinsic.items():
            lines.append(
                f"{name:<22}{f(row.get('lm'), '{:.2f}'):>10}{f(row.get('reconstruction'), '{:.2f}'):>10}"
                f"{f(row.get('rate')):>8}"
            )
        lines += ["", "Fixation-sequence perplexity"]
        for name, v in self.fixation_likelihood.items():
            lines.append(f"{name:<22}{f(v):>10}")
        lines += ["", f"{'prediction':<22}{'acc':>8}{'F1 fix':>8}{'F1 skip':>8}"]
        for name, row in self.prediction.items():
            lines.append(
                f"{name:<22}{f(row.get('accuracy')):>8}{f(row.get('f1_fix')):>8}{f(row.get('f1_skip')):>8}"
            )
        if self.regression:
            lines += ["", "First-pass duration regression (fixed effects OLS)"]
            for name, v in self.regression.get("deviance", {}).items():
                lines.append(f"deviance {name:<22}{f(v, '{:.1f}'):>10}")
        if self.correlations:
            lines += ["", "Correlations (Pearson)"]
            for who, row in self.correlations.items():
                for pred, v in row.items():
                    lines.append(f"{who:<8}{pred:<24}{f(v.get('pearson')):>8}")
        if self.conditional_fixation_ratio:
            lines += ["", "P(fix | previous fixated) / P(fix)"]
            for name, v in self.conditional_fixation_ratio.items():
                lines.append(f"{name:<22}{f(v):>10}")
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines) + "\n"


REPORT_SCHEMA = {
    "type": "object",
    "required": [
        "lm_perplexity", "reconstruction_perplexity", "fixation_rate",
        "fixation_likelihood_ppl", "accuracy", "f1_fix", "f1_skip",
        "intrinsic", "fixation_likelihood", "prediction", "regression",
        "correlations", "pos", "conditional_fixation_ratio", "notes", "meta",
    ],
    "properties": {
        "lm_perplexity": {"type": "number", "minimum": 1},
        "reconstruction_perplexity": {"type": "number", "minimum": 1},
        "fixation_rate": {"type": "number", "minimum": 0, "maximum": 1},
        "fixation_likelihood_ppl": {"type": ["number", "null"], "minimum": 1},
        "accuracy": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "f1_fix": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "f1_skip": {"type": ["number", "null"], "minimum": 0, "maximum": 1},
        "intrinsic": {
            "type": "object",
            "additionalProperties": {
                "type": "object",
                "required": ["lm", "reconstruction", "rate"],
            },
        },
        "fixation_likelihood": {"type": "object"},
        "prediction": {"type": "object"},
        "regression": {"type": "object"},
        "correlations": {"type": "object"},
        "pos": {"type": "object"},
        "conditional_fixation_ratio": {"type": "object"},
        "notes": {"type": "array", "items": {"type": "string"}},
        "meta": {"type": "object", "required": ["seed", "config_hash"]},
    },
}


def mask_perplexities(model: NeatModel, ids, mask):
    """``(LM perplexity, reconstruction perplexity)`` with the reader following ``mask``."""
    from .model import sequence_losses

    _, rd, dc = sequence_losses(model, ids, mask)
    return perplexity(rd.nll), perplexity(dc.nll)


__all__ = [
    "perplexity", "fixation_likelihood_ppl", "accuracy_f1", "ols_regression", "deviance",
    "residualize", "correlations", "conditional_fixation_ratio", "pos_table", "emit_heatmap",
    "EvalReport", "ConstantPolicy", "PerWordPolicy", "NeatPolicy",
]
