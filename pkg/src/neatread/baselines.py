"""Comparison attention policies: random and full attention, score thresholds,
and the rescale-then-threshold rule that turns fixation probabilities into
a single predicted sequence.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np

from .model import FixationMask

log = logging.getLogger(__name__)

HUMAN_DEV_RATE = 0.62

# rare, long and surprising words get fixated
DIRECTIONS = {"log_freq": "below", "length": "above", "surprisal": "above"}


def random_mask(n, p=HUMAN_DEV_RATE, rng=None) -> FixationMask:
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    rng = np.random.default_rng() if rng is None else rng
    omega = (rng.random(n) < p).astype(np.int64)
    return FixationMask(omega, np.full(n, float(p)))


def full_mask(n) -> FixationMask:
    return FixationMask(np.ones(n, dtype=np.int64), np.ones(n))


def _fixates(scores, direction, threshold):
    if direction == "above":
        return scores >= threshold
    if direction == "below":
        return scores <= threshold
    raise ValueError(f"direction must be 'above' or 'below', not {direction!r}")


def calibrate_threshold(scores, direction, target):
    """Threshold whose fixation rate on ``scores`` is closest to ``target``.

    Candidates are the observed values (a score equal to the threshold is
    fixated) plus one value past the far end that fixates nothing. Among
    equally close candidates the one fixating more wins.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise ValueError("no scores to calibrate on")
    if not 0.0 <= target <= 1.0:
        raise ValueError("target rate must lie in [0, 1]")
    if direction not in ("above", "below"):
        raise ValueError(f"direction must be 'above' or 'below', not {direction!r}")
    values = np.unique(scores)
    if len(values) == 1 and 0.0 < target < 1.0:
        warnings.warn("all scores identical: threshold predictor is degenerate", RuntimeWarning)
    n = scores.size
    s = np.sort(scores)
    if direction == "above":
        rates = (n - np.searchsorted(s, values, side="left")) / n
        nothing = np.inf
    else:
        rates = np.searchsorted(s, values, side="right") / n
        nothing = -np.inf
    cands = np.append(values, nothing)
    rates = np.append(rates, 0.0)
    gap = np.abs(rates - target)
    best = np.flatnonzero(gap <= gap.min() + 1e-15)
    return float(cands[best[np.argmax(rates[best])]])


@dataclass
class ThresholdPredictor:
    source: str  # "log_freq" | "length" | "surprisal"
    direction: str
    threshold: float

    @classmethod
    def fit(cls, source, scores, target, direction=None):
        direction = DIRECTIONS[source] if direction is None else direction
        return cls(source, direction, calibrate_threshold(scores, direction, target))

    def predict(self, scores):
        return _fixates(np.asarray(scores, dtype=np.float64), self.direction, self.threshold).astype(
            np.int64
        )


def rescale_factor(probs, target, tol=1e-12, max_iter=200):
    """Scalar ``r`` with ``mean(min(r * p, 1)) == target``, found by bisection."""
    probs = np.asarray(probs, dtype=np.float64)
    if np.any((probs < 0) | (probs > 1)):
        raise ValueError("probabilities must lie in [0, 1]")
    if not 0.0 < target < 1.0:
        raise ValueError("target must lie in (0, 1)")
    reachable = np.mean(probs > 0)
    if target > reachable + 1e-15:
        raise ValueError(
            f"target rate {target} unreachable: only {reachable:.4f} of probabilities are nonzero"
        )

    def mean_at(r):
        return float(np.mean(np.minimum(r * probs, 1.0)))

    if abs(mean_at(1.0) - target) <= tol:
        return 1.0
    lo, hi = 0.0, 1.0 / probs[probs > 0].min()
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        m = mean_at(mid)
        if abs(m - target) <= tol:
            return mid
        if m < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def rescale_probs(probs, target):
    """Scale probabilities (clipping at 1) so that their mean equals ``target``."""
    probs = np.asarray(probs, dtype=np.float64)
    r = rescale_factor(probs, target)
    return np.minimum(r * probs, 1.0)


def greedy_mask(probs):
    """Most likely decision per word: fixate iff the probability exceeds 0.5."""
    probs = np.asarray(probs, dtype=np.float64)
    return FixationMask((probs > 0.5).astype(np.int64), probs)
