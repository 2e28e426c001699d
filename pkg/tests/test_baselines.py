import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from neatread import baselines as B


def test_random_mask_extremes_and_default():
    assert B.random_mask(10, 1.0).omega.tolist() == [1] * 10
    assert B.random_mask(10, 0.0).omega.tolist() == [0] * 10
    assert B.HUMAN_DEV_RATE == 0.62
    m = B.random_mask(5, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(m.probs, 0.62)
    with pytest.raises(ValueError):
        B.random_mask(3, 1.2)


def test_random_mask_rate_and_reproducible():
    rng = np.random.default_rng(0)
    rates = [B.random_mask(50, 0.62, rng).rate for _ in range(100000)]
    assert abs(np.mean(rates) - 0.62) < 0.005
    a = B.random_mask(50, 0.62, np.random.default_rng(4)).omega
    b = B.random_mask(50, 0.62, np.random.default_rng(4)).omega
    assert a.tobytes() == b.tobytes()


def test_full_mask():
    m = B.full_mask(4)
    assert m.rate == 1.0 and m.probs.tolist() == [1.0] * 4


def test_calibrate_quantile():
    scores = np.arange(1, 101, dtype=float)
    t = B.calibrate_threshold(scores, "above", 0.25)
    assert t == 76.0  # 76..100 -> 25 fixations
    rate = B.ThresholdPredictor("x", "above", t).predict(scores).mean()
    assert abs(rate - 0.25) <= 1 / 100


def test_calibrate_target_one_and_zero():
    scores = np.array([3.0, 1.0, 2.0])
    t = B.calibrate_threshold(scores, "above", 1.0)
    assert t <= scores.min()
    assert B.ThresholdPredictor("x", "above", t).predict(scores).all()
    t = B.calibrate_threshold(scores, "below", 0.0)
    assert not B.ThresholdPredictor("x", "below", t).predict(scores).any()


def test_calibrate_degenerate_warns():
    with pytest.warns(RuntimeWarning, match="degenerate"):
        B.calibrate_threshold(np.ones(5), "above", 0.5)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        B.calibrate_threshold(np.ones(5), "above", 1.0)


def test_calibrate_errors():
    with pytest.raises(ValueError):
        B.calibrate_threshold([], "above", 0.5)
    with pytest.raises(ValueError):
        B.calibrate_threshold([1.0], "sideways", 0.5)


@pytest.mark.filterwarnings("ignore:all scores identical")
@given(st.lists(st.integers(0, 30), min_size=1, max_size=80), st.floats(0, 1),
       st.sampled_from(["above", "below"]))
def test_calibrate_within_one_datapoint(vals, target, direction):
    scores = np.array(vals, dtype=float)
    t = B.calibrate_threshold(scores, direction, target)
    rate = B.ThresholdPredictor("x", direction, t).predict(scores).mean()
    # best achievable rate given ties, brute force over all cut points
    cands = [0.0] + [float(np.mean(scores >= v if direction == "above" else scores <= v))
                     for v in np.unique(scores)]
    best = min(abs(c - target) for c in cands)
    assert abs(rate - target) == pytest.approx(best, abs=1e-12)
    if len(np.unique(scores)) == len(scores):
        assert abs(rate - target) <= 1 / len(scores) + 1e-12


def test_threshold_directions():
    assert B.ThresholdPredictor.fit("length", [1, 2, 9, 10], 0.5).direction == "above"
    p = B.ThresholdPredictor.fit("log_freq", [-1.0, -2.0, -9.0, -10.0], 0.5)
    assert p.predict([-1.0, -10.0]).tolist() == [0, 1]
    assert B.ThresholdPredictor.fit("surprisal", [1, 2], 0.5).direction == "above"


def test_rescale_closed_form():
    out = B.rescale_probs(np.full(8, 0.5), 0.62)
    assert B.rescale_factor(np.full(8, 0.5), 0.62) == pytest.approx(1.24, abs=1e-9)
    np.testing.assert_allclose(out, 0.62, atol=1e-9)


def test_rescale_identity():
    p = np.array([0.2, 0.6, 0.9, 0.3])
    assert B.rescale_factor(p, p.mean()) == 1.0
    np.testing.assert_array_equal(B.rescale_probs(p, p.mean()), p)


def test_rescale_with_clipping():
    out = B.rescale_probs(np.array([1.0, 0.1]), 0.9)
    assert out.mean() == pytest.approx(0.9, abs=1e-9)
    assert out[0] == 1.0 and out[1] == pytest.approx(0.8, abs=1e-9)


def test_rescale_errors():
    with pytest.raises(ValueError, match="unreachable"):
        B.rescale_probs(np.zeros(4), 0.5)
    with pytest.raises(ValueError):
        B.rescale_probs(np.array([0.5, 1.5]), 0.5)
    with pytest.raises(ValueError):
        B.rescale_probs(np.array([0.5]), 1.0)


@given(st.lists(st.floats(0.01, 1.0), min_size=2, max_size=40), st.floats(0.05, 0.95))
def test_rescale_properties(vals, target):
    p = np.array(vals)
    out = B.rescale_probs(p, target)
    assert out.mean() == pytest.approx(target, abs=1e-9)
    order = np.argsort(p, kind="stable")
    assert np.all(np.diff(out[order]) >= -1e-15)
    assert np.all((out >= 0) & (out <= 1))


def test_greedy_mask():
    assert B.greedy_mask([0.9, 0.2, 0.5]).omega.tolist() == [1, 0, 0]
    assert B.greedy_mask(np.ones(3)).omega.tolist() == [1, 1, 1]
    m = B.greedy_mask([0.7, 0.1, 0.51, 0.5])
    assert B.greedy_mask(m.omega).omega.tolist() == m.omega.tolist()
