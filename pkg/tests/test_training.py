import copy
import json
import math
from decimal import Decimal, localcontext

import numpy as np
import pytest

import toyworld
from conftest import tiny_model
from enumeration import (
    exact_gradient_fd,
    exact_objective,
    estimator_expectation,
)
from neatread import corpus, nn, training
from neatread.model import ATTENTION_KEYS, NeatModel, ModelConfig, run_reader, sequence_losses
from neatread.synthetic import cycle_tokens

SEQS = np.array([[2, 5, 3, 4], [4, 4, 2, 5], [3, 2, 5, 5]])


def keystone_model(seed=3):
    return tiny_model(vocab=6, N=4, H=2, d=2, A=2, scale=1.0, seed=seed)


# -------------------------------------------------------------------- entropy

def test_entropy_values():
    assert training.entropy(0.5) == pytest.approx(math.log(2), abs=1e-15)
    assert training.entropy(0.0) == 0.0 and training.entropy(1.0) == 0.0
    # independent evaluation at 40 significant digits
    with localcontext() as ctx:
        ctx.prec = 40
        p, q = Decimal("0.62"), Decimal("0.38")
        h = float(-(p * p.ln() + q * q.ln()))
    assert training.entropy(0.62) == pytest.approx(h, abs=1e-15)
    # the commonly quoted 0.66404 agrees to four decimals (exact value 0.6640641...)
    assert training.entropy(0.62) == pytest.approx(0.66404, abs=5e-5)
    np.testing.assert_allclose(training.entropy(np.array([0.3, 0.7])), 0.6108643020548935)
    with pytest.raises(ValueError):
        training.entropy(1.5)


def test_entropy_from_logit_matches(rng):
    z = rng.normal(size=50) * 5
    np.testing.assert_allclose(training._entropy_from_logit(z), training.entropy(nn.sigmoid(z)),
                               atol=1e-12)


# ---------------------------------------------------------------- value net

def test_value_gradients_match_finite_differences(rng):
    emb = rng.normal(size=(9, 3))
    vp = training.init_value_params(rng, 3, cells=4, scale=0.5)
    ids = rng.integers(0, 9, size=(3, 5))
    mask = rng.random(ids.shape) < 0.5
    costs = rng.normal(size=3) * 10

    def fn(p):
        return training.value_regression_grads(p, emb, ids, mask, costs)

    assert nn.grad_check(fn, vp) < 1e-5


def test_value_causality(rng):
    emb = rng.normal(size=(9, 3))
    vp = training.init_value_params(rng, 3, cells=5, scale=0.5)
    ids = rng.integers(0, 9, size=(1, 6))
    mask = rng.integers(0, 2, size=(1, 6))
    base = training.value_estimate(vp, emb, ids, mask)[0]
    for i in range(6):
        flipped = mask.copy()
        flipped[0, i:] = 1 - flipped[0, i:]
        out = training.value_estimate(vp, emb, ids, flipped)[0]
        # steps up to and including i only see omega_1..omega_{i-1}
        assert out[: i + 1].tobytes() == base[: i + 1].tobytes()
    other = ids.copy()
    other[0, -1] = (ids[0, -1] + 1) % 9
    assert training.value_estimate(vp, emb, other, mask)[0, 0] != base[0]


def test_value_converges_on_constant_cost():
    m = keystone_model()
    m.params["att.W1"][...] = 0
    m.params["att.w2"][...] = 0
    m.params["att.b2"][0] = 800.0  # always fixate
    ids = np.tile(SEQS[:1], (16, 1))
    vp = training.init_value_params(np.random.default_rng(0), 2, 20, 0.05)
    for step in range(400):
        ep = training.run_episodes(m, ids, 5.0, np.random.default_rng(step))
        _, g = training.value_regression_grads(vp, m.params["emb"], ids, ep.mask, ep.costs)
        for v in g.values():
            v /= len(ids)
        nn.sgd_update(vp, g, 0.05, 5.0)
    assert np.all(ep.costs == ep.costs[0])
    pred = training.value_estimate(vp, m.params["emb"], ids[:1], ep.mask[:1])[0]
    np.testing.assert_allclose(pred, ep.costs[0], rtol=0.05)


# ------------------------------------------------------------ policy gradient

def test_logit_coefficients_formula(rng):
    z = rng.normal(size=(3, 4))
    mask = rng.random((3, 4)) < 0.5
    costs = rng.normal(size=3) * 5
    U = rng.normal(size=(3, 4))
    ep = training.Episodes(mask, costs, costs, z, [])
    got = training.policy_logit_coefficients(ep, U, 2.0)
    p = 1 / (1 + np.exp(-z))
    # d/dz [log Bern(omega; p)] = omega - p; d/dz [-H(p)] = z p (1 - p)
    expect = (costs[:, None] - U) * (mask - p) + 2.0 * z * p * (1 - p)
    np.testing.assert_allclose(got, expect, atol=1e-12)


def test_entropy_term_is_gradient_of_negative_entropy(rng):
    z = rng.normal(size=6)
    eps = 1e-6
    num = -(training._entropy_from_logit(z + eps) - training._entropy_from_logit(z - eps)) / (2 * eps)
    ep = training.Episodes(np.zeros((1, 6), bool), np.zeros(1), np.zeros(1), z[None], [])
    coef = training.policy_logit_coefficients(ep, np.zeros((1, 6)), 1.0)
    # with zero advantage only the entropy part remains
    np.testing.assert_allclose(coef[0], num, atol=1e-8)


def test_per_sample_gradients_sum_to_batch_gradient(rng):
    m = keystone_model()
    ep = training.run_episodes(m, np.tile(SEQS, (4, 1)), 1.0, rng)
    coef = training.policy_logit_coefficients(ep, None, 0.5)
    per = training.per_sample_attention_gradients(m, ep, coef)
    g = training.attention_gradient(m, ep, coef)
    flat = np.concatenate([g[k].reshape(-1) for k in ATTENTION_KEYS])
    np.testing.assert_allclose(per.sum(axis=0), flat, atol=1e-12)


def test_estimator_expectation_is_exact_gradient():
    m = keystone_model()
    exact = exact_gradient_fd(m, SEQS, alpha=1.0)
    expect = estimator_expectation(m, SEQS, alpha=1.0)
    np.testing.assert_allclose(expect, exact, rtol=1e-5, atol=1e-8)


def test_sampled_estimator_within_noise_of_exact_gradient():
    m = keystone_model()
    exact = exact_gradient_fd(m, SEQS, alpha=1.0)
    data = np.tile(SEQS, (20000, 1))
    ep = training.run_episodes(m, data, 1.0, np.random.default_rng(11))
    g = training.per_sample_attention_gradients(m, ep, training.policy_logit_coefficients(ep, None, 0.0))
    se = g.std(axis=0, ddof=1) / math.sqrt(len(g))
    # 15 coordinates: 4.5 SE leaves a familywise false-alarm rate near 1e-4
    assert np.max(np.abs(g.mean(axis=0) - exact) / se) < 4.5


def test_baseline_leaves_expectation_unchanged():
    m = keystone_model()
    vp = training.init_value_params(np.random.default_rng(7), 2, cells=3, scale=1.0)
    vp["val.out.b"][0] = 4.0

    def causal(ids, mask):
        return training.value_estimate(vp, m.params["emb"], ids, mask)

    def peeking(ids, mask):  # uses omega_i itself: must bias the estimator
        return 10.0 * mask

    plain = estimator_expectation(m, SEQS, 1.0)
    with_u = estimator_expectation(m, SEQS, 1.0, causal)
    np.testing.assert_allclose(with_u, plain, atol=1e-12, rtol=1e-10)
    assert np.max(np.abs(estimator_expectation(m, SEQS, 1.0, peeking) - plain)) > 1e-3


def test_exact_objective_matches_monte_carlo():
    m = keystone_model()
    q = exact_objective(m, SEQS, 1.0)
    data = np.tile(SEQS, (20000, 1))
    mean, se = training.objective_estimate(m, data, 1.0, np.random.default_rng(0))
    assert abs(mean - q) < 3 * se


def test_objective_all_ones_is_exact():
    m = keystone_model()
    m.params["att.b2"][0] = 800.0
    m.params["att.w2"][...] = 0
    mean, _ = training.objective_estimate(m, SEQS, 2.0, np.random.default_rng(0), samples=3)
    losses, _, _ = sequence_losses(m, SEQS, np.ones(SEQS.shape, bool))
    assert mean == pytest.approx(losses.mean() + 2.0 * 4, abs=1e-12)


def test_objective_lower_bound(rng):
    m = keystone_model()
    ep = training.run_episodes(m, np.tile(SEQS, (50, 1)), 3.0, rng)
    assert np.all(ep.costs >= 3.0 * ep.mask.sum(axis=1))


def test_trained_baseline_reduces_variance():
    m = keystone_model()
    data = np.repeat(SEQS, 16, axis=0)
    vp = training.init_value_params(np.random.default_rng(0), 2, 20, 0.5)
    cfg = training.TrainConfig(alpha=1.0, gamma=0.0, lr_attention=0.0, lr_value=0.05)
    training.calibrate_value_bias(m, vp, data, 1.0, np.random.default_rng(1))
    rng = np.random.default_rng(2)
    before = copy.deepcopy(m.params)
    for _ in range(800):
        training.reinforce_update(m, vp, data, cfg, rng)
    for k in m.params:  # lr 0 keeps the policy fixed
        assert m.params[k].tobytes() == before[k].tobytes()
    big = np.repeat(SEQS, 5000, axis=0)
    ep = training.run_episodes(m, big, 1.0, np.random.default_rng(9))
    g0 = training.per_sample_attention_gradients(m, ep, training.policy_logit_coefficients(ep, None, 0))
    U = training.value_estimate(vp, m.params["emb"], big, ep.mask)
    g1 = training.per_sample_attention_gradients(m, ep, training.policy_logit_coefficients(ep, U, 0))
    assert np.all(g1.var(axis=0) < g0.var(axis=0))


@pytest.mark.filterwarnings("ignore:invalid value:RuntimeWarning")
def test_reinforce_skips_nonfinite_costs(caplog):
    m = keystone_model()
    m.params["reader_out.b"][5] = -np.inf  # word 5 gets zero probability
    data = np.tile(SEQS, (4, 1))  # every sequence contains word 5
    data[::2, :] = 2
    cfg = training.TrainConfig()
    stats = training.reinforce_update(m, None, data, cfg, np.random.default_rng(0))
    assert stats["skipped"] == 6
    assert "skipping 6 episodes" in caplog.text
    for k in ATTENTION_KEYS:
        assert np.all(np.isfinite(m.params[k]))


def test_phase2_freezes_reader_and_decoder():
    m = keystone_model()
    before = {k: m.params[k].copy() for k in m.lm_keys}
    data = np.tile(SEQS, (10, 1))
    training.train_phase2(m, data, training.TrainConfig(epochs_attention=2, batch_size_attention=8))
    for k in before:
        assert m.params[k].tobytes() == before[k].tobytes()


def test_phase2_reproducible():
    data = np.tile(SEQS, (10, 1))
    outs = []
    for _ in range(2):
        m = keystone_model()
        vp, _ = training.train_phase2(m, data, training.TrainConfig(epochs_attention=2, seed=5))
        outs.append((m.params, vp))
    for a, b in zip(outs[0], outs[1]):
        for k in a:
            assert a[k].tobytes() == b[k].tobytes()


# ----------------------------------------------------------------- phase 1

def test_phase1_leaves_attention_untouched():
    m = keystone_model()
    before = {k: m.params[k].copy() for k in ATTENTION_KEYS}
    training.train_phase1(m, np.tile(SEQS, (5, 1)), training.TrainConfig(epochs_lm=1))
    for k in before:
        assert m.params[k].tobytes() == before[k].tobytes()


def test_phase1_deterministic_cycle_is_learned():
    toks = cycle_tokens(2000, period=5)
    vocab = corpus.build_vocab(toks, 10)
    ids = vocab.encode(toks).reshape(-1, 10)
    cfg = ModelConfig(vocab_size=7, emb_dim=8, reader_cells=16, decoder_cells=16, att_hidden=4,
                      seq_len=10)
    m = NeatModel(cfg, seed=0)
    training.train_phase1(m, ids, training.TrainConfig(mask_rate=1.0, lr_lm=0.5, epochs_lm=15))
    _, rd, dc = sequence_losses(m, ids[:20], np.ones((20, 10), bool))
    assert math.exp(rd.nll.mean()) < 1.1


def _zipf_iid(n, V, rng):
    w = 1.0 / np.arange(1, V + 1) ** 1.1
    w /= w.sum()
    return rng.choice(V, size=n, p=w) + 2, w


def test_phase1_zero_rate_learns_unigram():
    rng = np.random.default_rng(0)
    tokens, w = _zipf_iid(16000, 12, rng)
    ids = tokens.reshape(-1, 8)
    cfg = ModelConfig(vocab_size=14, emb_dim=8, reader_cells=16, decoder_cells=16, att_hidden=4,
                      seq_len=8)
    m = NeatModel(cfg, seed=0)
    training.train_phase1(m, ids, training.TrainConfig(mask_rate=0.0, lr_lm=0.2, epochs_lm=3))
    test, _ = _zipf_iid(4000, 12, np.random.default_rng(1))
    test = test.reshape(-1, 8)
    _, rd, dc = sequence_losses(m, test, np.zeros(test.shape, bool))
    unigram = math.exp(-(w * np.log(w)).sum())
    assert math.exp(rd.nll.mean()) == pytest.approx(unigram, rel=0.10)
    assert math.exp(dc.nll.mean()) == pytest.approx(unigram, rel=0.10)


def test_phase1_heldout_loss_decreases():
    _, vocab, train, test, _ = toyworld.world()
    cfg = ModelConfig(vocab_size=len(vocab), emb_dim=16, reader_cells=32, decoder_cells=32,
                      att_hidden=8, seq_len=toyworld.N)
    m = NeatModel(cfg, seed=0)
    mask = np.random.default_rng(0).random(test[:300].shape) < 0.62
    held = [sequence_losses(m, test[:300], mask)[0].mean()]
    rng = np.random.default_rng(1)
    # four quarter-epochs make up the first epoch
    for part in np.array_split(train, 4):
        training.train_phase1(m, part, training.TrainConfig(epochs_lm=1, lr_lm=0.5), rng=rng)
        held.append(sequence_losses(m, test[:300], mask)[0].mean())
    assert all(a > b for a, b in zip(held, held[1:])), held


def test_phase1_divergence_is_reported():
    m = keystone_model()
    m.params["reader.W"][0, 0] = np.nan
    with pytest.raises(training.DivergenceError):
        training.train_phase1(m, SEQS, training.TrainConfig(epochs_lm=1))


def test_phase1_full_attention_reconstructs_better_than_it_predicts():
    m = toyworld.phase1_model()
    _, _, _, test, _ = toyworld.world()
    _, rd, dc = sequence_losses(m, test, np.ones(test.shape, bool))
    assert math.exp(dc.nll.mean()) < math.exp(rd.nll.mean())


def test_train_config_validation():
    with pytest.raises(nn.ConfigError):
        training.TrainConfig(alpha=-1).validate()
    with pytest.raises(nn.ConfigError):
        training.TrainConfig(mask_rate=1.5).validate()
    with pytest.raises(nn.ConfigError):
        training.TrainConfig(batch_size_attention=0).validate()
    with pytest.raises(ValueError):
        training.train_phase1(keystone_model(), np.zeros((0, 4), int), training.TrainConfig())


def test_json_line_logger(tmp_path):
    seen = []
    log = training.JsonLineLogger(tmp_path / "log.jsonl", echo=seen.append)
    log.record(epoch=0, batch=1, mean_cost=2.5)
    log.close()
    line = (tmp_path / "log.jsonl").read_text().strip()
    assert json.loads(line) == {"batch": 1, "epoch": 0, "mean_cost": 2.5}
    assert line == seen[0] and line.index("batch") < line.index("epoch")


# --------------------------------------------------------- trained toy model

@pytest.mark.slow
def test_frequent_words_fixated_less_than_rare():
    m, _, _ = toyworld.phase2_model(5.0, 5.0, 0)
    _, vocab, _, test, _ = toyworld.world()
    probs = run_reader(m.params, test, rng=np.random.default_rng(5)).att_probs
    present = [i for i in range(2, len(vocab)) if np.any(test == i)]
    frequent, rare = present[0], present[-1]
    assert probs[test == frequent].mean() < probs[test == rare].mean()


@pytest.mark.slow
def test_huge_alpha_drives_rate_to_zero():
    m, _, _ = toyworld.phase2_model(1000.0, 5.0, 0, epochs=3)
    _, _, _, test, _ = toyworld.world()
    rd = run_reader(m.params, test, rng=np.random.default_rng(5))
    assert rd.mask.mean() < 0.05
