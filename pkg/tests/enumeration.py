"""Exact expectations over all 2^N masks for tiny models."""
import itertools

import numpy as np

from neatread import training
from neatread.model import ATTENTION_KEYS, forced_attention_probs, run_reader, sequence_losses


def all_masks(n):
    return np.array(list(itertools.product((0, 1), repeat=n)), dtype=bool)


def mask_probabilities(model, seq):
    """P(omega) for every mask of one sequence under the attention policy."""
    masks = all_masks(len(seq))
    ids = np.tile(seq, (len(masks), 1))
    p = forced_attention_probs(model, ids, masks)
    return masks, np.prod(np.where(masks, p, 1 - p), axis=1)


def exact_objective(model, seqs, alpha):
    """Q = mean over sequences of sum_omega P(omega) (L + alpha |omega|)."""
    total = 0.0
    for seq in seqs:
        masks, prob = mask_probabilities(model, seq)
        ids = np.tile(seq, (len(masks), 1))
        losses, _, _ = sequence_losses(model, ids, masks)
        total += float(prob @ (losses + alpha * masks.sum(axis=1)))
    return total / len(seqs)


def exact_gradient_fd(model, seqs, alpha, eps=1e-6):
    """Central differences of the exact objective w.r.t. the attention parameters."""
    out = []
    for k in ATTENTION_KEYS:
        flat = model.params[k].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            hi = exact_objective(model, seqs, alpha)
            flat[j] = orig - eps
            lo = exact_objective(model, seqs, alpha)
            flat[j] = orig
            out.append((hi - lo) / (2 * eps))
    return np.array(out)


def forced_episodes(model, seq, alpha):
    """Episodes for every mask of ``seq`` (as if each had been sampled)."""
    masks = all_masks(len(seq))
    ids = np.tile(seq, (len(masks), 1))
    rd = run_reader(model.params, ids, mask=masks, attend=True, keep_attention=True)
    losses, _, _ = sequence_losses(model, ids, masks)
    ep = training.Episodes(masks, losses + alpha * masks.sum(axis=1), losses, rd.att_logits,
                           rd.att_cache)
    return ids, ep


def estimator_expectation(model, seqs, alpha, baseline_fn=None, gamma=0.0):
    """Exact E[estimator] by weighting every mask's per-sample gradient with P(omega)."""
    total = 0.0
    for seq in seqs:
        ids, ep = forced_episodes(model, seq, alpha)
        _, prob = mask_probabilities(model, seq)
        U = None if baseline_fn is None else baseline_fn(ids, ep.mask)
        coef = training.policy_logit_coefficients(ep, U, gamma)
        g = training.per_sample_attention_gradients(model, ep, coef)
        total = total + prob @ g
    return total / len(seqs)
