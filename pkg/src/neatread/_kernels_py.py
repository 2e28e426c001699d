"""Pure numpy versions of the hot kernels (fallback when the extension is absent)."""
import numpy as np


def _sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def lstm_gates_forward(z, c_prev):
    """Apply gate nonlinearities to pre-activations ``z`` (B, 4H), order i, f, g, o.

    Returns ``(h, c, acts, tanh_c)``; ``acts`` holds the activated gates and
    is what :func:`lstm_gates_backward` needs together with ``c_prev``.
    """
    B, H4 = z.shape
    H = H4 // 4
    if c_prev.shape != (B, H) or H4 != 4 * H:
        raise ValueError("gate pre-activations and cell state disagree in shape")
    acts = np.empty_like(z)
    acts[:, : 2 * H] = _sigmoid(z[:, : 2 * H])
    acts[:, 2 * H : 3 * H] = np.tanh(z[:, 2 * H : 3 * H])
    acts[:, 3 * H :] = _sigmoid(z[:, 3 * H :])
    i, f, g, o = acts[:, :H], acts[:, H : 2 * H], acts[:, 2 * H : 3 * H], acts[:, 3 * H :]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, acts, tanh_c


def lstm_gates_backward(dh, dc, acts, c_prev, tanh_c):
    H = dh.shape[1]
    i, f, g, o = acts[:, :H], acts[:, H : 2 * H], acts[:, 2 * H : 3 * H], acts[:, 3 * H :]
    dct = dc + dh * o * (1.0 - tanh_c * tanh_c)
    dz = np.empty_like(acts)
    dz[:, :H] = dct * g * i * (1.0 - i)
    dz[:, H : 2 * H] = dct * c_prev * f * (1.0 - f)
    dz[:, 2 * H : 3 * H] = dct * i * (1.0 - g * g)
    dz[:, 3 * H :] = dh * tanh_c * o * (1.0 - o)
    return dz, dct * f


def softmax_xent(logits, targets):
    """Row-wise ``-log softmax(logits)[target]`` and its gradient ``softmax - onehot``."""
    B, V = logits.shape
    if V == 0:
        raise ValueError("empty logits")
    if targets.shape[0] != B:
        raise ValueError("one target per row required")
    if np.any(targets < 0) or np.any(targets >= V):
        raise ValueError("target out of range for %d logits" % V)
    m = logits.max(axis=1, keepdims=True)
    grad = np.exp(logits - m)
    s = grad.sum(axis=1, keepdims=True)
    grad /= s
    rows = np.arange(B)
    loss = np.log(s[:, 0]) + m[:, 0] - logits[rows, targets]
    grad[rows, targets] -= 1.0
    return loss, grad
