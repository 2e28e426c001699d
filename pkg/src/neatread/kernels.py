"""Backend selection for the hot kernels.

The compiled extension ``neatread._kernels`` is used when it imports;
otherwise, or when ``NEATREAD_PURE_PYTHON=1`` is set, the numpy fallback
in ``neatread._kernels_py`` is used. Both expose the same three functions.
"""
import importlib
import os

import numpy as np

from . import _kernels_py


def load_backend(name):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("neatread._kernels")
    raise ValueError(f"unknown kernel backend {name!r}")


def available_backends():
    names = ["python"]
    try:
        load_backend("cython")
    except ImportError:
        pass
    else:
        names.insert(0, "cython")
    return names


if os.environ.get("NEATREAD_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        _impl = load_backend("cython")
        BACKEND = "cython"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"


def use_backend(name):
    """Switch the active backend at runtime; returns the previous name."""
    global _impl, BACKEND
    previous = BACKEND
    _impl = load_backend(name)
    BACKEND = name
    return previous


def lstm_gates_forward(z, c_prev):
    return _impl.lstm_gates_forward(np.ascontiguousarray(z), np.ascontiguousarray(c_prev))


def lstm_gates_backward(dh, dc, acts, c_prev, tanh_c):
    return _impl.lstm_gates_backward(
        np.ascontiguousarray(dh),
        np.ascontiguousarray(dc),
        acts,
        np.ascontiguousarray(c_prev),
        tanh_c,
    )


def softmax_xent(logits, targets):
    return _impl.softmax_xent(
        np.ascontiguousarray(logits, dtype=np.float64),
        np.ascontiguousarray(targets, dtype=np.int64),
    )
