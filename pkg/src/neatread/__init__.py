"""Hard-attention reading model trained by REINFORCE, with an eye-tracking
evaluation harness."""

__version__ = "0.1.0"

from . import kernels  # noqa: E402


def __getattr__(name):
    if name == "BACKEND":
        return kernels.BACKEND
    raise AttributeError(name)


__all__ = ["BACKEND", "__version__"]
