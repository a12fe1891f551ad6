"""Backend selection for the hot kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback is imported.  Set ``ROBRECOURSE_PURE_PYTHON=1`` to force the
fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("ROBRECOURSE_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"


def mlp_forward(X, weights, biases, activation):
    return _impl.mlp_forward(X, weights, biases, activation)


def mlp_backward(gout, X, weights, acts, activation, need_x, need_params):
    return _impl.mlp_backward(gout, X, weights, acts, activation, need_x, need_params)


def use_backend(name):
    """Switch backends at runtime (``"cython"`` or ``"python"``)."""
    global _impl, BACKEND
    if name == "python":
        _impl, BACKEND = _kernels_py, "python"
    elif name == "cython":
        from . import _kernels as _compiled

        _impl, BACKEND = _compiled, "cython"
    else:
        raise ValueError(f"unknown backend {name!r}")
