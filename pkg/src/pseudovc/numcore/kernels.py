"""Hot-loop kernel selection.

The compiled extension is used when it imports and ``PSEUDOVC_PURE_PYTHON`` is
unset; otherwise the numpy implementation runs.  Both expose
``gru_forward`` / ``gru_backward`` with identical signatures.
"""

import os

from . import _gru_py

try:
    from . import _gru as _gru_ext
except ImportError:  # extension not built
    _gru_ext = None

_impl = _gru_py
BACKEND = "python"


def use(backend: str) -> None:
    """Switch to ``"compiled"`` or ``"python"`` for subsequent calls."""
    global _impl, BACKEND
    if backend == "compiled":
        if _gru_ext is None:
            raise RuntimeError("compiled GRU kernel is not built")
        _impl = _gru_ext
    elif backend == "python":
        _impl = _gru_py
    else:
        raise ValueError(f"unknown backend {backend!r}")
    BACKEND = backend


def gru_forward(xproj, w_hh, b_hh, reverse=False):
    return _impl.gru_forward(xproj, w_hh, b_hh, reverse)


def gru_backward(dhs, hs, cache, w_hh, reverse=False):
    return _impl.gru_backward(dhs, hs, cache, w_hh, reverse)


def compiled_available() -> bool:
    return _gru_ext is not None


def implementation(backend: str):
    """The module behind ``backend`` (for direct timing)."""
    if backend == "compiled":
        if _gru_ext is None:
            raise RuntimeError("compiled GRU kernel is not built")
        return _gru_ext
    return _gru_py


if _gru_ext is not None and not os.environ.get("PSEUDOVC_PURE_PYTHON"):
    use("compiled")
