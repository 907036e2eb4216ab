"""Backend selection for the PCG inner loop.

The compiled extension is used when it imports; otherwise the pure-Python
implementation is used. :func:`set_backend` switches explicitly (benchmarks
and the backend-agreement tests use it).
"""
from . import _pykernels

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_BACKENDS = {"python": _pykernels}
if _compiled is not None:
    _BACKENDS["cython"] = _compiled

_active = "cython" if _compiled is not None else "python"


def available_backends():
    return sorted(_BACKENDS)


def get_backend():
    return _active


def set_backend(name):
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; have {available_backends()}")
    previous = _active
    _active = name
    return previous


def module(name=None):
    return _BACKENDS[name or _active]
