"""Select the compiled kernels when available, else the pure-Python ones.

Set ``GRAPHSURV_PURE_PYTHON=1`` to force the fallback.
"""
import os

from graphsurv import _pykernels

if os.environ.get("GRAPHSURV_PURE_PYTHON"):
    kernels = _pykernels
else:
    try:
        from graphsurv import _ckernels as kernels
    except ImportError:
        kernels = _pykernels

BACKEND = kernels.BACKEND


def get(name=None):
    """Return a kernel module by name (``"cython"``/``"python"``), or the active one."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "cython":
        from graphsurv import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def available():
    out = ["python"]
    try:
        from graphsurv import _ckernels  # noqa: F401
        out.insert(0, "cython")
    except ImportError:
        pass
    return out
