"""Kernel selection.

The compiled kernel is used when it imports; ``MORANRATE_BACKEND=python``
forces the fallback and ``MORANRATE_BACKEND=cython`` makes a missing
extension an error.
"""
import os

from . import _pykernel

try:
    from . import _ckernel
except ImportError:  # extension not built
    _ckernel = None

_KERNELS = {"python": _pykernel}
if _ckernel is not None:
    _KERNELS["cython"] = _ckernel


def available():
    return sorted(_KERNELS)


def get_kernel(name=None):
    if name is None:
        name = os.environ.get("MORANRATE_BACKEND", "").strip().lower() or None
    if name is None:
        return _ckernel if _ckernel is not None else _pykernel
    try:
        return _KERNELS[name]
    except KeyError:
        raise ImportError(f"kernel backend {name!r} is not available "
                          f"(have: {', '.join(available())})") from None


kernel = get_kernel()
BACKEND = kernel.BACKEND
