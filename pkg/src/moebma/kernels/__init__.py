"""Hot training kernels with a numba path and a pure-numpy fallback.

The active backend is numba unless ``MOEBMA_DISABLE_NUMBA=1`` is set (or
numba cannot be imported).  Both backends stay importable through
:func:`get_backend` so tests and the benchmark can compare them.
"""
from types import ModuleType

from moebma._accel import HAVE_NUMBA, USE_NUMBA
from moebma.kernels import _numpy
from moebma.kernels._numpy import ADAM, CLASSIFICATION, REGRESSION, SGD

if USE_NUMBA:
    from moebma.kernels import _numba as active
else:
    active = _numpy

BACKEND = "numba" if USE_NUMBA else "numpy"


def get_backend(name: str) -> ModuleType:
    if name == "numpy":
        return _numpy
    if name == "numba":
        if not HAVE_NUMBA:
            raise RuntimeError("numba backend requested but numba is not installed")
        from moebma.kernels import _numba

        return _numba
    raise ValueError(f"unknown kernel backend {name!r}")


__all__ = ["ADAM", "SGD", "REGRESSION", "CLASSIFICATION", "BACKEND", "active", "get_backend"]
