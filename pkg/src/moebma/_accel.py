"""Numba availability switch.

Set ``MOEBMA_DISABLE_NUMBA=1`` to force the pure-numpy kernels even when
numba is installed.
"""
import os

_FLAG = os.environ.get("MOEBMA_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED_BY_ENV = _FLAG in ("1", "true", "yes", "on")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and not NUMBA_DISABLED_BY_ENV
