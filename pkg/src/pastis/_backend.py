"""Kernel backend selection.

Hot loops are compiled with numba when it is importable. Setting the
environment variable ``PASTIS_BACKEND=numpy`` forces the pure-numpy
fallbacks, which is useful for debugging and for the speed comparison in
``benchmarks/backend_speed.py``. The variable is read once at import.
"""

import os

_requested = os.environ.get("PASTIS_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"PASTIS_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _requested == "numba"
BACKEND = "numba" if USE_NUMBA else "numpy"
