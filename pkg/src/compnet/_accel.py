"""Numba switch for the hot kernels.

Set ``COMPNET_DISABLE_NUMBA=1`` to force the pure-numpy kernels (useful for
debugging, or where numba is not installed).
"""

import os

_flag = os.environ.get("COMPNET_DISABLE_NUMBA", "").strip().lower()
DISABLED_BY_ENV = _flag not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_NUMBA = numba is not None and not DISABLED_BY_ENV


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is usable, else return it as is.

    No fastmath and no parallel loops: results must not depend on reduction
    order or thread count.
    """
    if numba is None:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


def backend_name():
    return "numba" if USE_NUMBA else "numpy"
