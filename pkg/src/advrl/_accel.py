"""numba switch.

Set ``ADVRL_DISABLE_NUMBA=1`` before import to force the pure-numpy kernels.
When numba is missing the numpy path is used automatically.
"""

import os

_disabled = os.environ.get("ADVRL_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - depends on environment
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrapper(f):
            return f

        return wrapper


USE_NUMBA = HAVE_NUMBA
