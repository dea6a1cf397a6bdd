"""Optional numba acceleration.

Set ``IDMS_DISABLE_NUMBA=1`` to force the pure-numpy kernels, e.g. when
debugging or on platforms without an LLVM toolchain.
"""
import os

try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def decorator(func):
            return func
        return decorator


def _flag(name):
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


USE_NUMBA = HAVE_NUMBA and not _flag("IDMS_DISABLE_NUMBA")


def select(nb_impl, np_impl):
    """Pick the numba kernel when enabled, else the numpy one."""
    return nb_impl if USE_NUMBA else np_impl
