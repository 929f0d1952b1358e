"""numba shim.

Set ``ACLSIM_DISABLE_NUMBA=1`` to run every kernel as plain Python over
numpy arrays (slow, but identical results). Also used automatically when
numba cannot be imported.
"""
import os

HAS_NUMBA = False

if os.environ.get("ACLSIM_DISABLE_NUMBA", "").strip() not in ("", "0"):
    _use_numba = False
else:
    _use_numba = True

if _use_numba:
    try:
        from numba import njit

        HAS_NUMBA = True
    except ImportError:  # pragma: no cover
        pass

if not HAS_NUMBA:

    def njit(*args, **kw):
        if len(args) == 1 and callable(args[0]) and not kw:
            return args[0]
        return lambda f: f
