"""Select the compiled Goursat kernels when built, else the numpy fallback.

Set ``SPEEDRS_BACKEND=python`` to force the fallback.
"""
import os

from . import _fallback

if os.environ.get("SPEEDRS_BACKEND", "").lower() == "python":
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

goursat_pairs = _impl.goursat_pairs
goursat_increments = _impl.goursat_increments
