"""Kernel backend selection.

The compiled extension is used when importable; set ``MAGKIT_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _fallback

if os.environ.get("MAGKIT_PURE_PYTHON", "") not in ("", "0"):
    impl = _fallback
else:
    try:
        from . import _core as impl
    except ImportError:  # extension not built
        impl = _fallback

BACKEND = impl.NAME
mixture_moments = impl.mixture_moments
stopped_walk = impl.stopped_walk
