"""Backend dispatch for the numeric hot kernels.

The numba path is the default. Set SLIMDET_NO_NUMBA=1 to force the pure
numpy fallback (also used automatically when numba is unavailable).
Backend choice affects last-bit rounding only; each backend is fully
deterministic run to run.
"""

import logging
import os

logger = logging.getLogger(__name__)

_DISABLE_VALUES = ("1", "true", "yes", "on")


def _pick_backend():
    if os.environ.get("SLIMDET_NO_NUMBA", "").lower() in _DISABLE_VALUES:
        from . import _numpy as impl
        return impl, "numpy"
    try:
        from . import _numba as impl
        return impl, "numba"
    except ImportError:
        logger.warning("numba unavailable, falling back to numpy kernels")
        from . import _numpy as impl
        return impl, "numpy"


_impl, BACKEND = _pick_backend()

adamw_update = _impl.adamw_update
softmax_rows = _impl.softmax_rows
standardize_fwd = _impl.standardize_fwd
weighted_stats_fwd = _impl.weighted_stats_fwd
