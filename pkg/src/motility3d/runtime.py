"""Execution-mode knobs: BLAS thread count and finite-value checking.

The default mode is single-threaded and deterministic; ``set_num_threads``
opts into multithreaded BLAS kernels. Work is partitioned over output
blocks, so results stay bit-identical to the single-threaded mode.
"""

import numpy as np

from .errors import ConfigError, NumericsError

_FINITE_MODES = ("off", "fast", "full")
_finite_mode = "fast"
_threadpool_limiter = None


def set_num_threads(n):
    """Limit BLAS pools to ``n`` threads for the rest of the process."""
    global _threadpool_limiter
    if n < 1:
        raise ConfigError("thread count must be >= 1")
    import threadpoolctl

    _threadpool_limiter = threadpoolctl.threadpool_limits(limits=int(n))


def set_finite_checks(mode):
    """Select NaN/Inf detection: 'off', 'fast' (sum probe), or 'full' (elementwise)."""
    global _finite_mode
    if mode not in _FINITE_MODES:
        raise ConfigError(f"finite-check mode must be one of {_FINITE_MODES}, got {mode!r}")
    _finite_mode = mode


def finite_check_mode():
    return _finite_mode


def check_finite(arr, context):
    """Raise NumericsError if ``arr`` contains NaN/Inf, per the active mode.

    The 'fast' probe sums the buffer: any NaN/Inf poisons the sum, and a
    legitimate float32 sum cannot overflow at the magnitudes this engine
    produces. The 'full' mode scans elementwise.
    """
    if _finite_mode == "off":
        return
    if _finite_mode == "fast":
        if not np.isfinite(arr.sum()):
            raise NumericsError(f"non-finite values produced by {context}")
    else:
        if not np.isfinite(arr).all():
            raise NumericsError(f"non-finite values produced by {context}")
