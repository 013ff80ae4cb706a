"""Kernel backend selection.

The compiled extension is preferred when importable; otherwise the
pure-numpy fallback is used. ``MOTILITY3D_KERNELS=cython|numpy`` forces a
backend (forcing ``cython`` raises if the extension is missing, rather than
silently running slow).
"""

import os

from .errors import ConfigError

_requested = os.environ.get("MOTILITY3D_KERNELS", "").strip().lower()

if _requested not in ("", "cython", "numpy"):
    raise ConfigError(f"MOTILITY3D_KERNELS must be 'cython' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    from . import _kernels_np as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _kernels_cy as _impl  # type: ignore[attr-defined]

        BACKEND = "cython"
    except ImportError:
        if _requested == "cython":
            raise ConfigError(
                "MOTILITY3D_KERNELS=cython but the compiled extension is not built; "
                "reinstall the package or drop the override"
            ) from None
        from . import _kernels_np as _impl

        BACKEND = "numpy"

vol2col = _impl.vol2col
col2vol_add = _impl.col2vol_add
maxpool3d_forward = _impl.maxpool3d_forward
maxpool3d_backward = _impl.maxpool3d_backward


def backend_module(name):
    """Return a specific backend module by name (used by tests/benchmarks)."""
    if name == "numpy":
        from . import _kernels_np

        return _kernels_np
    if name == "cython":
        from . import _kernels_cy  # raises ImportError if not built

        return _kernels_cy
    raise ConfigError(f"unknown kernel backend {name!r}")
