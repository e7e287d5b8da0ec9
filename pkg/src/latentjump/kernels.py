"""Backend selection for the hot kernels.

The compiled extension is preferred. Set ``LATENTJUMP_PURE_PYTHON=1`` to force
the numpy fallback (useful for debugging and for the backend benchmark).
"""
import os

if os.environ.get("LATENTJUMP_PURE_PYTHON", "") not in ("", "0"):
    from . import _pykernels as _impl
    BACKEND = "python"
else:
    try:
        from . import _ckernels as _impl
        BACKEND = "cython"
    except ImportError:
        from . import _pykernels as _impl
        BACKEND = "python"

cholesky = _impl.cholesky
spd_inverse = _impl.spd_inverse
sigma_points = _impl.sigma_points
unscented_moments = _impl.unscented_moments
kf_update = _impl.kf_update
kmeans_assign = _impl.kmeans_assign
flag_runs = _impl.flag_runs

__all__ = [
    "BACKEND",
    "cholesky",
    "spd_inverse",
    "sigma_points",
    "unscented_moments",
    "kf_update",
    "kmeans_assign",
    "flag_runs",
]
