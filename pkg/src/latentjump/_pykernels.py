"""Pure numpy implementation of the hot kernels.

Mirrors ``_ckernels.pyx`` function for function; used when the compiled
extension is unavailable or ``LATENTJUMP_PURE_PYTHON`` is set.
"""
import numpy as np

from .errors import SingularMatrixError


def _locate_bad_pivot(a):
    n = a.shape[0]
    low = np.zeros_like(a)
    for j in range(n):
        d = a[j, j] - low[j, :j] @ low[j, :j]
        if not d > 0.0:
            return j, d
        low[j, j] = np.sqrt(d)
        low[j + 1:, j] = (a[j + 1:, j] - low[j + 1:, :j] @ low[j, :j]) / low[j, j]
    return n - 1, float("nan")


def cholesky(a):
    a = np.asarray(a, dtype=np.float64)
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pivot, value = _locate_bad_pivot(a)
        raise SingularMatrixError(pivot, value) from None


def spd_inverse(a):
    low = cholesky(a)
    n = low.shape[0]
    inv_low = np.linalg.solve(low, np.eye(n))
    return inv_low.T @ inv_low


def sigma_points(mean, cov, scale):
    mean = np.asarray(mean, dtype=np.float64)
    n = mean.shape[0]
    root = cholesky(scale * np.asarray(cov, dtype=np.float64))
    pts = np.empty((2 * n + 1, n))
    pts[0] = mean
    pts[1:n + 1] = mean + root.T
    pts[n + 1:] = mean - root.T
    return pts


def unscented_moments(points, wm, wc):
    """Weighted mean and covariance of sigma points; ``wm`` must sum to one."""
    # offsets from the centre point: the UKF centre weight is huge and negative
    mean = points[0] + wm[1:] @ (points[1:] - points[0])
    dev = points - mean
    cov = (dev * wc[:, None]).T @ dev
    return mean, cov


def kf_update(z, p, mu_obs, sigma2, paper_gain):
    n_lat = mu_obs.shape[0]
    p_lat = p[:n_lat, :n_lat]
    s = p_lat + np.diag(sigma2)
    s_inv = spd_inverse(0.5 * (s + s.T))
    if paper_gain:
        left = np.vstack([p_lat, np.eye(n_lat)])
    else:
        left = p[:, :n_lat]
    gain = left @ s_inv
    z_new = z + gain @ (mu_obs - z[:n_lat])
    p_new = p - gain @ s @ gain.T
    return z_new, p_new


def kmeans_assign(points, centroids):
    diff = points[:, None, :] - centroids[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    labels = np.argmin(d2, axis=1)
    return labels.astype(np.int64), d2[np.arange(points.shape[0]), labels]


def flag_runs(mask, min_run):
    mask = np.asarray(mask, dtype=bool)
    flags = np.zeros(mask.shape[0], dtype=bool)
    start = -1
    for i, m in enumerate(mask.tolist() + [False]):
        if m and start < 0:
            start = i
        elif not m and start >= 0:
            if i - start >= min_run:
                flags[start:i] = True
            start = -1
    return flags
