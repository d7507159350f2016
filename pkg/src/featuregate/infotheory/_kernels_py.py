"""NumPy fallback for the neighbor-statistics kernels.

Semantics are identical to the compiled extension: brute-force pairwise
distances under the max norm, where a discrete coordinate contributes 0 on
match and 1 on mismatch. Points tied at zero distance are handled by
counting exact matches instead of using the k-th neighbor radius.
"""

from __future__ import annotations

import numpy as np

_CHUNK = 256


def _chunk_dist(c: np.ndarray, d: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """Distances of rows lo:hi against all rows; shape (hi-lo, n)."""
    n = c.shape[0] if c.size or c.shape[0] else d.shape[0]
    n = max(c.shape[0], d.shape[0])
    out = np.zeros((hi - lo, n), dtype=np.float64)
    if c.shape[1]:
        out = np.abs(c[lo:hi, None, :] - c[None, :, :]).max(axis=-1)
    if d.shape[1]:
        mism = (d[lo:hi, None, :] != d[None, :, :]).any(axis=-1)
        out = np.maximum(out, mism.astype(np.float64))
    return out


def mi_counts(xc, xd, yc, yd, k):
    """Per-point (ktilde, nx, ny) for the mixed-data MI estimator."""
    n = max(xc.shape[0], xd.shape[0])
    ktilde = np.empty(n, dtype=np.int64)
    nx = np.empty(n, dtype=np.int64)
    ny = np.empty(n, dtype=np.int64)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        dx = _chunk_dist(xc, xd, lo, hi)
        dy = _chunk_dist(yc, yd, lo, hi)
        dj = np.maximum(dx, dy)
        rows = np.arange(lo, hi)
        local = rows - lo
        work = dj.copy()
        work[local, rows] = np.inf  # exclude self from the radius search
        rho = np.partition(work, k - 1, axis=1)[:, k - 1]

        tied = rho == 0.0
        ktilde[rows] = np.where(
            tied, (dj == 0.0).sum(axis=1) - 1, k
        )
        nx[rows] = np.where(
            tied, (dx == 0.0).sum(axis=1) - 1, (dx < rho[:, None]).sum(axis=1) - 1
        )
        ny[rows] = np.where(
            tied, (dy == 0.0).sum(axis=1) - 1, (dy < rho[:, None]).sum(axis=1) - 1
        )
    return ktilde, nx, ny


def knn_radius_stats(c, d, k):
    """Per-point k-th neighbor distance and zero-distance tie count."""
    n = max(c.shape[0], d.shape[0])
    rho = np.empty(n, dtype=np.float64)
    ties = np.empty(n, dtype=np.int64)
    for lo in range(0, n, _CHUNK):
        hi = min(lo + _CHUNK, n)
        dj = _chunk_dist(c, d, lo, hi)
        rows = np.arange(lo, hi)
        local = rows - lo
        ties[rows] = (dj == 0.0).sum(axis=1) - 1
        dj[local, rows] = np.inf
        rho[rows] = np.partition(dj, k - 1, axis=1)[:, k - 1]
    return rho, ties
