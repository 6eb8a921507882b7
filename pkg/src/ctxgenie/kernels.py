"""Hot numeric kernels with numba-accelerated and pure-numpy implementations.

The two loops that dominate numeric runtime — dense dot-product scoring over an
index and the k-means assignment step — exist in both flavors. Selection is by
the CTXGENIE_KERNELS environment variable:

    CTXGENIE_KERNELS=numba   use the @njit kernels (default when numba imports)
    CTXGENIE_KERNELS=numpy   force the pure-numpy fallback

Both paths implement the same math in float64. benchmarks/bench_kernels.py
compares their throughput.
"""

from __future__ import annotations

import os

import numpy as np

try:
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    HAS_NUMBA = False

ENV_FLAG = "CTXGENIE_KERNELS"


def active_backend() -> str:
    """Return the kernel backend currently selected: "numba" or "numpy"."""
    choice = os.environ.get(ENV_FLAG, "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not HAS_NUMBA:
            raise RuntimeError("CTXGENIE_KERNELS=numba but numba is not importable")
        return "numba"
    return "numba" if HAS_NUMBA else "numpy"


if HAS_NUMBA:

    @njit(cache=True, parallel=True)
    def _dot_scores_nb(matrix, query):  # pragma: no cover - compiled
        n, d = matrix.shape
        out = np.empty(n, dtype=np.float64)
        for i in prange(n):
            acc = 0.0
            for j in range(d):
                acc += matrix[i, j] * query[j]
            out[i] = acc
        return out

    @njit(cache=True, parallel=True)
    def _assign_nb(points, centroids):  # pragma: no cover - compiled
        n, d = points.shape
        k = centroids.shape[0]
        labels = np.empty(n, dtype=np.int64)
        dists = np.empty(n, dtype=np.float64)
        for i in prange(n):
            best = 0
            best_d = np.inf
            for c in range(k):
                acc = 0.0
                for j in range(d):
                    diff = points[i, j] - centroids[c, j]
                    acc += diff * diff
                if acc < best_d:
                    best_d = acc
                    best = c
            labels[i] = best
            dists[i] = best_d
        return labels, dists


def _dot_scores_np(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    return matrix @ query


def _assign_np(points: np.ndarray, centroids: np.ndarray):
    # (n, k) squared distances via direct differencing; first-minimum tie rule
    # matches the numba loop's strict-< comparison.
    diffs = points[:, None, :] - centroids[None, :, :]
    sq = np.einsum("nkd,nkd->nk", diffs, diffs)
    labels = np.argmin(sq, axis=1)
    dists = sq[np.arange(points.shape[0]), labels]
    return labels.astype(np.int64), dists


def dot_scores(matrix: np.ndarray, query: np.ndarray) -> np.ndarray:
    """Scores of one query against every row of `matrix` (float64 dot products)."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    query = np.ascontiguousarray(query, dtype=np.float64)
    if matrix.ndim != 2 or query.ndim != 1 or matrix.shape[1] != query.shape[0]:
        raise ValueError("matrix must be (n, d) and query (d,)")
    if active_backend() == "numba":
        return _dot_scores_nb(matrix, query)
    return _dot_scores_np(matrix, query)


def assign_clusters(points: np.ndarray, centroids: np.ndarray):
    """Nearest-centroid assignment.

    Returns (labels, squared_distances); ties go to the lowest centroid index
    on both backends.
    """
    points = np.ascontiguousarray(points, dtype=np.float64)
    centroids = np.ascontiguousarray(centroids, dtype=np.float64)
    if points.ndim != 2 or centroids.ndim != 2 or points.shape[1] != centroids.shape[1]:
        raise ValueError("points must be (n, d) and centroids (k, d)")
    if active_backend() == "numba":
        return _assign_nb(points, centroids)
    return _assign_np(points, centroids)
