"""Grid construction: equally spaced line grids and clustered stochastic grids."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans
from threadpoolctl import threadpool_limits

from .pwlc import Grid


def equidistant_grid(lo: float, hi: float, m: int) -> Grid:
    """``m`` points ``(1, x)`` with ``x`` evenly spaced on ``[lo, hi]``."""
    if not lo < hi:
        raise ValueError(f"need lo < hi, got lo={lo}, hi={hi}")
    if m < 2:
        raise ValueError(f"need at least 2 grid points, got {m}")
    x = np.linspace(lo, hi, m)
    return Grid(np.column_stack([np.ones(m), x]))


def stochastic_grid(cloud: np.ndarray, k: int, seed: int = 0, max_iter: int = 100, tol: float = 1e-6) -> Grid:
    """Cluster a cloud of augmented states into ``k`` centroids.

    k-means with k-means++ seeding on the non-constant coordinates. Centroids
    are returned in lexicographic order with the constant coordinate reset to 1.
    """
    cloud = np.asarray(cloud, dtype=float)
    if cloud.ndim != 2 or cloud.shape[1] < 2:
        raise ValueError("cloud must be an (N, d) array with d >= 2")
    if not np.all(cloud[:, 0] == 1.0):
        raise ValueError("cloud states need constant first coordinate 1")
    free = cloud[:, 1:]
    distinct = np.unique(free, axis=0)
    if len(distinct) < k:
        raise ValueError(f"cloud has {len(distinct)} distinct points, fewer than k={k}")
    if len(distinct) == k:
        centers = distinct
    else:
        km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=max_iter,
                    tol=tol, random_state=seed, algorithm="lloyd")
        # single-threaded so the reduction order (and the result) never depends on the machine
        with threadpool_limits(limits=1):
            km.fit(free)
        centers = km.cluster_centers_
    centers = _separate_duplicates(centers)
    order = np.lexsort(centers.T[::-1])
    centers = centers[order]
    return Grid(np.column_stack([np.ones(len(centers)), centers]))


def _separate_duplicates(centers: np.ndarray) -> np.ndarray:
    centers = centers.copy()
    while True:
        _, first, counts = np.unique(centers, axis=0, return_index=True, return_counts=True)
        if np.all(counts == 1):
            return centers
        seen = set(first.tolist())
        for i in range(len(centers)):
            if i not in seen:
                centers[i, 0] = np.nextafter(centers[i, 0], np.inf)


def state_cloud(states: np.ndarray) -> np.ndarray:
    """Pool a ``(K, T+1, d)`` path array into one ``(K*(T+1), d)`` cloud."""
    states = np.asarray(states, dtype=float)
    return states.reshape(-1, states.shape[-1])


def save_grid_csv(grid: Grid, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in grid.points:
            w.writerow([repr(float(v)) for v in row])


def load_grid_csv(path: str | Path) -> Grid:
    with open(path, newline="") as fh:
        rows = [[float(v) for v in row] for row in csv.reader(fh) if row]
    return Grid(np.array(rows))
