"""Piecewise-linear convex functions stored as matrices.

A matrix ``F`` with ``d`` columns represents ``f(z) = max(F @ z)``. States are
augmented with a leading constant coordinate equal to one, so each row is an
affine functional of the remaining coordinates with the intercept in column 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.spatial import cKDTree

# Upper bound on the number of floats in one (rows x points) product block.
_BLOCK = 4_000_000


class DimensionError(ValueError):
    """Raised when a matrix, state or grid has the wrong number of columns."""

    def __init__(self, what: str, expected: int, got: int):
        self.what = what
        self.expected = expected
        self.got = got
        super().__init__(f"{what}: expected dimension {expected}, got {got}")


def _check_dim(what: str, expected: int, got: int) -> None:
    if expected != got:
        raise DimensionError(what, expected, got)


@dataclass(frozen=True, eq=False)
class Grid:
    """Ordered finite point set in the augmented state space."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError("grid points must be a non-empty (m, d) array")
        if not np.all(pts[:, 0] == 1.0):
            raise ValueError("every grid point needs constant first coordinate 1")
        if np.unique(pts, axis=0).shape[0] != pts.shape[0]:
            raise ValueError("grid points must be distinct")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @property
    def m(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.m

    @cached_property
    def line(self) -> np.ndarray | None:
        """Sorted abscissae for a two-column grid, otherwise ``None``."""
        if self.dim != 2:
            return None
        x = self.points[:, 1]
        if self.m > 1 and not np.all(np.diff(x) > 0):
            return None
        return x

    @cached_property
    def tree(self) -> cKDTree:
        return cKDTree(self.points[:, 1:])

    def bracket(self, y: np.ndarray) -> np.ndarray:
        """Lower index ``j`` with ``x[j] <= y <= x[j+1]``, clipped to the grid.

        Only defined for sorted two-column grids.
        """
        x = self.line
        if x is None:
            raise ValueError("bracketing needs a sorted two-column grid")
        if self.m == 1:
            return np.zeros(np.shape(y), dtype=np.intp)
        j = np.searchsorted(x, y, side="right") - 1
        return np.clip(j, 0, self.m - 2)

    def nearest(self, states: np.ndarray, k: int = 1) -> np.ndarray:
        """Indices of the ``k`` nearest grid points (Euclidean, constant column dropped)."""
        states = np.asarray(states, dtype=float)
        _check_dim("state", self.dim, states.shape[-1])
        k = min(k, self.m)
        flat = states.reshape(-1, self.dim)[:, 1:]
        _, idx = self.tree.query(flat, k=k)
        idx = np.asarray(idx, dtype=np.intp)
        if k == 1:
            return idx.reshape(states.shape[:-1])
        return idx.reshape(states.shape[:-1] + (k,))


@dataclass(frozen=True, eq=False)
class PwlcFunction:
    """Matrix representative ``F`` of ``z -> max(F z)``."""

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim == 1:
            c = c[None, :]
        if c.ndim != 2 or c.shape[0] < 1:
            raise ValueError("coefficient matrix must have at least one row")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def dim(self) -> int:
        return self.coeffs.shape[1]

    @property
    def rows(self) -> int:
        return self.coeffs.shape[0]

    def __call__(self, z):
        return evaluate(self, z)


@dataclass(frozen=True)
class ConvexHandle:
    """A convex function on the slice ``z[0] == 1`` together with a subgradient.

    ``subgradient`` returns a length-``d`` vector; its first entry is ignored
    because the constant coordinate does not vary on the slice. With
    ``vectorized=True`` both callables accept an ``(m, d)`` array.
    """

    value: Callable
    subgradient: Callable
    vectorized: bool = False

    def values(self, points: np.ndarray) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.value(points), dtype=float).reshape(len(points))
        return np.array([self.value(z) for z in points], dtype=float)

    def subgradients(self, points: np.ndarray) -> np.ndarray:
        if self.vectorized:
            return np.asarray(self.subgradient(points), dtype=float).reshape(points.shape)
        return np.array([self.subgradient(z) for z in points], dtype=float)


def _as_matrix(F) -> np.ndarray:
    return F.coeffs if isinstance(F, PwlcFunction) else np.asarray(F, dtype=float)


def evaluate(F, z):
    """``max(F z)`` for a single state or a stack of states of shape ``(N, d)``."""
    A = _as_matrix(F)
    z = np.asarray(z, dtype=float)
    _check_dim("state", A.shape[1], z.shape[-1])
    if z.ndim == 1:
        return float(np.max(A @ z))
    flat = z.reshape(-1, A.shape[1])
    out = np.empty(len(flat))
    step = max(1, _BLOCK // A.shape[0])
    for s in range(0, len(flat), step):
        out[s:s + step] = np.max(A @ flat[s:s + step].T, axis=0)
    return out.reshape(z.shape[:-1])


def argmax_row(F, z) -> int:
    """Index of a maximizing row at ``z``; ties go to the lowest index."""
    A = _as_matrix(F)
    z = np.asarray(z, dtype=float)
    _check_dim("state", A.shape[1], z.shape[-1])
    return int(np.argmax(A @ z))


def argmax_rows(A: np.ndarray, points: np.ndarray, prefer_own: bool = False) -> np.ndarray:
    """Maximizing row of ``A`` at each point (lowest index on ties), blockwise.

    With ``prefer_own`` (one row per point), row ``i`` wins at point ``i``
    whenever it attains the maximum there.
    """
    idx = np.empty(len(points), dtype=np.intp)
    step = max(1, _BLOCK // A.shape[0])
    for s in range(0, len(points), step):
        vals = A @ points[s:s + step].T
        j = np.argmax(vals, axis=0)
        if prefer_own:
            cols = np.arange(vals.shape[1])
            keep = vals[s + cols, cols] >= vals[j, cols]
            j[keep] = s + cols[keep]
        idx[s:s + step] = j
    return idx


def row_rearrange(F, G: Grid) -> PwlcFunction:
    """Row ``i`` of the result is the row of ``F`` that is maximal at ``g^i``.

    Ties go to the lowest index, except that an ``m``-row input keeps its own
    row ``i`` when that row is maximal at ``g^i``, so rearranging is idempotent.
    """
    A = _as_matrix(F)
    _check_dim("matrix columns", G.dim, A.shape[1])
    return PwlcFunction(A[argmax_rows(A, G.points, prefer_own=A.shape[0] == G.m)])


def tangent_rows(values: np.ndarray, slopes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Rows ``(f(g) - s . g_rest, s)`` of the tangents at ``points``."""
    rows = np.array(slopes, dtype=float, copy=True)
    rows[:, 0] = values - np.einsum("ij,ij->i", rows[:, 1:], points[:, 1:])
    return rows


def envelope(h: ConvexHandle, G: Grid) -> PwlcFunction:
    """Subgradient envelope of ``h`` on ``G``: one tangent row per grid point."""
    pts = G.points
    vals = h.values(pts)
    slopes = h.subgradients(pts)
    _check_dim("subgradient", G.dim, slopes.shape[1])
    return PwlcFunction(tangent_rows(vals, slopes, pts))


def max_of(F1, F2, G: Grid) -> PwlcFunction:
    A1, A2 = _as_matrix(F1), _as_matrix(F2)
    _check_dim("matrix columns", A1.shape[1], A2.shape[1])
    return row_rearrange(np.vstack([A1, A2]), G)


def add(F1, F2, G: Grid) -> PwlcFunction:
    A1, A2 = _as_matrix(F1), _as_matrix(F2)
    _check_dim("matrix columns", A1.shape[1], A2.shape[1])
    return PwlcFunction(row_rearrange(A1, G).coeffs + row_rearrange(A2, G).coeffs)


def compose_linear(F, W, G: Grid) -> PwlcFunction:
    """Envelope of ``z -> f(W z)``, i.e. the rearrangement of ``F W``."""
    A = _as_matrix(F)
    W = np.asarray(W, dtype=float)
    if W.shape != (A.shape[1], A.shape[1]):
        raise DimensionError("disturbance matrix", A.shape[1], W.shape[0])
    return row_rearrange(A @ W, G)


def is_grid_consistent(F, G: Grid, rtol: float = 1e-12) -> bool:
    """True when row ``i`` of ``F`` attains ``max(F g^i)`` for every grid point."""
    A = _as_matrix(F)
    if A.shape[0] != G.m:
        return False
    own = np.einsum("ij,ij->i", A, G.points)
    best = evaluate(A, G.points)
    return bool(np.all(best <= own + rtol * np.maximum(1.0, np.abs(own))))


def bracket_evaluate(V: np.ndarray, G: Grid, y: np.ndarray, j: np.ndarray | None = None) -> np.ndarray:
    """Evaluate grid-consistent matrices on a sorted line grid at scalar states ``y``.

    ``V`` has shape ``(..., m, 2)``. The maximizing row at ``y`` lies among the
    two rows attached to the grid points bracketing ``y``, so only those are
    compared. Returns an array of shape ``V.shape[:-2] + y.shape``.
    """
    if j is None:
        j = G.bracket(y)
    if G.m == 1:
        return V[..., 0, 0][..., None] + V[..., 0, 1][..., None] * y
    lo = V[..., j, 0] + V[..., j, 1] * y
    hi = V[..., j + 1, 0] + V[..., j + 1, 1] * y
    return np.maximum(lo, hi)


def nearest_evaluate(V: np.ndarray, G: Grid, states: np.ndarray, idx: np.ndarray | None = None) -> np.ndarray:
    """Evaluate ``V`` at ``states`` with the row of the nearest grid point only.

    This is a minorant of ``max(V z)`` that is exact on the grid.
    """
    if idx is None:
        idx = G.nearest(states)
    idx = np.asarray(idx).reshape(-1)
    return np.einsum("...nd,nd->...n", V[..., idx, :], states.reshape(-1, G.dim)).reshape(
        V.shape[:-2] + states.shape[:-1]
    )
