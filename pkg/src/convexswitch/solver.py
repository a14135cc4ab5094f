"""Backward induction over matrix representatives of the value functions.

All matrices produced here are *grid-consistent*: row ``i`` is the maximal
row at grid point ``g^i``. That makes sums and action-wise maxima row-local,
so a Bellman step costs ``O(A * P * m * d)`` once the continuation values are
known. Continuation values are computed by one of three operators:

* :class:`ExactContinuation` -- full argmax over all rows, any dimension.
* :class:`BracketContinuation` -- sorted two-column grids; the maximizing
  row at ``W g`` is one of the two rows bracketing it, so each (grid point,
  atom) pair costs O(1) after a binary search.
* :class:`NearestContinuation` -- argmax restricted to the rows of the
  ``neighbors`` grid points nearest to ``W g``. With one neighbour the
  selection does not depend on the value function and the whole operator
  collapses to a handful of fixed (sparse) matrices.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse

from . import _kernels, pwlc
from .disturbances import DisturbanceSampling
from .model import ACTIONS, ResourceModel
from .pwlc import Grid, PwlcFunction

log = logging.getLogger(__name__)

_BLOCK = 4_000_000
_DENSE_BYTES = 1_500_000_000


def _line_form(S: DisturbanceSampling) -> bool:
    W = S.matrices
    return W.shape[1] == 2 and np.all(W[:, 0, 1] == 0.0)


def _map_positions(fn, V: np.ndarray, threads: int) -> np.ndarray:
    out = np.empty_like(V)
    if threads <= 1 or len(V) == 1:
        for p in range(len(V)):
            out[p] = fn(V[p])
        return out
    with ThreadPoolExecutor(threads) as ex:
        for p, res in enumerate(ex.map(fn, list(V))):
            out[p] = res
    return out


class ContinuationOperator:
    """Maps value matrices ``V[p]`` on the grid to ``sum_k nu_k Upsilon[V[p] W_k]``."""

    def __init__(self, grid: Grid, sampling: DisturbanceSampling):
        pwlc._check_dim("sampling", grid.dim, sampling.dim)
        self.grid = grid
        self.sampling = sampling

    def one(self, V: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, V: np.ndarray, threads: int = 1) -> np.ndarray:
        """Apply to a stack of matrices of shape ``(P, m, d)``."""
        return _map_positions(self.one, np.asarray(V, dtype=float), threads)


class ExactContinuation(ContinuationOperator):
    """Reference semantics: full argmax for every (grid point, atom) pair."""

    def one(self, V: np.ndarray) -> np.ndarray:
        G = self.grid.points
        out = np.zeros((self.grid.m, V.shape[1]))
        for nu, W in zip(self.sampling.weights, self.sampling.matrices):
            VW = V @ W
            out += nu * VW[pwlc.argmax_rows(VW, G)]
        return out


class BracketContinuation(ContinuationOperator):
    """Exact continuation for grid-consistent matrices on a sorted line grid.

    Requires every atom to act on ``(1, x)`` as ``x -> a_k + b_k x``.
    """

    def __init__(self, grid: Grid, sampling: DisturbanceSampling):
        super().__init__(grid, sampling)
        if grid.line is None or not _line_form(sampling):
            raise ValueError("bracket continuation needs a sorted line grid and line-form atoms")
        W = sampling.matrices
        self.a = np.ascontiguousarray(W[:, 1, 0])
        self.b = np.ascontiguousarray(W[:, 1, 1])
        self.nu = np.ascontiguousarray(sampling.weights)
        self.x = np.ascontiguousarray(grid.points[:, 1])

    def one(self, V: np.ndarray) -> np.ndarray:
        if not V.any():
            return np.zeros_like(V)
        return _kernels.bracket_continuation(np.ascontiguousarray(V, dtype=float), self.x,
                                             self.nu, self.a, self.b)


def nearest_indices(grid: Grid, states: np.ndarray, k: int) -> np.ndarray:
    """Indices of the ``k`` nearest grid points, closest first (``states.shape[:-1] + (k,)``).

    Sorted line grids use a bracketing window with stable ordering, so the
    candidate sets are nested in ``k``; other grids use a KD-tree.
    """
    k = min(k, grid.m)
    x = grid.line
    if x is None:
        idx = grid.nearest(states, k)
        return idx[..., None] if k == 1 else idx
    y = states[..., 1]
    j = np.searchsorted(x, y)
    offs = np.arange(-k, k)
    win = np.clip(j[..., None] + offs, 0, grid.m - 1)
    dist = np.abs(x[win] - y[..., None])
    # clipping duplicates indices at the edges; push duplicates to the back
    dup = np.zeros(win.shape, dtype=bool)
    dup[..., 1:] = win[..., 1:] == win[..., :-1]
    dist = np.where(dup, np.inf, dist)
    order = np.argsort(dist, axis=-1, kind="stable")[..., :k]
    return np.take_along_axis(win, order, axis=-1)


class NearestContinuation(ContinuationOperator):
    """Argmax searched only among the rows of the nearest grid points to ``W g``."""

    def __init__(self, grid: Grid, sampling: DisturbanceSampling, neighbors: int = 1):
        super().__init__(grid, sampling)
        if neighbors < 1:
            raise ValueError("neighbors must be at least 1")
        self.neighbors = min(neighbors, grid.m)
        if self.neighbors == grid.m:
            self._exact = _exact_operator(grid, sampling)
            return
        self._exact = None
        n, d = sampling.n, grid.dim
        self.chunk = max(1, _BLOCK // (n * d * self.neighbors))
        if self.neighbors == 1:
            self._build_fixed()
        else:
            self._cand = [self._candidates(s) for s in range(0, grid.m, self.chunk)]

    def _images(self, s):
        pts = self.grid.points[s:s + self.chunk]
        return np.einsum("kij,mj->mki", self.sampling.matrices, pts)

    def _candidates(self, s):
        Y = self._images(s)
        return Y, nearest_indices(self.grid, Y, self.neighbors)

    def _build_fixed(self):
        m = self.grid.m
        W = self.sampling.matrices
        nu = self.sampling.weights
        d = self.grid.dim
        self.pairs = [(ci, co) for ci in range(d) for co in range(d) if np.any(W[:, ci, co] != 0)]
        dense = len(self.pairs) * m * m * 8 <= _DENSE_BYTES
        mats = {pc: (np.zeros((m, m)) if dense else []) for pc in self.pairs}
        for s in range(0, m, self.chunk):
            J = nearest_indices(self.grid, self._images(s), 1)[..., 0]
            rows = J.shape[0]
            keys = (np.arange(rows)[:, None] * m + J).ravel()
            for ci, co in self.pairs:
                w = np.broadcast_to(nu * W[:, ci, co], J.shape).ravel()
                block = np.bincount(keys, weights=w, minlength=rows * m).reshape(rows, m)
                if dense:
                    mats[(ci, co)][s:s + rows] = block
                else:
                    mats[(ci, co)].append(sparse.csr_matrix(block))
        if not dense:
            mats = {pc: sparse.vstack(blocks, format="csr") for pc, blocks in mats.items()}
        self.mats = mats

    def one(self, V: np.ndarray) -> np.ndarray:
        return self(V[None])[0]

    def __call__(self, V: np.ndarray, threads: int = 1) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        if self._exact is not None:
            return self._exact(V, threads)
        if self.neighbors == 1:
            P, m, d = V.shape
            out = np.zeros((m, P, d))
            # BLAS is an order of magnitude slower on strided operands
            Vt = np.ascontiguousarray(V.transpose(2, 1, 0))
            for ci, co in self.pairs:
                out[:, :, co] += self.mats[(ci, co)] @ Vt[ci]
            return np.ascontiguousarray(out.transpose(1, 0, 2))
        return _map_positions(self._one_candidates, V, threads)

    def _one_candidates(self, V: np.ndarray) -> np.ndarray:
        out = np.empty((self.grid.m, V.shape[1]))
        W = self.sampling.matrices
        nu = self.sampling.weights
        for c, s in enumerate(range(0, self.grid.m, self.chunk)):
            Y, cand = self._cand[c]
            vals = np.einsum("mkqd,mkd->mkq", V[cand], Y)
            J = np.take_along_axis(cand, vals.argmax(axis=-1)[..., None], axis=-1)[..., 0]
            out[s:s + self.chunk] = np.einsum("k,mki,kij->mj", nu, V[J], W)
        return out


def _exact_operator(grid: Grid, sampling: DisturbanceSampling) -> ContinuationOperator:
    if grid.line is not None and _line_form(sampling):
        return BracketContinuation(grid, sampling)
    return ExactContinuation(grid, sampling)


def make_operator(grid: Grid, sampling: DisturbanceSampling, fast: bool = False,
                  neighbors: int = 1) -> ContinuationOperator:
    if fast:
        return NearestContinuation(grid, sampling, neighbors)
    return _exact_operator(grid, sampling)


# -- public single-matrix operations ------------------------------------------------


def expected_matrix(V, S: DisturbanceSampling, G: Grid) -> PwlcFunction:
    """``sum_k nu_k Upsilon_G[V W_k]`` summed over every atom."""
    A = pwlc._as_matrix(V)
    pwlc._check_dim("matrix columns", G.dim, A.shape[1])
    pwlc._check_dim("sampling", G.dim, S.dim)
    if A.shape[0] == G.m and G.line is not None and _line_form(S) and pwlc.is_grid_consistent(A, G, 0.0):
        return PwlcFunction(BracketContinuation(G, S).one(A))
    out = np.zeros((G.m, A.shape[1]))
    for nu, W in zip(S.weights, S.matrices):
        out += nu * pwlc.compose_linear(A, W, G).coeffs
    return PwlcFunction(out)


def expected_matrix_fast(V, S: DisturbanceSampling, G: Grid, neighbors: int = 1) -> PwlcFunction:
    """Nearest-neighbour approximation of :func:`expected_matrix`.

    ``V`` must have one row per grid point (e.g. the output of a rearrangement).
    """
    A = pwlc._as_matrix(V)
    if A.shape[0] != G.m:
        raise ValueError("fast expectation needs one row per grid point")
    if neighbors >= G.m:
        return expected_matrix(A, S, G)
    return PwlcFunction(NearestContinuation(G, S, neighbors)(A[None])[0])


# -- backward induction -------------------------------------------------------------------


def bellman_select(E: np.ndarray, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise maximum over actions of ``E`` (shape ``(A, P, m, d)``).

    Returns the selected rows ``(P, m, d)`` and the maximizing action per
    (position, grid point); ties go to the lowest action index.
    """
    vals = np.einsum("apmd,md->apm", E, grid.points)
    best = vals.argmax(axis=0)
    rows = np.take_along_axis(E, best[None, :, :, None], axis=0)[0]
    return rows, best


def expected_over_positions(alpha: np.ndarray, C: np.ndarray) -> np.ndarray:
    """``sum_p' alpha[a, p, p'] C[p']`` for every action, shape ``(A, P, ...)``."""
    return np.tensordot(alpha, C, axes=([2], [0]))


@dataclass
class Solution:
    """Value and continuation matrices on a common grid.

    ``values[t, p]`` represents ``V_t(p)`` for ``t = 0..T`` and
    ``continuation[t, p]`` the expected next value used when deciding at
    ``t`` (``t = 0..T-1``).
    """

    model: ResourceModel
    grid: Grid
    values: np.ndarray
    continuation: np.ndarray
    fast: bool = False
    neighbors: int = 1
    timings: dict = field(default_factory=dict)

    @property
    def T(self) -> int:
        return self.values.shape[0] - 1

    def value(self, t: int, p) -> PwlcFunction:
        return PwlcFunction(self.values[t, self.model.index(*p)])

    def continuation_value(self, t: int, p) -> PwlcFunction:
        return PwlcFunction(self.continuation[t, self.model.index(*p)])

    def evaluate(self, mats: np.ndarray, states: np.ndarray) -> np.ndarray:
        """Evaluate grid-consistent matrices ``(..., m, d)`` at ``states`` ``(N, d)``.

        Line grids compare the two bracketing rows (exact for grid-consistent
        matrices); in fast mode other grids use the nearest grid point's row;
        otherwise the full maximum is taken.
        """
        states = np.asarray(states, dtype=float).reshape(-1, self.grid.dim)
        mats = np.asarray(mats)
        if self.grid.line is not None:
            y = np.ascontiguousarray(states[:, 1])
            flat = np.ascontiguousarray(mats.reshape((-1,) + mats.shape[-2:]), dtype=float)
            out = _kernels.bracket_values(flat, self.grid.bracket(y), y)
            return out.reshape(mats.shape[:-2] + (len(y),))
        if self.fast:
            return pwlc.nearest_evaluate(mats, self.grid, states)
        lead = mats.shape[:-2]
        flat = mats.reshape((-1,) + mats.shape[-2:])
        out = np.stack([pwlc.evaluate(F, states) for F in flat])
        return out.reshape(lead + (len(states),))

    def action_values(self, t: int, states: np.ndarray) -> np.ndarray:
        """Reward plus expected continuation for every (state, action, position)."""
        if not 0 <= t < self.T:
            raise ValueError(f"decision time {t} outside 0..{self.T - 1}")
        states = np.asarray(states, dtype=float).reshape(-1, self.grid.dim)
        cont = self.evaluate(self.continuation[t], states)  # (P, N)
        expect = np.einsum("apq,qn->nap", self.model.alpha, cont)
        return self.model.rewards(t, states) + expect

    def save(self, directory: str | Path, meta: dict | None = None) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        for name in ("values", "continuation"):
            arr = getattr(self, name)
            target = directory / f"{name}.npy"
            if isinstance(arr, np.memmap) and Path(arr.filename).resolve() == target.resolve():
                arr.flush()
            else:
                np.save(target, arr)
        np.save(directory / "grid.npy", self.grid.points)
        info = {"fast": self.fast, "neighbors": self.neighbors, "T": self.T,
                "positions": self.model.n_positions, "timings": self.timings}
        if meta:
            info.update(meta)
        (directory / "solution.json").write_text(json.dumps(info, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory: str | Path, model: ResourceModel, mmap: bool = True) -> "Solution":
        directory = Path(directory)
        info = json.loads((directory / "solution.json").read_text())
        mode = "r" if mmap else None
        values = np.load(directory / "values.npy", mmap_mode=mode)
        cont = np.load(directory / "continuation.npy", mmap_mode=mode)
        grid = Grid(np.load(directory / "grid.npy"))
        if values.shape[1] != model.n_positions or values.shape[0] != model.T + 1:
            raise ValueError("stored value functions do not match the model")
        return cls(model, grid, values, cont, info.get("fast", False), info.get("neighbors", 1),
                   info.get("timings", {}))

    def dump_csv(self, path: str | Path, times: Sequence[int] | None = None) -> None:
        """Rows ``kind, t, reserve, mode, row, coefficients...``."""
        times = range(self.T + 1) if times is None else times
        d = self.grid.dim
        with open(path, "w") as fh:
            fh.write(",".join(["kind", "t", "reserve", "mode", "row"] + [f"c{i}" for i in range(d)]) + "\n")
            for kind, arr, top in (("value", self.values, self.T), ("continuation", self.continuation, self.T - 1)):
                for t in times:
                    if t > top:
                        continue
                    for p in range(self.model.n_positions):
                        res, mode = self.model.position(p)
                        for i, row in enumerate(arr[t, p]):
                            fh.write(f"{kind},{t},{res},{mode},{i}," + ",".join(f"{v:.17g}" for v in row) + "\n")


def _alloc(shape, store: Path | None, name: str) -> np.ndarray:
    if store is None:
        return np.empty(shape)
    store.mkdir(parents=True, exist_ok=True)
    return np.lib.format.open_memmap(store / f"{name}.npy", mode="w+", dtype=float, shape=shape)


def backward_induction(model: ResourceModel, grid: Grid, sampling, fast: bool = False,
                       neighbors: int = 1, threads: int = 1, store: str | Path | None = None) -> Solution:
    """Solve the double-modified Bellman recursion on ``grid``.

    ``sampling`` is one :class:`DisturbanceSampling` shared by all steps or a
    sequence whose entry ``t`` samples the disturbance applied after decision
    time ``t``. ``store`` keeps the matrices in ``.npy`` memmaps in that
    directory instead of memory.
    """
    T = model.T
    if T < 1:
        raise ValueError("need at least one decision epoch")
    pwlc._check_dim("grid", model.dim, grid.dim)
    samplings = [sampling] * T if isinstance(sampling, DisturbanceSampling) else list(sampling)
    if len(samplings) != T:
        raise ValueError(f"need {T} samplings, got {len(samplings)}")
    P, m, d = model.n_positions, grid.m, grid.dim
    store = Path(store) if store is not None else None

    t0 = time.perf_counter()
    ops: dict[int, ContinuationOperator] = {}
    for S in samplings:
        if id(S) not in ops:
            ops[id(S)] = make_operator(grid, S, fast, neighbors)
    t_setup = time.perf_counter() - t0

    values = _alloc((T + 1, P, m, d), store, "values")
    cont = _alloc((T, P, m, d), store, "continuation")
    values[T] = bellman_select(model.reward_tangents(T, grid), grid)[0]
    for t in range(T - 1, -1, -1):
        C = ops[id(samplings[t])](values[t + 1], threads)
        cont[t] = C
        E = model.reward_tangents(t, grid) + expected_over_positions(model.alpha, C)
        values[t] = bellman_select(E, grid)[0]
    timings = {"setup": t_setup, "backward": time.perf_counter() - t0 - t_setup}
    log.info("backward induction: %d epochs, %d positions, %d grid points, %.1fs",
             T, P, m, timings["backward"])
    return Solution(model, grid, values, cont, fast, neighbors, timings)


# -- policy --------------------------------------------------------------------------------


def policy_action(t: int, p, z, solution: Solution) -> int:
    """Action maximizing reward plus expected continuation; ties to the lowest index."""
    q = solution.action_values(t, np.asarray(z, dtype=float)[None])[0]
    return int(np.argmax(q[:, solution.model.index(*p)]))


def policy_actions(t: int, states: np.ndarray, solution: Solution) -> np.ndarray:
    """Policy at many states for all positions, shape ``(N, P)``."""
    return solution.action_values(t, states).argmax(axis=1)


@dataclass(frozen=True)
class Threshold:
    reserve: int
    mode: int
    price: float
    below: int
    above: int


def policy_boundaries(t: int, mode: int, solution: Solution, prices: np.ndarray,
                      base_state: np.ndarray | None = None) -> dict[int, list[Threshold]]:
    """Per reserve level, the prices at which the policy action changes.

    ``prices`` is scanned in increasing order; each threshold is the first
    scanned price with the new action. Non-price coordinates of the state are
    taken from ``base_state`` (defaults to the model's initial state).
    """
    model = solution.model
    prices = np.sort(np.asarray(prices, dtype=float))
    if base_state is None:
        base_state = model.price.initial_state(1.0)
    states = np.repeat(np.asarray(base_state, dtype=float)[None], len(prices), axis=0)
    j = model.price.price_index
    states[:, j] = np.log(prices) if model.price.log_price else prices
    acts = policy_actions(t, states, solution)
    out: dict[int, list[Threshold]] = {}
    for reserve in range(model.R + 1):
        col = acts[:, model.index(reserve, mode)]
        change = np.nonzero(col[1:] != col[:-1])[0] + 1
        out[reserve] = [Threshold(reserve, mode, float(prices[i]), int(col[i - 1]), int(col[i])) for i in change]
    return out
