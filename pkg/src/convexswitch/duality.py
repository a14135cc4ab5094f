"""Pathwise lower and upper bounds on the value of a solved switching problem.

Along each simulated price path two backward recursions run side by side: the
lower one follows the policy built from the continuation values, the upper
one takes the best action in hindsight. Both are corrected by zero-mean
control variates built from sub-simulations, so the two means bracket the
true value and their gap measures the quality of the solution.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.special import ndtri

from .disturbances import DisturbanceSampling, PriceModel, path_rng, propagate
from .solver import Solution

# budget (in evaluated values) of one batch of paths; fixed so results never depend on threads
_BATCH_VALUES = 4_000_000


@dataclass(frozen=True)
class BoundEstimate:
    """Primal (lower) and dual (upper) Monte Carlo estimates."""

    lower_mean: float
    upper_mean: float
    lower_se: float
    upper_se: float
    K: int
    I: int | None
    seed: int

    @property
    def gap(self) -> float:
        return self.upper_mean - self.lower_mean


@dataclass(frozen=True, eq=False)
class PathwiseBounds:
    """Per-path values ``lower[k, p]`` and ``upper[k, p]`` at time 0 for every position."""

    lower: np.ndarray
    upper: np.ndarray
    I: int | None
    seed: int

    @property
    def K(self) -> int:
        return self.lower.shape[0]

    def estimate(self, p_index: int) -> BoundEstimate:
        lo, up = self.lower[:, p_index], self.upper[:, p_index]
        return BoundEstimate(float(lo.mean()), float(up.mean()), _se(lo), _se(up), self.K, self.I, self.seed)


def _se(x: np.ndarray) -> float:
    # a single path has no spread estimate; report 0 so the output stays total
    if len(x) < 2:
        return 0.0
    return float(x.std(ddof=1) / math.sqrt(len(x)))


SCHEMES = ("stratified", "iid")


def _draw(law, rng: np.random.Generator, size) -> np.ndarray:
    return law.draw(rng, size)


def _inner_draws(law, rng: np.random.Generator, T: int, I: int, scheme: str) -> np.ndarray:
    """``I`` sub-simulation matrices per step, shape ``(T, I, d, d)``.

    ``"iid"`` draws independently from the law. ``"stratified"`` splits the
    driving normal into ``I`` equiprobable strata and draws one point from each;
    every draw still has the exact law, so the control variate keeps zero mean,
    while the error of the inner mean drops far below the i.i.d. rate.
    Finite atom laws are always sampled i.i.d.
    """
    if scheme not in SCHEMES:
        raise ValueError(f"unknown sub-simulation scheme {scheme!r}")
    if scheme == "iid" or not isinstance(law, PriceModel):
        return _draw(law, rng, (T, I))
    u = (np.arange(I) + rng.random((T, I))) / I
    return law.matrices(ndtri(u))


def _path_draws(law, seed: int, k: int, T: int, I: int | None, scheme: str = "stratified"):
    """Path matrices ``(T, d, d)`` and sub-simulation matrices ``(T, I, d, d)`` of path ``k``.

    The stream first yields the ``T`` path steps, so paths coincide with
    :func:`~convexswitch.disturbances.simulate_paths` for the same seed.
    """
    rng = path_rng(seed, k)
    W = _draw(law, rng, T)
    inner = _inner_draws(law, rng, T, I, scheme) if I is not None else None
    return W, inner


def control_variate(solution: Solution, t: int, p, z, a: int, W, I: int | None = None,
                    rng: np.random.Generator | None = None, law=None, scheme: str = "stratified") -> float:
    """Zero-mean increment ``phi_t(p, z, a)`` for the realized step ``W`` out of ``z``.

    ``sum_p' alpha[a, p, p'] (mean_i v_t(p', W_i z) - v_t(p', W z))`` with ``I``
    fresh draws ``W_i`` from ``law`` (the model's price law by default). With
    ``I=None`` and a finite ``law`` the inner mean is the exact expectation.
    """
    if not 1 <= t <= solution.T:
        raise ValueError(f"control variate index {t} outside 1..{solution.T}")
    model = solution.model
    law = model.price if law is None else law
    z = np.asarray(z, dtype=float)
    if I is None:
        if not isinstance(law, DisturbanceSampling):
            raise ValueError("exact inner expectation needs a finite disturbance law")
        inner, w = law.matrices, law.weights
    else:
        if I < 1:
            raise ValueError("need at least one sub-simulation")
        rng = rng if rng is not None else np.random.default_rng()
        inner, w = _inner_draws(law, rng, 1, I, scheme)[0], np.full(I, 1.0 / I)
    states = np.concatenate([inner @ z, (np.asarray(W, dtype=float) @ z)[None]])
    vals = solution.evaluate(solution.values[t], states)  # (P, I + 1)
    diff = vals[:, :-1] @ w - vals[:, -1]
    return float(model.alpha[a, model.index(*p)] @ diff)


def _batch(solution: Solution, law, z0: np.ndarray, seed: int, first: int, count: int,
           I: int | None, scheme: str) -> tuple[np.ndarray, np.ndarray]:
    model = solution.model
    T, P, d = solution.T, model.n_positions, z0.shape[0]
    alpha = model.alpha
    draws = [_path_draws(law, seed, k, T, I, scheme) for k in range(first, first + count)]
    mats = np.stack([w for w, _ in draws])
    states = propagate(z0, mats)  # (B, T+1, d)
    if I is None:
        atoms, weights = law.matrices, law.weights
    else:
        subs = np.stack([s for _, s in draws])  # (B, T, I, d, d)
        weights = np.full(I, 1.0 / I)

    lower = model.scraps(states[:, T])  # (B, P)
    upper = lower.copy()
    for t in range(T - 1, -1, -1):
        z = states[:, t]
        if I is None:
            inner = np.einsum("kij,bj->bki", atoms, z)
        else:
            inner = np.einsum("bkij,bj->bki", subs[:, t], z)
        n_in = inner.shape[1]
        pts = np.concatenate([inner.reshape(-1, d), states[:, t + 1]])
        vals = solution.evaluate(solution.values[t + 1], pts)  # (P, B*n_in + B)
        mean_in = vals[:, :count * n_in].reshape(P, count, n_in) @ weights
        D = mean_in - vals[:, count * n_in:]  # (P, B)
        phi = np.einsum("apq,qb->bap", alpha, D)

        r = model.rewards(t, z)  # (B, A, P)
        cont = solution.evaluate(solution.continuation[t], z)  # (P, B)
        q = r + np.einsum("apq,qb->bap", alpha, cont)
        policy = q.argmax(axis=1)  # (B, P)

        base = r + phi
        lo_all = base + np.einsum("apq,bq->bap", alpha, lower)
        up_all = base + np.einsum("apq,bq->bap", alpha, upper)
        lower = np.take_along_axis(lo_all, policy[:, None, :], axis=1)[:, 0]
        upper = up_all.max(axis=1)
    return lower, upper


def pathwise_values(solution: Solution, z0, K: int, I: int | None, seed: int = 0,
                    law=None, threads: int = 1, scheme: str = "stratified") -> PathwiseBounds:
    """Lower and upper recursions along ``K`` paths from ``z0`` for all starting positions.

    Path ``k`` and its sub-simulations come from the stream ``(seed, k)``.
    ``law`` defaults to the model's continuous price law; pass a finite
    :class:`DisturbanceSampling` together with ``I=None`` to replace the
    sub-simulation mean by the exact expectation over its atoms.
    """
    if K < 1:
        raise ValueError("need at least one path")
    if I is not None and I < 1:
        raise ValueError("need at least one sub-simulation")
    model = solution.model
    law = model.price if law is None else law
    if I is None and not isinstance(law, DisturbanceSampling):
        raise ValueError("exact inner expectation needs a finite disturbance law")
    if not isinstance(law, (PriceModel, DisturbanceSampling)):
        raise TypeError("law must be a price model or a disturbance sampling")
    z0 = np.asarray(z0, dtype=float)
    n_in = law.n if I is None else I
    if scheme not in SCHEMES:
        raise ValueError(f"unknown sub-simulation scheme {scheme!r}")
    B = max(1, _BATCH_VALUES // (model.n_positions * (n_in + 1)))
    starts = list(range(0, K, B))

    def run(s):
        return _batch(solution, law, z0, seed, s, min(B, K - s), I, scheme)

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(run, starts))
    else:
        parts = [run(s) for s in starts]
    lower = np.concatenate([lo for lo, _ in parts])
    upper = np.concatenate([up for _, up in parts])
    return PathwiseBounds(lower, upper, I, seed)


def pathwise_bounds(solution: Solution, p0, z0, K: int, I: int | None, seed: int = 0,
                    law=None, threads: int = 1, scheme: str = "stratified") -> BoundEstimate:
    """Primal and dual estimates with standard errors for the position ``p0``."""
    res = pathwise_values(solution, z0, K, I, seed, law, threads, scheme)
    return res.estimate(solution.model.index(*p0))


BOUNDS_HEADER = ["model", "z0", "mode", "primal", "primal_se", "dual", "dual_se", "K", "I", "seed"]


def bounds_row(model_id: str, z0: float, mode: int, est: BoundEstimate) -> list[str]:
    """CSV fields: values to 6 significant digits, standard errors to 4 decimals."""
    return [model_id, f"{z0:g}", str(int(mode)), f"{est.lower_mean:.6g}", f"{est.lower_se:.4f}",
            f"{est.upper_mean:.6g}", f"{est.upper_se:.4f}", str(est.K),
            "exact" if est.I is None else str(est.I), str(est.seed)]


def write_bounds_csv(path: str | Path, rows: list[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(BOUNDS_HEADER)
        w.writerows(rows)
