"""Disturbance matrices of the linear price dynamics ``Z[t+1] = W[t+1] Z[t]``.

Each price model builds its random matrix from one standard normal draw per
step. Solvers use a finite quantile sampling of that law; diagnostics draw
from the continuous law itself.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import norm


def normal_quantile_sampling(n: int) -> np.ndarray:
    """Midpoint standard normal quantiles ``Phi^-1((k - 0.5) / n)``, k = 1..n.

    The lower half is mirrored so the atoms are exactly symmetric about zero.
    """
    if n < 1:
        raise ValueError("need at least one quantile")
    half = n // 2
    lower = norm.ppf((np.arange(1, half + 1) - 0.5) / n)
    mid = [0.0] if n % 2 else []
    return np.concatenate([lower, mid, -lower[::-1]])


@dataclass(frozen=True, eq=False)
class DisturbanceSampling:
    """Weighted atoms ``(nu[k], W[k])`` approximating a disturbance law."""

    matrices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        W = np.array(self.matrices, dtype=float)
        nu = np.array(self.weights, dtype=float)
        if W.ndim == 2:
            W = W[None]
        if W.ndim != 3 or W.shape[1] != W.shape[2]:
            raise ValueError("matrices must have shape (n, d, d)")
        if nu.shape != (W.shape[0],):
            raise ValueError("need one weight per matrix")
        if np.any(nu < 0) or abs(nu.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to one")
        e0 = np.zeros(W.shape[1])
        e0[0] = 1.0
        if not np.all(W[:, 0, :] == e0):
            raise ValueError("disturbance matrices must keep the constant coordinate")
        W.setflags(write=False)
        nu.setflags(write=False)
        object.__setattr__(self, "matrices", W)
        object.__setattr__(self, "weights", nu)

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.matrices.shape[1]

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        """Matrices drawn from the atoms with probabilities ``weights``."""
        idx = rng.choice(self.n, size=size, p=self.weights)
        return self.matrices[idx]

    @classmethod
    def deterministic(cls, W) -> "DisturbanceSampling":
        return cls(np.asarray(W, dtype=float)[None], np.ones(1))


class PriceModel:
    """Common interface of the linear price models.

    Subclasses set ``dim``, ``price_index`` (the state coordinate carrying the
    price) and ``log_price`` (whether that coordinate is a log price).
    """

    dim: int
    price_index: int
    log_price: bool

    def matrices(self, normals) -> np.ndarray:
        raise NotImplementedError

    def initial_state(self, price: float) -> np.ndarray:
        raise NotImplementedError

    def sampling(self, n: int) -> DisturbanceSampling:
        return DisturbanceSampling(self.matrices(normal_quantile_sampling(n)), np.full(n, 1.0 / n))

    def draw(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.matrices(rng.standard_normal(size))

    def price(self, states: np.ndarray) -> np.ndarray:
        x = np.asarray(states)[..., self.price_index]
        return np.exp(x) if self.log_price else x


def _check_common(sigma2: float, dt: float) -> None:
    if not sigma2 > 0:
        raise ValueError("variance parameter must be positive")
    if not dt > 0:
        raise ValueError("time step must be positive")


@dataclass(frozen=True)
class GeometricBrownian(PriceModel):
    """Price factor ``exp((mu - sigma2/2) dt + sqrt(sigma2 dt) N)`` on state ``(1, price)``."""

    mu: float = 0.09
    sigma2: float = 0.08
    dt: float = 0.25

    dim = 2
    price_index = 1
    log_price = False

    def __post_init__(self):
        _check_common(self.sigma2, self.dt)

    def matrices(self, normals) -> np.ndarray:
        N = np.asarray(normals, dtype=float)
        W = np.zeros(N.shape + (2, 2))
        W[..., 0, 0] = 1.0
        W[..., 1, 1] = np.exp((self.mu - self.sigma2 / 2) * self.dt + math.sqrt(self.sigma2 * self.dt) * N)
        return W

    def initial_state(self, price: float) -> np.ndarray:
        return np.array([1.0, float(price)])


@dataclass(frozen=True)
class LogAR1(PriceModel):
    """AR(1) log price on state ``(1, log price)``; ``phi = 1`` is the GBM case."""

    mu: float = 0.09
    sigma2: float = 0.08
    dt: float = 0.25
    phi: float = 1.0

    dim = 2
    price_index = 1
    log_price = True

    def __post_init__(self):
        _check_common(self.sigma2, self.dt)
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("phi must lie in [0, 1]")

    def matrices(self, normals) -> np.ndarray:
        N = np.asarray(normals, dtype=float)
        W = np.zeros(N.shape + (2, 2))
        W[..., 0, 0] = 1.0
        W[..., 1, 0] = (self.mu - self.sigma2 / 2) * self.dt + math.sqrt(self.sigma2 * self.dt) * N
        W[..., 1, 1] = self.phi
        return W

    def initial_state(self, price: float) -> np.ndarray:
        return np.array([1.0, math.log(price)])


@dataclass(frozen=True)
class GarchLike(PriceModel):
    """Linear GARCH(1,1)-type model on state ``(1, sigma_t^2, Y_t^2, log price)``.

    ``sigma2`` is the long-run level of the volatility proxy; a single normal
    draw drives every random row of the step matrix.
    """

    kappa: float = 0.05
    phi: float = 0.6
    beta1: float = 0.8
    beta2: float = 0.1
    sigma2: float = math.sqrt(0.08)
    dt: float = 0.25
    sigma0_sq: float = math.sqrt(0.08)
    y0_sq: float = 1.0

    dim = 4
    price_index = 3
    log_price = True

    def __post_init__(self):
        _check_common(self.sigma2, self.dt)
        if not 0.0 <= self.phi <= 1.0:
            raise ValueError("phi must lie in [0, 1]")
        if self.beta1 < 0 or self.beta2 < 0 or self.beta1 + self.beta2 > 1:
            raise ValueError("need beta1, beta2 >= 0 and beta1 + beta2 <= 1")

    @property
    def beta(self) -> float:
        return 1.0 - self.beta1 - self.beta2

    def matrices(self, normals) -> np.ndarray:
        N = np.asarray(normals, dtype=float)
        vol = np.array([self.sigma2 * self.beta, self.beta1, self.beta2])
        sq = math.sqrt(self.dt)
        W = np.zeros(N.shape + (4, 4))
        W[..., 0, 0] = 1.0
        W[..., 1, :3] = vol
        W[..., 2, :3] = (N ** 2)[..., None] * vol
        W[..., 3, :3] = (sq * N)[..., None] * vol
        W[..., 3, 0] += self.kappa * self.dt
        W[..., 3, 3] = self.phi
        return W

    def initial_state(self, price: float) -> np.ndarray:
        return np.array([1.0, self.sigma0_sq, self.y0_sq, math.log(price)])


def path_rng(seed: int, k: int) -> np.random.Generator:
    """Independent random stream of path ``k``."""
    return np.random.default_rng([int(seed), int(k)])


@dataclass(frozen=True, eq=False)
class PathSet:
    """Trajectories ``states[k, t]`` with ``states[k, t+1] = matrices[k, t] @ states[k, t]``."""

    states: np.ndarray
    matrices: np.ndarray
    seed: int = 0
    first_path: int = field(default=0)

    @property
    def K(self) -> int:
        return self.states.shape[0]

    @property
    def T(self) -> int:
        return self.states.shape[1] - 1


def propagate(z0: np.ndarray, matrices: np.ndarray) -> np.ndarray:
    """Run the linear recursion from ``z0`` through ``matrices`` of shape ``(K, T, d, d)``."""
    K, T, d, _ = matrices.shape
    states = np.empty((K, T + 1, d))
    states[:, 0] = z0
    for t in range(T):
        states[:, t + 1] = np.einsum("kij,kj->ki", matrices[:, t], states[:, t])
    return states


def simulate_paths(law, z0, T: int, K: int, seed: int = 0, first_path: int = 0) -> PathSet:
    """``K`` trajectories of length ``T`` from ``z0``.

    ``law`` is a :class:`PriceModel` (exact continuous law) or a
    :class:`DisturbanceSampling`. Path ``k`` uses its own stream
    ``path_rng(seed, k)`` and consumes its first ``T`` draws, so a path does
    not depend on how many others are simulated alongside it.
    """
    z0 = np.asarray(z0, dtype=float)
    mats = np.stack([law.draw(path_rng(seed, k), T) for k in range(first_path, first_path + K)])
    return PathSet(propagate(z0, mats), mats, seed, first_path)


def save_paths_csv(paths: PathSet, path: str | Path, price_model: PriceModel | None = None) -> None:
    """One line per (path, t) with the state coordinates and, optionally, the price."""
    d = paths.states.shape[-1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        header = ["path", "t"] + [f"z{i}" for i in range(d)]
        if price_model is not None:
            header.append("price")
        w.writerow(header)
        prices = price_model.price(paths.states) if price_model is not None else None
        for k in range(paths.K):
            for t in range(paths.T + 1):
                row = [paths.first_path + k, t] + [f"{v:.10g}" for v in paths.states[k, t]]
                if prices is not None:
                    row.append(f"{prices[k, t]:.10g}")
                w.writerow(row)
