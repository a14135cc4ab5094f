"""Commodity extraction as a switching problem.

Positions are ``(reserve, mode)`` with reserve in ``0..R`` and mode
``CLOSED = 1`` or ``OPENED = 2``; reserve 0 means exhausted or abandoned.
Actions are ``ABANDON = 0``, ``CLOSE = 1`` and ``OPEN = 2``.

Rewards are already discounted to time zero. For reserve > 0 and action ``a``

    r_t = h_t(z) 1{a=2} - m_t 1{a=1} - c_t 1{a in {1,2}} |mode - a| - psi_t(reserve, z)

where ``h_t(z) = slope_t * price(z) - intercept_t``. Maintenance and switching
enter as expenses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import NamedTuple

import numpy as np

from .disturbances import PriceModel
from .pwlc import ConvexHandle, Grid


class Mode(IntEnum):
    CLOSED = 1
    OPENED = 2


class Action(IntEnum):
    ABANDON = 0
    CLOSE = 1
    OPEN = 2


ACTIONS = tuple(Action)


class Position(NamedTuple):
    reserve: int
    mode: int


@dataclass(frozen=True)
class EconomicParams:
    """Quarterly economics of the extraction problem (rates are per year)."""

    dt: float = 0.25
    horizon: float = 30.0
    r: float = 0.1
    rho: float = 0.08
    zeta: float = 0.02
    m0: float = 0.5
    c0: float = 0.2
    revenue_slope: float = 5.0
    revenue_intercept: float = 2.5
    reserve_years: float = 15.0
    wastage: float = 0.0
    penalty: float = 0.0
    delivery_start: int | None = None
    delivery_schedule: dict | None = field(default=None)
    # the schedule counts epochs from 1, so decision epoch t is checked against p*_{t + offset}
    delivery_offset: int = 1
    printed_signs: bool = False

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not 0.0 <= self.wastage <= 1.0:
            raise ValueError("wastage probability must lie in [0, 1]")
        if self.penalty < 0:
            raise ValueError("penalty proportion must be nonnegative")
        for name in ("r", "rho", "zeta", "m0", "c0", "horizon", "reserve_years"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        if self.delivery_schedule is not None:
            sched = {int(k): float(v) for k, v in dict(self.delivery_schedule).items()}
            object.__setattr__(self, "delivery_schedule", sched)

    @property
    def T(self) -> int:
        """Index of the final epoch, where the scrap value is collected."""
        return int(round(self.horizon / self.dt))

    @property
    def R(self) -> int:
        return int(round(self.reserve_years / self.dt))


class ResourceModel:
    """Positions, controlled transitions and rewards for one price model."""

    def __init__(self, price: PriceModel, econ: EconomicParams | None = None):
        self.price = price
        self.econ = econ if econ is not None else EconomicParams()
        self.T = self.econ.T
        self.R = self.econ.R
        self.n_positions = 2 * (self.R + 1)
        self.alpha = self._build_transitions()
        self._reserve = np.repeat(np.arange(self.R + 1), 2)
        self._mode = np.tile([1, 2], self.R + 1)

    @property
    def dim(self) -> int:
        return self.price.dim

    # -- positions -------------------------------------------------------------

    def index(self, reserve: int, mode: int) -> int:
        if not 0 <= reserve <= self.R or mode not in (1, 2):
            raise ValueError(f"invalid position ({reserve}, {mode})")
        return 2 * int(reserve) + int(mode) - 1

    def position(self, idx: int) -> Position:
        return Position(int(idx) // 2, int(idx) % 2 + 1)

    @property
    def positions(self) -> list[Position]:
        return [self.position(i) for i in range(self.n_positions)]

    # -- transitions -----------------------------------------------------------

    def transition_probs(self, p, a) -> list[tuple[Position, float]]:
        """Successor positions with their probabilities, same-position outcomes merged."""
        reserve, mode = p
        w = self.econ.wastage
        if a == Action.OPEN:
            outcomes = [(max(reserve - 2, 0), 2, w), (max(reserve - 1, 0), 2, 1.0 - w)]
        elif a == Action.CLOSE:
            outcomes = [(reserve, 1, 1.0)]
        elif a == Action.ABANDON:
            outcomes = [(0, mode, 1.0)]
        else:
            raise ValueError(f"unknown action {a}")
        merged: dict[Position, float] = {}
        for res, md, prob in outcomes:
            if prob > 0:
                key = Position(res, md)
                merged[key] = merged.get(key, 0.0) + prob
        return list(merged.items())

    def _build_transitions(self) -> np.ndarray:
        P = self.n_positions
        alpha = np.zeros((len(ACTIONS), P, P))
        for a in ACTIONS:
            for i in range(P):
                for q, prob in self.transition_probs(self.position(i), a):
                    alpha[a, i, self.index(*q)] += prob
        return alpha

    # -- cash flows --------------------------------------------------------------

    def _growth(self, t) -> float:
        e = self.econ
        return math.exp((e.rho - e.r - e.zeta) * t * e.dt)

    def maintenance_cost(self, t) -> float:
        e = self.econ
        return e.m0 * e.dt * self._growth(t)

    def switching_cost(self, t) -> float:
        return self.econ.c0 * self._growth(t)

    def revenue_slope(self, t) -> float:
        e = self.econ
        return e.revenue_slope * e.dt * math.exp(-(e.r + e.zeta) * t * e.dt)

    def revenue_intercept(self, t) -> float:
        e = self.econ
        return e.revenue_intercept * e.dt * self._growth(t)

    def revenue(self, t, z):
        """Cash flow ``h_t`` of an opened resource at state(s) ``z``."""
        return self.revenue_slope(t) * self.price.price(z) - self.revenue_intercept(t)

    def delivery_target(self, t, p0_reserve: int | None = None) -> float:
        e = self.econ
        p0 = p0_reserve if p0_reserve is not None else e.delivery_start
        if p0 is None:
            p0 = self.R
        if e.delivery_schedule is not None:
            return e.delivery_schedule.get(int(t), p0)
        if 5 <= t <= 41 and (t - 5) % 4 == 0:
            return p0 - 0.75 * (t - 1)
        return p0

    def shortfall(self, t) -> np.ndarray:
        """Per position, the excess reserve over the contracted level at decision epoch ``t``."""
        target = self.delivery_target(t + self.econ.delivery_offset)
        return np.maximum(self._reserve - target, 0.0)

    def penalty(self, t, p, z):
        """Delivery penalty at decision epoch ``t`` (0 if the contract is met)."""
        reserve = p[0]
        excess = reserve - self.delivery_target(t + self.econ.delivery_offset)
        if self.econ.penalty == 0 or excess <= 0:
            return 0.0 * self.price.price(z)
        return self.econ.penalty * self.price.price(z) * excess

    def reward_coefficients(self, t) -> tuple[np.ndarray, np.ndarray]:
        """``(coef, const)`` of shape ``(A, P)`` with ``r_t = coef * price(z) + const``."""
        P = self.n_positions
        coef = np.zeros((len(ACTIONS), P))
        const = np.zeros((len(ACTIONS), P))
        live = self._reserve > 0
        sign = 1.0 if self.econ.printed_signs else -1.0
        m_t, c_t = self.maintenance_cost(t), self.switching_cost(t)
        coef[Action.OPEN] = self.revenue_slope(t)
        const[Action.OPEN] = -self.revenue_intercept(t)
        const[Action.CLOSE] = sign * m_t
        for a in (Action.CLOSE, Action.OPEN):
            const[a] += sign * c_t * np.abs(self._mode - int(a))
        if self.econ.penalty:
            coef -= self.econ.penalty * self.shortfall(t)[None, :]
        coef[:, ~live] = 0.0
        const[:, ~live] = 0.0
        return coef, const

    def rewards(self, t, states) -> np.ndarray:
        """All rewards at once: shape ``states.shape[:-1] + (A, P)``."""
        coef, const = self.reward_coefficients(t)
        u = self.price.price(states)
        return u[..., None, None] * coef + const

    def reward(self, t, p, z, a) -> float:
        if not 0 <= t <= self.T:
            raise ValueError(f"time {t} outside 0..{self.T}")
        coef, const = self.reward_coefficients(t)
        i = self.index(*p)
        return float(coef[a, i] * self.price.price(np.asarray(z, dtype=float)) + const[a, i])

    def scrap(self, p, z) -> float:
        return max(self.reward(self.T, p, z, a) for a in ACTIONS)

    def scraps(self, states) -> np.ndarray:
        return self.rewards(self.T, states).max(axis=-2)

    # -- subgradients --------------------------------------------------------------

    def price_tangents(self, points: np.ndarray) -> np.ndarray:
        """Tangent rows of ``z -> price(z)`` at each point (exact rows if linear)."""
        points = np.asarray(points, dtype=float)
        j = self.price.price_index
        rows = np.zeros_like(points)
        if self.price.log_price:
            x = points[:, j]
            ex = np.exp(x)
            rows[:, 0] = ex * (1.0 - x)
            rows[:, j] = ex
        else:
            rows[:, j] = 1.0
        return rows

    def reward_tangents(self, t, grid: Grid) -> np.ndarray:
        """Tangent rows of every reward at every grid point, shape ``(A, P, m, d)``."""
        coef, const = self.reward_coefficients(t)
        U = self.price_tangents(grid.points)
        rows = coef[:, :, None, None] * U[None, None]
        rows[..., 0] += const[:, :, None]
        return rows

    def reward_handle(self, t, p, a) -> ConvexHandle:
        coef, const = self.reward_coefficients(t)
        i = self.index(*p)
        c, k = coef[a, i], const[a, i]
        j = self.price.price_index
        log = self.price.log_price

        def value(z):
            return c * self.price.price(np.asarray(z, dtype=float)) + k

        def subgradient(z):
            z = np.asarray(z, dtype=float)
            g = np.zeros_like(z)
            g[..., j] = c * (np.exp(z[..., j]) if log else 1.0)
            return g

        return ConvexHandle(value, subgradient, vectorized=True)
