"""Brute-force scenario-tree oracle for tiny switching instances.

Independent of the package: rewards and transitions are coded from the
formulas directly, and the optimum is found by enumerating every policy.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

OPEN, CLOSE, ABANDON = 2, 1, 0


def growth(e, t):
    return math.exp((e["rho"] - e["r"] - e["zeta"]) * t * e["dt"])


def reward(e, t, reserve, mode, price, a):
    if reserve == 0 or a == ABANDON:
        return 0.0
    c = e["c0"] * growth(e, t) * abs(mode - a)
    if a == OPEN:
        h = 5 * e["dt"] * price * math.exp(-(e["r"] + e["zeta"]) * t * e["dt"]) - 2.5 * e["dt"] * growth(e, t)
        return h - c
    return -e["m0"] * e["dt"] * growth(e, t) - c


def scrap(e, T, reserve, mode, price):
    return max(reward(e, T, reserve, mode, price, a) for a in (ABANDON, CLOSE, OPEN))


def successors(e, reserve, mode, a):
    if a == OPEN:
        w = e["w"]
        out = {}
        for res, prob in ((max(reserve - 2, 0), w), (max(reserve - 1, 0), 1 - w)):
            if prob > 0:
                out[(res, 2)] = out.get((res, 2), 0.0) + prob
        return list(out.items())
    if a == CLOSE:
        return [((reserve, 1), 1.0)]
    return [((0, mode), 1.0)]


class ScenarioTree:
    """Recombination-free tree of states ``x`` driven by atoms ``x -> a_k + b_k x``."""

    def __init__(self, x0, a, b, nu, T, price):
        self.a, self.b, self.nu, self.T, self.price = a, b, nu, T, price
        self.x0 = x0

    def child(self, x, k):
        return self.a[k] + self.b[k] * x

    def points(self):
        xs, layer = {self.x0}, [self.x0]
        for _ in range(self.T):
            layer = [self.child(x, k) for x in layer for k in range(len(self.nu))]
            xs.update(layer)
        return sorted(xs)


def _decision_points(e, tree, p0):
    """Every (t, node path, position) reachable under some policy."""
    pts, frontier = [], [((), p0)]
    for t in range(tree.T):
        nxt = set()
        for node, pos in frontier:
            pts.append((t, node, pos))
            for a in (ABANDON, CLOSE, OPEN):
                for q, _ in successors(e, *pos, a):
                    for k in range(len(tree.nu)):
                        nxt.add((node + (k,), q))
        frontier = sorted(nxt)
    return pts


def _node_state(tree, node):
    x = tree.x0
    for k in node:
        x = tree.child(x, k)
    return x


def policy_value(e, tree, p0, policy):
    """Expected total reward of ``policy`` (a dict keyed by decision point)."""

    def go(t, node, pos):
        x = _node_state(tree, node)
        u = tree.price(x)
        if t == tree.T:
            return scrap(e, tree.T, *pos, u)
        a = policy[(t, node, pos)]
        total = reward(e, t, *pos, u, a)
        for q, prob in successors(e, *pos, a):
            for k, nu in enumerate(tree.nu):
                total += prob * nu * go(t + 1, node + (k,), q)
        return total

    return go(0, (), p0)


def optimal_value(e, tree, p0):
    """Best value over all policies, found by exhaustive enumeration."""
    pts = _decision_points(e, tree, p0)
    best = -np.inf
    for choice in itertools.product((ABANDON, CLOSE, OPEN), repeat=len(pts)):
        best = max(best, policy_value(e, tree, p0, dict(zip(pts, choice))))
    return best
