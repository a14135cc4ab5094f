from __future__ import annotations

import sys

import numpy as np
from hypothesis import HealthCheck, settings

from convexswitch import EconomicParams, GeometricBrownian, LogAR1, ResourceModel
from convexswitch.pwlc import Grid
from oracle import ScenarioTree

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def small_gbm(T: int = 4, R: int = 3, **econ) -> ResourceModel:
    """GBM resource with ``T`` quarterly epochs and ``R`` reserve units."""
    params = EconomicParams(horizon=0.25 * T, reserve_years=0.25 * R, **econ)
    return ResourceModel(GeometricBrownian(), params)


ECON = dict(dt=0.25, r=0.1, rho=0.08, zeta=0.02, m0=0.5, c0=0.2)
CASES = [
    # (price law, reserve units, wastage, start price)
    (GeometricBrownian(), 1, 0.0, 0.8),
    (GeometricBrownian(sigma2=0.3), 2, 0.5, 0.5),
    (LogAR1(phi=0.6), 2, 0.0, 0.6),
]


def tiny_instance(law, R, w, z0):
    """Two-epoch instance whose grid holds every reachable state, plus its scenario tree."""
    model = ResourceModel(law, EconomicParams(horizon=0.5, reserve_years=0.25 * R, wastage=w))
    S = law.sampling(2)
    a, b = S.matrices[:, 1, 0], S.matrices[:, 1, 1]
    x0 = law.initial_state(z0)[1]
    tree = ScenarioTree(x0, a, b, S.weights, model.T, (lambda x: np.exp(x)) if law.log_price else (lambda x: x))
    G = Grid(np.column_stack([np.ones(len(tree.points())), tree.points()]))
    return model, S, G, tree, x0



def pytest_terminal_summary(terminalreporter):
    acc = sys.modules.get("test_acceptance")
    lines = [acc.RESULTS[n] for n in sorted(acc.RESULTS)] if acc else []
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
