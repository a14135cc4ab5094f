from __future__ import annotations

import math

import numpy as np
import pytest

from conftest import CASES, ECON, small_gbm, tiny_instance
from convexswitch import pwlc
from convexswitch.disturbances import DisturbanceSampling, GeometricBrownian, LogAR1, simulate_paths
from convexswitch.duality import (
    BOUNDS_HEADER, BoundEstimate, _path_draws, bounds_row, control_variate, pathwise_bounds,
    pathwise_values, write_bounds_csv,
)
from convexswitch.grids import equidistant_grid
from convexswitch.model import EconomicParams, ResourceModel
from convexswitch.solver import Solution, backward_induction
from oracle import optimal_value


@pytest.fixture(scope="module")
def solved():
    model = small_gbm(T=12, R=6)
    G = equidistant_grid(0, 6, 121)
    return backward_induction(model, G, model.price.sampling(40))


def _constant_solution(model, G, c):
    values = np.zeros((model.T + 1, model.n_positions, G.m, 2))
    values[..., 0] = c
    return Solution(model, G, values, values[:-1].copy())


# -- control variates -----------------------------------------------------------------------


def test_control_variate_vanishes_for_constant_values():
    model = small_gbm(T=3, R=2)
    G = equidistant_grid(0, 4, 9)
    sol = _constant_solution(model, G, 0.75)
    rng = np.random.default_rng(0)
    for a in range(3):
        W = model.price.matrices(rng.standard_normal())
        phi = control_variate(sol, 2, (2, 2), [1.0, 1.0], a, W, I=13, rng=rng)
        # the mean of identical values may round by an ulp
        assert abs(phi) <= 1e-15


def test_control_variate_vanishes_for_deterministic_law(solved):
    law = DisturbanceSampling.deterministic(GeometricBrownian().matrices(0.3))
    W = law.matrices[0]
    for t in (1, 6, 12):
        for I in (None, 1, 8):
            phi = control_variate(solved, t, (3, 2), [1.0, 0.9], 2, W, I=I, law=law, rng=np.random.default_rng(1))
            assert abs(phi) <= 1e-14


@pytest.mark.property
@pytest.mark.parametrize("scheme", ["stratified", "iid"])
def test_control_variate_has_zero_mean(solved, scheme):
    model = solved.model
    rng = np.random.default_rng(42)
    z = np.array([1.0, 0.8])
    phis = [control_variate(solved, 5, (4, 2), z, 2, model.price.draw(rng, ()), I=10, rng=rng, scheme=scheme)
            for _ in range(4000)]
    phis = np.asarray(phis)
    se = phis.std(ddof=1) / math.sqrt(len(phis))
    assert se > 0
    assert abs(phis.mean()) <= 3 * se


def test_control_variate_index_range(solved):
    with pytest.raises(ValueError):
        control_variate(solved, 0, (1, 2), [1.0, 1.0], 2, np.eye(2), I=3)
    with pytest.raises(ValueError):
        control_variate(solved, 1, (1, 2), [1.0, 1.0], 2, np.eye(2), I=None)


# -- bounds -------------------------------------------------------------------------------


def test_zero_rewards_give_zero_bounds():
    model = small_gbm(T=4, R=2, revenue_slope=0.0, revenue_intercept=0.0, m0=0.0, c0=0.0)
    sol = backward_induction(model, equidistant_grid(0, 3, 31), model.price.sampling(9))
    est = pathwise_bounds(sol, (2, 2), [1.0, 0.5], K=20, I=5, seed=3)
    assert (est.lower_mean, est.upper_mean, est.lower_se, est.upper_se) == (0.0, 0.0, 0.0, 0.0)


@pytest.mark.property
@pytest.mark.parametrize("law, R, w, z0", CASES)
def test_tiny_instance_bounds_match_scenario_tree(law, R, w, z0):
    model, S, G, tree, x0 = tiny_instance(law, R, w, z0)
    e = dict(ECON, w=w)
    sol = backward_induction(model, G, S)
    res = pathwise_values(sol, np.array([1.0, x0]), K=40, I=None, seed=5, law=S)
    for p in model.positions:
        want = optimal_value(e, tree, tuple(p))
        i = model.index(*p)
        assert np.max(np.abs(res.lower[:, i] - want)) <= 1e-10
        assert np.max(np.abs(res.upper[:, i] - want)) <= 1e-10


def test_zero_variance_with_deterministic_law_and_exact_values():
    W = GeometricBrownian().matrices(0.4)
    law = DisturbanceSampling.deterministic(W)
    model = ResourceModel(GeometricBrownian(), EconomicParams(horizon=1.5, reserve_years=1.0))
    x = [0.7]
    for _ in range(model.T):
        x.append(W[1, 1] * x[-1])
    G = pwlc.Grid(np.column_stack([np.ones(len(x)), sorted(x)]))
    sol = backward_induction(model, G, law)
    est = pathwise_bounds(sol, (4, 1), [1.0, 0.7], K=25, I=4, seed=0, law=law)
    assert est.lower_se == 0.0 and est.upper_se == 0.0
    assert abs(est.upper_mean - est.lower_mean) <= 1e-12
    v0 = pwlc.evaluate(sol.values[0, model.index(4, 1)], [1.0, 0.7])
    assert abs(est.lower_mean - v0) <= 1e-12


@pytest.mark.property
@pytest.mark.parametrize("scheme", ["stratified", "iid"])
def test_pathwise_dominance_and_mean_ordering(solved, scheme):
    res = pathwise_values(solved, [1.0, 0.6], K=60, I=15, seed=7, scheme=scheme)
    assert np.all(res.lower <= res.upper + 1e-9)
    for i in range(solved.model.n_positions):
        est = res.estimate(i)
        assert est.lower_mean <= est.upper_mean + 3 * (est.lower_se + est.upper_se)
        assert est.lower_se >= 0 and est.upper_se >= 0


def test_lower_bound_is_unbiased_for_policy_value(solved):
    # the control variates have zero mean, so the primal estimates the policy's value
    a = pathwise_bounds(solved, (6, 2), [1.0, 0.8], K=400, I=20, seed=11)
    b = pathwise_bounds(solved, (6, 2), [1.0, 0.8], K=400, I=20, seed=12, scheme="iid")
    assert abs(a.lower_mean - b.lower_mean) <= 3 * (a.lower_se + b.lower_se)


def test_reproducible_and_thread_independent(solved):
    a = pathwise_values(solved, [1.0, 0.6], K=50, I=10, seed=2, threads=1)
    b = pathwise_values(solved, [1.0, 0.6], K=50, I=10, seed=2, threads=1)
    c = pathwise_values(solved, [1.0, 0.6], K=50, I=10, seed=2, threads=4)
    assert a.lower.tobytes() == b.lower.tobytes() == c.lower.tobytes()
    assert a.upper.tobytes() == c.upper.tobytes()


def test_batching_does_not_change_results(solved, monkeypatch):
    import convexswitch.duality as dual
    a = pathwise_values(solved, [1.0, 0.6], K=30, I=10, seed=2)
    monkeypatch.setattr(dual, "_BATCH_VALUES", 5000)
    b = pathwise_values(solved, [1.0, 0.6], K=30, I=10, seed=2, threads=3)
    assert a.lower.tobytes() == b.lower.tobytes()


def test_single_path_reports_zero_se(solved):
    est = pathwise_bounds(solved, (3, 2), [1.0, 0.6], K=1, I=5, seed=0)
    assert est.lower_se == 0.0 and est.upper_se == 0.0
    assert math.isfinite(est.lower_mean) and math.isfinite(est.upper_mean)


def test_paths_coincide_with_simulated_paths():
    law = LogAR1(phi=0.6)
    ps = simulate_paths(law, law.initial_state(0.4), T=6, K=3, seed=8)
    for k in range(3):
        W, inner = _path_draws(law, 8, k, 6, 4)
        np.testing.assert_array_equal(W, ps.matrices[k])
        assert inner.shape == (6, 4, 2, 2)


def test_invalid_arguments(solved):
    with pytest.raises(ValueError):
        pathwise_values(solved, [1.0, 0.6], K=0, I=5)
    with pytest.raises(ValueError):
        pathwise_values(solved, [1.0, 0.6], K=5, I=0)
    with pytest.raises(ValueError):
        pathwise_values(solved, [1.0, 0.6], K=5, I=None)
    with pytest.raises(ValueError):
        pathwise_values(solved, [1.0, 0.6], K=5, I=5, scheme="antithetic")


def test_bounds_csv(tmp_path):
    est = BoundEstimate(34.16671234, 34.1681, 0.0062, 0.00624, 1000, 1000, 0)
    row = bounds_row("gbm", 1.0, 2, est)
    assert row == ["gbm", "1", "2", "34.1667", "0.0062", "34.1681", "0.0062", "1000", "1000", "0"]
    write_bounds_csv(tmp_path / "b.csv", [row])
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines == [",".join(BOUNDS_HEADER), ",".join(row)]
    assert bounds_row("gbm", 0.5, 1, BoundEstimate(1, 1, 0, 0, 1, None, 0))[8] == "exact"
