import json

import numpy as np
import pytest
from numpy.testing import assert_allclose

from models.experiment import ExperimentConfig
from services import barrier, experiments, geometry, toll
from services.barrier import BarrierProblem
from tests.conftest import CONFIG_DIR
from utils.errors import InvalidParameter
from utils.numerics import finite_difference_gradient, finite_difference_jacobian


@pytest.mark.parametrize("n, m_b", [(10, 5), (50, 5), (51, 5), (100, 10), (1200, 120)])
def test_bottleneck_count(n, m_b):
    assert toll.bottleneck_count(n) == m_b


@pytest.mark.parametrize("n", [50, 100])
def test_generator_respects_supports_and_feasibility(n):
    for seed in range(100):
        ti = toll.generate_toll_instance(n, seed, 0.2)
        assert toll.toll_instance_invariants(ti) == [], seed
        assert ti.m_b == toll.bottleneck_count(n)
        assert np.all((ti.u >= 0.8) & (ti.u <= 1.2))
        assert np.all((ti.ell >= 0.5) & (ti.ell <= 2.0))
        assert np.all((ti.q >= 0.1) & (ti.q <= 0.5))
        assert set(np.unique(ti.C)) <= {0.0, 1.0}
        assert np.all(ti.C @ ti.y_int < ti.tau * ti.d)
        assert geometry.is_strict_interior(toll.toll_polytope(ti), ti.y_int)


def test_generator_is_deterministic_per_seed():
    a = toll.generate_toll_instance(50, 7, 0.2)
    b = toll.generate_toll_instance(50, 7, 0.2)
    c = toll.generate_toll_instance(50, 8, 0.2)
    for name in ("C", "u", "ell", "q", "d", "V", "y_int"):
        assert np.array_equal(getattr(a, name), getattr(b, name)), name
    assert a.D == b.D and a.R_tar == b.R_tar
    assert not np.array_equal(a.u, c.u)


@pytest.mark.parametrize("n, tau", [(5, 0.2), (50, 0.0), (50, 1.5), (12.5, 0.2)])
def test_generator_rejects_bad_parameters(n, tau):
    with pytest.raises(InvalidParameter):
        toll.generate_toll_instance(n, 0, tau)


def test_polytope_layout():
    ti = toll.generate_toll_instance(20, 3, 0.5)
    P = toll.toll_polytope(ti)
    assert P.m == 2 * 20 + ti.m_b + 1
    assert P.d == 20
    assert_allclose(P.b[-1], ti.D)
    assert np.all(P.slack_upper_bounds > 0)


def test_oracles_match_finite_differences():
    ti = toll.generate_toll_instance(10, 1, 0.3)
    _, inst = toll.toll_bilevel_instance(ti)
    rng = np.random.default_rng(11)
    for _ in range(5):
        x = rng.uniform(0.0, 2.0, size=10)
        y = ti.y_int * rng.uniform(0.5, 1.5, size=10)
        assert_allclose(inst.f_grad_y(x, y), finite_difference_gradient(lambda v: inst.f_value(x, v), y), rtol=1e-6, atol=1e-7)
        assert_allclose(inst.f_grad_x(x, y), finite_difference_gradient(lambda v: inst.f_value(v, y), x), rtol=1e-6, atol=1e-7)
        assert_allclose(inst.g_grad_y(x, y), finite_difference_gradient(lambda v: inst.g_value(x, v), y), rtol=1e-6, atol=1e-7)
        assert_allclose(inst.g_grad_x(x, y), y)
        assert_allclose(inst.g_hess_xy(x, y), np.eye(10))
        assert_allclose(inst.g_hess_yy(x, y), finite_difference_jacobian(lambda v: inst.g_grad_y(x, v), y), atol=1e-6)
        assert_allclose(inst.f_hess_yy(x, y), finite_difference_jacobian(lambda v: inst.f_grad_y(x, v), y), atol=1e-6)
    assert inst.rho_g == pytest.approx(np.linalg.eigvalsh(ti.Q).min())


def test_declared_constants_bound_the_oracles():
    ti = toll.generate_toll_instance(30, 2, 0.2)
    _, inst = toll.toll_bilevel_instance(ti)
    declared = inst.declared
    rng = np.random.default_rng(5)
    for _ in range(200):
        x = rng.uniform(0.0, 10.0, size=30)
        y = rng.uniform(0.0, 1.0, size=30) * ti.u
        assert np.linalg.norm(inst.f_grad_y(x, y)) <= declared.l_f0
        assert np.linalg.norm(inst.g_grad_x(x, y)) <= declared.l_g0 * (1 + 1e-12)
    assert declared.l_g1 >= np.linalg.eigvalsh(inst.g_hess_yy(None, None)).max() * (1 - 1e-12)


def test_normalized_gap_arithmetic():
    assert toll.normalized_gap(1.1, 1.0) == pytest.approx(100.0)
    assert toll.normalized_gap(0.5, 0.0) == pytest.approx(5000.0)
    assert toll.normalized_gap(-99.0, -100.0) == pytest.approx(10.0)
    assert toll.normalized_gap(2.0, 2.0) == 0.0


def test_reference_pool_keeps_the_best_candidate():
    ti = toll.generate_toll_instance(10, 4, 0.3)
    _, inst = toll.toll_bilevel_instance(ti)
    pool = toll.ReferencePool()
    pool.add("x0", inst, ti.x0)
    pool.add("zero", inst, np.zeros(10))
    assert pool.F_ref == min(pool.entries.values())
    assert pool.best_source in {"x0", "zero"}
    assert_allclose(pool.points["zero"], np.zeros(10))


def test_projected_descent_decreases_the_smoothed_objective():
    ti = toll.generate_toll_instance(10, 0, 0.2)
    _, inst = toll.toll_bilevel_instance(ti)
    x = toll.projected_hypergradient_descent(inst, ti.x0, mu_schedule=(1e-3,), iterations=30)
    assert np.all(x >= 0.0) and np.all(x <= 10.0)
    bp = BarrierProblem(inst, 1e-3)
    assert barrier.smoothed_outer_value(bp, x) <= barrier.smoothed_outer_value(bp, ti.x0) + 1e-12
    with pytest.raises(InvalidParameter):
        toll.projected_hypergradient_descent(inst, ti.x0, mu_schedule=(), iterations=10)


def test_original_objective_uses_the_constrained_lower_solution():
    ti = toll.generate_toll_instance(10, 6, 0.2)
    _, inst = toll.toll_bilevel_instance(ti)
    y_ref, F = barrier.reference_constrained_solution(inst, ti.x0)
    assert toll.original_objective(inst, ti.x0) == pytest.approx(F)
    assert F == pytest.approx(inst.f_value(ti.x0, y_ref))


@pytest.mark.parametrize("toll_level", [None, 5.0])
def test_original_objective_at_the_default_reference_mu(toll_level):
    # the default mu_ref = 1e-10 leaves slacks of order 1e-10 on the active constraints
    ti = toll.generate_toll_instance(50, 0, 0.2)
    _, inst = toll.toll_bilevel_instance(ti)
    x = ti.x0 if toll_level is None else np.full(50, toll_level)
    F = toll.original_objective(inst, x)
    assert np.isfinite(F)
    assert F == pytest.approx(toll.original_objective(inst, x, mu_ref=1e-6), rel=1e-3, abs=1e-6)
    y_ref, _ = barrier.reference_constrained_solution(inst, x)
    assert geometry.is_strict_interior(toll.toll_polytope(ti), y_ref)


def test_reference_descent_budget_scales_with_the_test_budget(monkeypatch):
    budgets = []

    def recording_descent(instance, x0, mu_schedule=(1e-2, 1e-3), iterations=2000, **kwargs):
        budgets.append(iterations)
        return np.array(x0, dtype=float)

    monkeypatch.setattr(toll, "projected_hypergradient_descent", recording_descent)
    ti = toll.generate_toll_instance(10, 0, 0.2)
    pool = toll.build_reference_pool(ti, test_budget=7)
    assert budgets == [350]
    assert set(pool.entries) == {"x0", "exact-hypergradient"}
    toll.build_reference_pool(ti, test_budget=7, hypergradient_iterations=12)
    assert budgets[-1] == 12


def test_experiment_reference_pool_budget_follows_K(monkeypatch):
    budgets = []

    def recording_descent(instance, x0, mu_schedule=(1e-2, 1e-3), iterations=2000, **kwargs):
        budgets.append(iterations)
        return np.array(x0, dtype=float)

    monkeypatch.setattr(toll, "projected_hypergradient_descent", recording_descent)
    raw = json.loads((CONFIG_DIR / "toll.json").read_text())
    raw["K"] = 3
    raw["toll"].update({"long_run_factor": 0})
    config = ExperimentConfig.model_validate(raw)
    assert config.toll.hypergradient_iterations is None
    problem = experiments.build_problem(config, 0)
    pool = experiments.reference_pool_for(config, problem, experiments.build_schedule(config, problem))
    assert budgets == [150]
    assert set(pool.entries) == {"x0", "exact-hypergradient"}


@pytest.mark.parametrize("seed", range(200))
def test_small_instances_keep_the_generator_invariants(seed):
    ti = toll.generate_toll_instance(10, seed, 0.2)
    assert toll.toll_instance_invariants(ti) == []
    assert np.all(ti.C.sum(axis=0) <= toll.MAX_BOTTLENECKS_PER_CORRIDOR)
    assert np.all(ti.C.sum(axis=1) >= 1)


@pytest.mark.slow
def test_certified_run_end_to_end(tmp_path):
    raw = json.loads((CONFIG_DIR / "toll_certified.json").read_text())
    raw["toll"]["reference_pool"] = True
    config = ExperimentConfig.model_validate(raw)
    trace = experiments.run_single(config, 0, tmp_path)
    assert trace.K == 500
    assert len(trace.records) == 501
    P = toll.toll_polytope(toll.generate_toll_instance(50, 0, 0.2))
    for rec in trace.records:
        assert geometry.is_strict_interior(P, rec.y)
        assert geometry.is_strict_interior(P, rec.z)
        assert np.all(rec.x >= 0.0) and np.all(rec.x <= 10.0)
    summary = json.loads((tmp_path / "summary.json").read_text())
    report = summary["toll"]
    assert set(report["pool"]) == {"x0", "exact-hypergradient", "bmfo-long"}
    assert all(report["F_ref"] <= F for F in report["pool"].values())
    assert np.isfinite(report["normalized_gap"])
    assert (tmp_path / "trace.csv").read_text().count("\n") == 502
