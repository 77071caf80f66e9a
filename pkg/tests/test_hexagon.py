import numpy as np
import pytest
import scipy.linalg
from numpy.testing import assert_allclose

from services import barrier, geometry, hexagon
from services.barrier import BarrierProblem
from services.hexagon import DEFAULT_VERTICES, HexagonConfig
from services.problem import BilevelInstance
from utils.errors import InvalidConfig, MissingSecondOrderOracle


def test_every_vertex_lies_on_two_facets():
    P = hexagon.hexagon_polytope(DEFAULT_VERTICES)
    assert P.m == 6
    assert_allclose(np.linalg.norm(P.A, axis=1), np.ones(6))
    for v in DEFAULT_VERTICES:
        active = np.abs(geometry.slacks(P, v)) < 1e-12
        assert active.sum() == 2
    assert geometry.is_strict_interior(P, np.mean(DEFAULT_VERTICES, axis=0))


def test_clockwise_vertices_are_rejected():
    with pytest.raises(InvalidConfig):
        hexagon.hexagon_polytope(DEFAULT_VERTICES[::-1])
    with pytest.raises(InvalidConfig):
        hexagon.hexagon_polytope([(0.0, 0.0), (1.0, 0.0)])


def test_invalid_configs_are_rejected():
    with pytest.raises(InvalidConfig):
        hexagon.build_hexagon_example(HexagonConfig(c_start=(5.0, 5.0)))
    with pytest.raises(InvalidConfig):
        hexagon.build_hexagon_example(HexagonConfig(K=1))
    with pytest.raises(InvalidConfig):
        hexagon.build_hexagon_example(HexagonConfig(Q=((1.0, 0.0), (0.0, -1.0))))


def test_center_path_and_grid():
    cfg = HexagonConfig(K=11)
    example = hexagon.build_hexagon_example(cfg)
    assert_allclose(example.grid, np.linspace(0.0, 1.0, 11))
    assert_allclose(example.path(0.0), cfg.c_start)
    assert_allclose(example.path(1.0), cfg.c_end)
    # the lower target is c(x): grad_y g vanishes there
    x = np.array([0.3])
    assert_allclose(example.instance.g_grad_y(x, example.path(0.3)), np.zeros(2), atol=1e-14)
    # c_end lies beyond the right slanted face
    assert not geometry.is_strict_interior(example.polytope, cfg.c_end)


def test_declared_constants_cover_the_instance():
    cfg = HexagonConfig()
    declared = hexagon.hexagon_declared_constants(cfg)
    assert declared.l_g1 == pytest.approx(np.linalg.eigvalsh(np.asarray(cfg.Q)).max())
    assert declared.l_f0 == pytest.approx(max(np.hypot(*v) for v in DEFAULT_VERTICES))
    example = hexagon.build_hexagon_example(cfg)
    rng = np.random.default_rng(3)
    for _ in range(200):
        y = np.asarray(DEFAULT_VERTICES)[rng.integers(6)] * rng.uniform(0.0, 1.0)
        x = rng.uniform(0.0, 1.0, size=1)
        assert abs(example.instance.g_grad_x(x, y)[0]) <= declared.l_g0 * (1 + 1e-12)


def test_critical_step_and_local_smoothness():
    cfg = HexagonConfig(K=5)
    example = hexagon.build_hexagon_example(cfg)
    bp = BarrierProblem(example.instance, cfg.mu)
    x = np.array([0.4])
    center = barrier.solve_exact_center(bp, x).y_star
    H = barrier.psi_hess_yy(bp, x, center)
    assert hexagon.critical_euclidean_step(bp, x, center) == pytest.approx(2.0 / np.linalg.eigvalsh(H).max())
    ratio = np.linalg.eigvals(np.linalg.solve(geometry.barrier_hessian(bp.polytope, center), H)).real.max()
    assert hexagon.local_barrier_smoothness(bp, x, center) == pytest.approx(ratio, rel=1e-8)


def test_barrier_step_rule_needs_the_second_order_oracle():
    example = hexagon.build_hexagon_example(HexagonConfig(K=5))
    inst = example.instance
    first_order = BilevelInstance(
        dim_x=inst.dim_x, dim_y=inst.dim_y, f_value=inst.f_value, f_grad_x=inst.f_grad_x, f_grad_y=inst.f_grad_y,
        g_value=inst.g_value, g_grad_x=inst.g_grad_x, g_grad_y=inst.g_grad_y, rho_g=inst.rho_g,
        polytope=inst.polytope, declared=inst.declared, name="hexagon-first-order",
    )
    with pytest.raises(MissingSecondOrderOracle):
        hexagon.local_barrier_smoothness(BarrierProblem(first_order, 5e-4), np.array([0.4]), example.c_start)


def test_exact_center_path_is_interior():
    cfg = HexagonConfig(K=21)
    example = hexagon.build_hexagon_example(cfg)
    centers = hexagon.exact_center_path(BarrierProblem(example.instance, cfg.mu), example.grid)
    assert centers.shape == (21, 2)
    for c in centers:
        assert geometry.is_strict_interior(example.polytope, c)
    slacks_end = geometry.slacks(example.polytope, centers[-1])
    assert slacks_end.min() < 1e-2


def test_comparison_rows_on_a_short_grid():
    cfg = HexagonConfig(K=40)
    result = hexagon.run_hexagon_comparison(cfg)
    assert len(result.barrier_rows) == len(result.euclidean_rows) == cfg.K + 1
    assert [r.k for r in result.barrier_rows] == list(range(cfg.K + 1))
    assert result.gamma_euclidean == pytest.approx(0.7 * result.gamma_crit0)
    assert result.barrier_rows[0].err == 0.0
    assert result.euclidean_rows[0].err == 0.0
    assert len(result.barrier_tube.rows) == cfg.K + 1
    for row in result.barrier_rows:
        assert row.psi_gap >= -1e-12
        assert geometry.is_strict_interior(hexagon.hexagon_polytope(cfg.vertices), row.z)


@pytest.mark.slow
def test_barrier_tracker_keeps_the_tube_where_euclidean_loses_it():
    result = hexagon.run_hexagon_comparison(HexagonConfig())
    assert len(result.barrier_rows) == 2001
    assert result.barrier_tube.max_exact_err <= 0.25
    assert result.barrier_tube.first_exit_index is None
    assert result.barrier_guard_activations == 0
    assert result.euclidean_tube.first_exit_index is not None


def test_interior_stability_above_the_critical_step():
    stability = hexagon.run_interior_stability(HexagonConfig(K=2), sweeps=40)
    assert stability.gamma_euclidean == pytest.approx(1.05 * stability.gamma_crit)
    assert len(stability.rows) == 41
    assert stability.barrier_stable
    assert stability.rows[-1].barrier_err < 1e-3
    assert max(r.euclidean_err for r in stability.rows) > stability.rows[0].euclidean_err
    assert stability.min_center_slack > 0.0
