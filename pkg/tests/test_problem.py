import numpy as np
import pytest
from numpy.testing import assert_allclose

from services.geometry import box_polytope
from services.problem import DeclaredConstants, StochasticUpperOracle, quadratic_instance, sample_noisy_f_grads
from utils.errors import DimensionMismatch, InvalidParameter, NotSPD
from utils.numerics import finite_difference_gradient, finite_difference_jacobian


def _coupled_instance():
    P = box_polytope(np.zeros(3), np.ones(3))
    M = np.array([[1.0, 0.5], [0.0, 1.0], [-0.3, 0.2]])
    Q_g = np.array([[2.0, 0.3, 0.0], [0.3, 1.0, 0.1], [0.0, 0.1, 1.5]])
    return quadratic_instance(
        Q_f=np.diag([1.0, 2.0, 0.5]), c_f=[0.2, 0.4, 0.6], Q_g=Q_g, c_g_matrix=M, c_g_offset=[0.1, 0.2, 0.3], polytope=P,
    )


def test_quadratic_oracles_match_finite_differences(rng):
    inst = _coupled_instance()
    assert inst.dim_x == 2 and inst.dim_y == 3
    for _ in range(10):
        x = rng.uniform(-1.0, 1.0, size=2)
        y = rng.uniform(0.1, 0.9, size=3)
        assert_allclose(inst.g_grad_y(x, y), finite_difference_gradient(lambda v: inst.g_value(x, v), y), atol=1e-8)
        assert_allclose(inst.g_grad_x(x, y), finite_difference_gradient(lambda v: inst.g_value(v, y), x), atol=1e-8)
        assert_allclose(inst.f_grad_y(x, y), finite_difference_gradient(lambda v: inst.f_value(x, v), y), atol=1e-8)
        assert_allclose(inst.f_grad_x(x, y), np.zeros(2))
        # [i, j] = d^2 g / dy_i dx_j
        cross = finite_difference_jacobian(lambda v: inst.g_grad_y(v, y), x)
        assert inst.g_hess_xy(x, y).shape == (3, 2)
        assert_allclose(inst.g_hess_xy(x, y), cross, atol=1e-7)


def test_rho_g_is_smallest_eigenvalue():
    inst = _coupled_instance()
    Q_g = inst.g_hess_yy(None, None)
    assert inst.rho_g == pytest.approx(np.linalg.eigvalsh(Q_g).min())
    assert inst.has_second_order


def test_quadratic_instance_validation():
    P = box_polytope(np.zeros(2), np.ones(2))
    with pytest.raises(NotSPD):
        quadratic_instance(np.eye(2), np.zeros(2), [[1.0, 0.0], [0.0, -1.0]], np.eye(2), np.zeros(2), P)
    with pytest.raises(NotSPD):
        quadratic_instance(np.eye(2), np.zeros(2), [[1.0, 0.5], [0.0, 1.0]], np.eye(2), np.zeros(2), P)
    with pytest.raises(DimensionMismatch):
        quadratic_instance(np.eye(3), np.zeros(3), np.eye(3), np.eye(3), np.zeros(3), P)
    with pytest.raises(DimensionMismatch):
        quadratic_instance(np.eye(2), np.zeros(2), np.eye(2), np.ones((3, 1)), np.zeros(2), P)


def test_declared_constants_must_be_positive():
    with pytest.raises(InvalidParameter):
        DeclaredConstants(l_g1=1.0, l_f0=0.0, l_f1=1.0, l_g0=1.0)


def test_stochastic_oracle_is_reproducible_and_bounded():
    base = _coupled_instance()
    x, y = np.array([0.3, -0.2]), np.array([0.5, 0.5, 0.5])
    first = StochasticUpperOracle(base, 0.1, 0.2, rng_seed=7)
    second = StochasticUpperOracle(base, 0.1, 0.2, rng_seed=7)
    other = StochasticUpperOracle(base, 0.1, 0.2, rng_seed=8)
    a = [sample_noisy_f_grads(first, x, y) for _ in range(5)]
    b = [sample_noisy_f_grads(second, x, y) for _ in range(5)]
    c = [sample_noisy_f_grads(other, x, y) for _ in range(5)]
    for (ax, ay), (bx, by) in zip(a, b):
        assert_allclose(ax, bx, rtol=0, atol=0)
        assert_allclose(ay, by, rtol=0, atol=0)
    assert not np.allclose(a[0][1], c[0][1])
    for gx, gy in a:
        assert np.linalg.norm(gx - base.f_grad_x(x, y)) <= 0.1
        assert np.linalg.norm(gy - base.f_grad_y(x, y)) <= 0.2


def test_stochastic_oracle_is_unbiased():
    base = _coupled_instance()
    oracle = StochasticUpperOracle(base, 0.1, 0.1, rng_seed=0)
    x, y = np.array([0.3, -0.2]), np.array([0.5, 0.5, 0.5])
    samples = np.array([oracle.f_grad_y(x, y) for _ in range(4000)])
    assert_allclose(samples.mean(axis=0), base.f_grad_y(x, y), atol=5e-3)


def test_stochastic_noise_is_uniform_on_the_ball():
    base = _coupled_instance()
    oracle = StochasticUpperOracle(base, 0.1, 0.1, rng_seed=3)
    x, y = np.array([0.3, -0.2]), np.array([0.5, 0.5, 0.5])
    noise = np.array([oracle.f_grad_y(x, y) for _ in range(4000)]) - base.f_grad_y(x, y)
    sq_norms = np.sum(noise**2, axis=1)
    assert sq_norms.max() <= 0.1**2 * (1 + 1e-9)
    # uniform on the 3-ball of radius r: E|n|^2 = 3 r^2 / 5
    assert sq_norms.mean() == pytest.approx(0.6 * 0.1**2, rel=0.05)


def test_stochastic_oracle_rejects_negative_radius():
    with pytest.raises(InvalidParameter):
        StochasticUpperOracle(_coupled_instance(), -0.1, 0.1, rng_seed=0)
