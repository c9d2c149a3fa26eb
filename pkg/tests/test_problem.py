import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from sasadmm.problem import (
    Ball,
    Box,
    L1Norm,
    LogisticSum,
    QuadraticBlock,
    QuadraticSum,
    SingleComponent,
    WholeSpace,
    ZeroBlock,
    kkt_reference,
    logistic_component,
    make_fused_lasso,
    make_quadratic_test,
    nonsmooth_fixture,
    soft_shrink,
)

vec = st.lists(st.floats(-50, 50), min_size=3, max_size=3).map(np.array)


def test_logistic_at_zero_margin():
    val, grad = logistic_component([1.0, 0.0], 1, np.zeros(2))
    assert val == pytest.approx(np.log(2.0), abs=1e-12)
    np.testing.assert_allclose(grad, [-0.5, 0.0], atol=1e-15)


def test_logistic_saturation_without_overflow():
    with np.errstate(over="raise"):
        val, grad = logistic_component([1.0, 0.0], 1, np.array([1000.0, 0.0]))
        assert val == pytest.approx(0.0, abs=1e-300)
        np.testing.assert_allclose(grad, 0.0, atol=1e-300)
        val, grad = logistic_component([1.0, 0.0], 1, np.array([-1000.0, 0.0]))
    assert val == pytest.approx(1000.0)
    np.testing.assert_allclose(grad, [-1.0, 0.0])


def test_logistic_rejects_bad_label():
    with pytest.raises(ValueError):
        logistic_component([1.0], 2, np.zeros(1))


def test_logistic_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    a, x = rng.standard_normal(4), rng.standard_normal(4)
    _, g = logistic_component(a, -1, x)
    eps = 1e-6
    fd = [
        (logistic_component(a, -1, x + eps * e)[0] - logistic_component(a, -1, x - eps * e)[0])
        / (2 * eps)
        for e in np.eye(4)
    ]
    np.testing.assert_allclose(g, fd, atol=1e-8)


def _logistic_sum(seed=0, N=30, l=6, density=0.5):
    rng = np.random.default_rng(seed)
    F = sp.random(N, l, density=density, random_state=seed, format="csr")
    y = np.where(rng.random(N) < 0.5, -1.0, 1.0)
    return LogisticSum(F, y), rng


@pytest.mark.parametrize("density", [0.1, 0.9])
def test_logistic_sum_full_grad_is_component_mean(density):
    f, rng = _logistic_sum(density=density)
    x = rng.standard_normal(f.dim)
    comps = np.stack([f.component_grad(j, x) for j in range(f.n_components)])
    np.testing.assert_allclose(f.full_grad(x), comps.mean(axis=0), atol=1e-14)
    np.testing.assert_allclose(f.component_grads(x), comps, atol=1e-14)
    vals = [f.component_value(j, x) for j in range(f.n_components)]
    assert f.full_value(x) == pytest.approx(np.mean(vals), rel=1e-13)


def test_logistic_nu_example():
    f = LogisticSum(sp.csr_matrix([[2.0, 0.0]]), [1.0])
    assert f.nu == 1.0


def test_logistic_component_gradients_are_nu_lipschitz():
    f, rng = _logistic_sum(seed=3, density=0.6)
    for _ in range(50):
        j = int(rng.integers(f.n_components))
        x, z = rng.standard_normal(f.dim), rng.standard_normal(f.dim)
        gap = np.linalg.norm(f.component_grad(j, x) - f.component_grad(j, z))
        assert gap <= f.nu * np.linalg.norm(x - z) * (1 + 1e-12)


def test_descent_inequality_for_quadratic_sum():
    rng = np.random.default_rng(1)
    R = rng.standard_normal((3, 3))
    f = QuadraticSum(R @ R.T, rng.standard_normal((4, 3)))
    for _ in range(20):
        x, z = rng.standard_normal(3), rng.standard_normal(3)
        for j in range(4):
            bound = (
                f.component_value(j, x)
                + f.component_grad(j, x) @ (z - x)
                + 0.5 * f.nu * np.sum((z - x) ** 2)
            )
            assert f.component_value(j, z) <= bound + 1e-10


def test_single_component_view():
    f, rng = _logistic_sum()
    one = SingleComponent(f)
    x = rng.standard_normal(f.dim)
    assert one.n_components == 1 and one.grad_cost == f.n_components
    np.testing.assert_array_equal(one.component_grad(0, x), f.full_grad(x))
    assert one.component_value(0, x) == f.full_value(x)


def test_soft_shrink_examples():
    np.testing.assert_array_equal(soft_shrink(1.0, [0.5, 2.0, -3.0]), [0.0, 1.0, -2.0])
    v = np.array([0.3, -1.7, 0.0])
    np.testing.assert_array_equal(soft_shrink(0.0, v), v)
    with pytest.raises(ValueError):
        soft_shrink(-1.0, v)


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 5.0), st.floats(-10, 10))
def test_soft_shrink_minimizes_the_prox_objective(kappa, v):
    grid = np.linspace(-12, 12, 240_001)
    obj = kappa * np.abs(grid) + 0.5 * (grid - v) ** 2
    best = grid[np.argmin(obj)]
    assert soft_shrink(kappa, v) == pytest.approx(best, abs=2e-4)


@settings(max_examples=100, deadline=None)
@given(vec, vec, st.floats(0.01, 10))
def test_prox_is_nonexpansive(u, v, gamma):
    for g in (L1Norm(0.7), L1Norm(0.7, Box(-1, 2)), ZeroBlock(3, Box(0, 1))):
        gap = np.linalg.norm(g.prox(gamma, u) - g.prox(gamma, v))
        assert gap <= np.linalg.norm(u - v) * (1 + 1e-12) + 1e-12


def test_quadratic_block_prox_solves_its_optimality_condition():
    g = QuadraticBlock(np.array([[2.0, 0.5], [0.5, 1.0]]), [1.0, -1.0])
    v = np.array([0.3, 0.8])
    y = g.prox(3.0, v)
    np.testing.assert_allclose(g.P @ y + g.q + 3.0 * (y - v), 0.0, atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(vec)
def test_projection_is_idempotent(v):
    for X in (WholeSpace(), Box(-1.0, [0.5, 2.0, 3.0]), Ball(np.ones(3), 2.0)):
        p = X.project(v)
        assert X.contains(p, tol=1e-12)
        np.testing.assert_allclose(X.project(p), p, atol=1e-12)


def test_set_validation():
    with pytest.raises(ValueError):
        Box(1.0, 0.0)
    with pytest.raises(ValueError):
        Ball(np.zeros(2), -1.0)
    with pytest.raises(ValueError):
        L1Norm(1.0, Ball(np.zeros(2), 1.0))


def test_fused_lasso_with_empty_graph_is_plain_l1_logistic():
    F = sp.csr_matrix(np.arange(6.0).reshape(3, 2))
    prob = make_fused_lasso(F, [1, -1, 1], sp.csr_matrix((0, 2)), 0.1)
    assert prob.A.shape == (2, 2)
    np.testing.assert_array_equal(prob.A.toarray(), np.eye(2))
    np.testing.assert_array_equal(prob.B.toarray(), -np.eye(2))
    with pytest.raises(ValueError):
        make_fused_lasso(F, [1, -1, 1], None, 0.0)


def test_quadratic_kkt_fixture():
    prob = make_quadratic_test(np.eye(1), [0], np.eye(1), [0], np.eye(1), np.eye(1), [2.0])
    ref = kkt_reference(prob)
    np.testing.assert_allclose([ref.x[0], ref.ys[0][0], ref.lam[0]], [1.0, 1.0, 1.0], atol=1e-14)
    assert ref.F == pytest.approx(1.0, abs=1e-14)
    x = np.array([0.4])
    assert np.array_equal(prob.f.component_grad(0, x), prob.f.full_grad(x))


def test_kkt_with_zero_right_hand_side():
    prob = make_quadratic_test(np.eye(1), [-1.0], np.eye(1), [-3.0], np.eye(1), -np.eye(1), [0.0])
    ref = kkt_reference(prob)
    np.testing.assert_allclose(ref.x, ref.ys[0], atol=1e-14)
    # stationarity x - 1 - lam = 0
    np.testing.assert_allclose(ref.x - 1.0 - ref.lam, 0.0, atol=1e-14)


def test_singular_kkt_is_rejected():
    prob = make_quadratic_test(np.zeros((1, 1)), [0], np.zeros((1, 1)), [0], np.eye(1),
                               np.eye(1), [1.0])
    with pytest.raises(ValueError):
        kkt_reference(prob)


def test_components_average_to_the_full_quadratic():
    prob = make_quadratic_test(np.eye(2), [1.0, 2.0], np.eye(2), [0, 0], np.eye(2), np.eye(2),
                               [0, 0], N=7)
    x = np.array([0.3, -0.1])
    np.testing.assert_allclose(prob.f.component_grads(x).mean(axis=0), prob.f.full_grad(x),
                               atol=1e-14)


def test_nonsmooth_fixture_optimality():
    prob = nonsmooth_fixture()
    ref = prob.reference
    assert prob.objective(ref.x, ref.ys) == 0.5
    np.testing.assert_array_equal(prob.residual(ref.x, ref.ys), [0.0])
    # grad f(x*) - A^T lam* = 0 and lam* in -d|y*| via B = -I
    assert prob.f.full_grad(ref.x)[0] - ref.lam[0] == 0.0


def test_problem_shape_checks():
    with pytest.raises(ValueError):
        make_quadratic_test(np.eye(2), [0, 0], np.eye(1), [0], np.eye(3), np.eye(1), [0.0])
    with pytest.raises(ValueError):
        make_quadratic_test(-np.eye(1), [0], None, None, np.eye(1), None, [0.0])
