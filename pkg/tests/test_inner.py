import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sasadmm.data_io import gen_synthetic
from sasadmm.inner import (
    GradientEstimator,
    InnerConfig,
    MkController,
    ScheduleParams,
    adaptive_Mk,
    estimate_d,
    sample_directions,
    schedule,
    xsub,
)
from sasadmm.numerics import SeededRng
from sasadmm.problem import Ball, Box, QuadraticSum


def _half_square():
    return QuadraticSum(np.eye(1), np.zeros((1, 1)))


def test_schedule_examples():
    p = ScheduleParams(c1=2.0, c2=0.1, c3=1.0, rho=1.0, m=3)
    assert schedule(1, p) == (3, 0.1)
    m, eta = schedule(10, p)
    assert m == 10 and eta == pytest.approx(2.0 / 110.0, rel=1e-15)
    assert schedule(0, p)[0] == 3
    with pytest.raises(ValueError):
        schedule(-1, p)


def test_schedule_validation():
    with pytest.raises(ValueError):
        ScheduleParams(c1=1.0, c2=0.6, nu=1.0)
    with pytest.raises(ValueError):
        ScheduleParams(c1=1.0, c2=0.1, rho=0.9)
    with pytest.raises(ValueError):
        ScheduleParams(c1=0.0, c2=0.1)
    with pytest.raises(ValueError):
        ScheduleParams(c1=1.0, c2=0.1, m=0)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 1), st.floats(0.01, 3), st.floats(1, 1.5),
       st.integers(1, 20))
def test_schedule_product_is_nondecreasing(c1, c2, c3, rho, m):
    p = ScheduleParams(c1=c1, c2=c2, c3=c3, rho=rho, m=m)
    prev = 0.0
    for k in range(300):
        mk, eta = schedule(k, p)
        assert eta <= c2
        cur = eta * mk * (mk + 1)
        assert cur >= prev * (1 - 1e-15)
        prev = cur


def test_fixed_schedule():
    p = ScheduleParams.fixed(50, 0.25, nu=2.0)
    for k in (0, 1, 10, 10**6):
        m, eta = schedule(k, p)
        assert m == 50 and eta == pytest.approx(0.25, rel=1e-15)


def test_xsub_hand_example():
    cfg = InnerConfig(m_k=1, eta_k=0.5, H=1.0, M_k=1.0)
    x, xb = xsub([1.0], [1.0], [0.0], cfg, GradientEstimator(), _half_square(), rng=SeededRng(0))
    assert x[0] == pytest.approx(0.8, abs=1e-15) and xb[0] == pytest.approx(0.8, abs=1e-15)


def test_xsub_single_step_ignores_x1_in_xhat():
    # with m_k = 1 the gradient is taken at xbreve_1 whatever x_1 is
    f = QuadraticSum(np.eye(1), np.array([[-1.0]]))
    cfg = InnerConfig(m_k=1, eta_k=0.5, H=1.0, M_k=1.0)
    a = xsub([3.0], [1.0], [0.0], cfg, GradientEstimator(), f, rng=SeededRng(0))
    b = xsub([7.0], [1.0], [0.0], cfg, GradientEstimator(), f, rng=SeededRng(0))
    # x_2 = xbreve_2 since beta_1 = 1; only the anchor M x^k differs
    assert a[0][0] == a[1][0] and b[0][0] == b[1][0]
    assert b[1][0] - a[1][0] == pytest.approx((7.0 - 3.0) * 1.0 / 5.0, abs=1e-14)


def test_xsub_fixed_point():
    f = QuadraticSum(np.zeros((2, 2)), np.zeros((1, 2)))
    xk = np.array([0.3, -2.0])
    cfg = InnerConfig(m_k=7, eta_k=0.1, H=np.array([1.0, 2.0]), M_k=0.5)
    x, xb = xsub(xk, xk, np.zeros(2), cfg, GradientEstimator(), f, rng=SeededRng(0))
    np.testing.assert_allclose(x, xk, rtol=0, atol=1e-15)
    np.testing.assert_allclose(xb, xk, rtol=0, atol=1e-15)


def test_xsub_update_zeroes_the_step_objective_gradient():
    # the closed-form xbreve minimizes <d + h, x> + gamma/2 ||x - xb||_H^2 + 1/2 ||x - xk||_M^2
    rng = np.random.default_rng(0)
    f = QuadraticSum(np.diag([1.0, 3.0]), rng.standard_normal((1, 2)))
    H, M = np.array([1.0, 2.0]), np.array([0.5, 0.7])
    xk, xb, h = rng.standard_normal(2), rng.standard_normal(2), rng.standard_normal(2)
    eta = 0.2
    cfg = InnerConfig(m_k=1, eta_k=eta, H=H, M_k=M)
    _, xb2 = xsub(xk, xb, h, cfg, GradientEstimator(), f, rng=SeededRng(0))
    d = f.full_grad(xb)
    gamma = 2.0 / eta
    grad = d + h + gamma * H * (xb2 - xb) + M * (xb2 - xk)
    np.testing.assert_allclose(grad, 0.0, atol=1e-14)


def test_xsub_full_diagonal_H_matches_vector_H():
    f = QuadraticSum(np.diag([1.0, 2.0]), np.array([[0.5, -0.5]]))
    args = ([1.0, 2.0], [0.5, 0.0], [0.1, 0.2])
    a = xsub(*args, InnerConfig(4, 0.1, H=np.array([1.0, 3.0]), M_k=1.0), GradientEstimator(),
             f, rng=SeededRng(0))
    b = xsub(*args, InnerConfig(4, 0.1, H=np.diag([1.0, 3.0]), M_k=1.0), GradientEstimator(),
             f, rng=SeededRng(0))
    np.testing.assert_array_equal(a[0], b[0])


def test_xsub_full_H_solves_a_linear_system():
    f = QuadraticSum(np.zeros((2, 2)), np.zeros((1, 2)))
    H = np.array([[2.0, 1.0], [1.0, 2.0]])
    cfg = InnerConfig(1, 1.0, H=H, M_k=1.0)
    xk, xb, h = np.array([1.0, 0.0]), np.array([0.0, 1.0]), np.array([0.5, -0.5])
    _, xb2 = xsub(xk, xb, h, cfg, GradientEstimator(), f, rng=SeededRng(0))
    np.testing.assert_allclose(h + 2.0 * H @ (xb2 - xb) + (xb2 - xk), 0.0, atol=1e-14)
    with pytest.raises(ValueError):
        xsub(xk, xb, h, cfg, GradientEstimator(), f, X=Box(-1, 1), rng=SeededRng(0))


def test_xsub_projects_onto_the_feasible_set():
    f = QuadraticSum(np.eye(2), np.array([[-10.0, 10.0]]))
    cfg = InnerConfig(20, 0.4, H=1.0, M_k=0.1)
    x, xb = xsub(np.zeros(2), np.zeros(2), np.zeros(2), cfg, GradientEstimator(), f,
                 X=Box(-1.0, 1.0), rng=SeededRng(0))
    assert np.all(np.abs(x) <= 1.0) and np.all(np.abs(xb) <= 1.0)
    with pytest.raises(ValueError):
        xsub(np.zeros(2), np.zeros(2), np.zeros(2), InnerConfig(1, 0.4, H=np.array([1.0, 2.0])),
             GradientEstimator(), f, X=Ball(np.zeros(2), 1.0), rng=SeededRng(0))


def test_xsub_deterministic_runs_are_bit_identical():
    prob, _ = gen_synthetic("quadratic", (4,), seed=2, N_components=9)
    cfg = InnerConfig(12, 0.05, H=1.0, M_k=2.0)
    out = [
        xsub(np.ones(4), np.zeros(4), np.ones(4), cfg, GradientEstimator(), prob.f,
             rng=SeededRng(11))
        for _ in range(2)
    ]
    np.testing.assert_array_equal(out[0][0], out[1][0])
    np.testing.assert_array_equal(out[0][1], out[1][1])


def test_inner_config_validation():
    with pytest.raises(ValueError):
        InnerConfig(0, 0.1)
    with pytest.raises(ValueError):
        InnerConfig(1, 0.0)


def test_estimator_single_component():
    f = QuadraticSum(np.eye(2), np.array([[1.0, -1.0]]))
    x = np.array([0.2, 0.4])
    for mode in ("plain", "svrg"):
        est = GradientEstimator(mode)
        est.refresh(f, np.array([5.0, -5.0]))
        d, xi = estimate_d(est, f, x, SeededRng(0))
        assert xi == 0
        np.testing.assert_allclose(d, f.full_grad(x), atol=1e-14)


def test_svrg_at_the_snapshot_is_exact():
    prob, _ = gen_synthetic("quadratic", (3,), seed=1, N_components=20)
    f = prob.f
    x = np.array([0.1, -0.2, 0.3])
    est = GradientEstimator("svrg")
    est.refresh(f, x)
    D, _ = sample_directions(est, f, x, SeededRng(0), 1000)
    np.testing.assert_allclose(D, np.broadcast_to(f.full_grad(x), D.shape), atol=1e-14)


def test_svrg_needs_refresh_and_counts_gradients():
    f = QuadraticSum(np.eye(1), np.zeros((4, 1)))
    est = GradientEstimator("svrg")
    with pytest.raises(RuntimeError):
        estimate_d(est, f, np.zeros(1), SeededRng(0))
    est.refresh(f, np.zeros(1))
    assert est.grad_evals == 4
    estimate_d(est, f, np.zeros(1), SeededRng(0))
    assert est.grad_evals == 6
    plain = GradientEstimator("plain")
    estimate_d(plain, f, np.zeros(1), SeededRng(0))
    assert plain.grad_evals == 1
    with pytest.raises(ValueError):
        GradientEstimator("saga")


def test_sample_directions_equals_sequential_draws():
    prob, _ = gen_synthetic("fused-lasso", (8, 30), seed=4)
    f = prob.f
    x = np.linspace(-1, 1, 8)
    for mode in ("plain", "svrg"):
        est = GradientEstimator(mode)
        est.refresh(f, 0.5 * x)
        D, xis = sample_directions(est, f, x, SeededRng(9), 25)
        rng = SeededRng(9)
        for row, xi in zip(D, xis):
            d, j = estimate_d(est, f, x, rng)
            assert j == xi
            np.testing.assert_allclose(row, d, atol=1e-15)


def test_svrg_reduces_variance_near_the_snapshot():
    prob, _ = gen_synthetic("fused-lasso", (10, 60), seed=5)
    f = prob.f
    snap = np.linspace(-0.5, 0.5, 10)
    x = snap + 1e-2
    plain, svrg = GradientEstimator("plain"), GradientEstimator("svrg")
    svrg.refresh(f, snap)
    Dp, _ = sample_directions(plain, f, x, SeededRng(0), 5000)
    Ds, _ = sample_directions(svrg, f, x, SeededRng(0), 5000)
    assert Ds.var(axis=0).sum() < 1e-2 * Dp.var(axis=0).sum()


def test_adaptive_Mk_examples():
    rng = np.random.default_rng(0)
    a, b = rng.standard_normal(3), rng.standard_normal(3)
    assert adaptive_Mk(a, b, np.eye(3), 0.5, 0.1, 7.0) == pytest.approx(0.5)
    assert adaptive_Mk(a, b, np.eye(3), 0.5, 0.9, 7.0) == 0.9
    assert adaptive_Mk(a, a, np.eye(3), 0.5, 0.1, 7.0) == 7.0
    A = np.diag([2.0, 0.0])
    assert adaptive_Mk([0.0, 0.0], [0.3, 0.0], A, 0.5, 0.1, 7.0) == pytest.approx(2.0)
    assert adaptive_Mk([0.0, 0.0], [0.3, 0.0], A, 0.5, 3.0, 7.0) == 3.0


def test_strict_and_fixed_controllers():
    strict = MkController("strict", 2.0, 3.0)
    assert strict.rho == pytest.approx(1.01 * 6.0)
    assert strict.update(np.zeros(1), np.ones(1), np.eye(1), 5.0) == strict.rho
    assert MkController("fixed", 2.0, 3.0, value=6.0).rho == 6.0
    with pytest.raises(ValueError):
        MkController("fixed", 2.0, 3.0, value=5.9)
    with pytest.raises(ValueError):
        MkController("fixed", 2.0, 3.0)
    with pytest.raises(ValueError):
        MkController("loose", 2.0, 3.0)


def test_adaptive_controller_escalates_rho_min():
    mk = MkController("adaptive", 1.0, 1.0, rho_min=0.25)
    x0, x1 = np.zeros(2), np.ones(2)
    for i in range(10):
        mk.update(x0, x1, np.eye(2), residual_norm=float(i))
    # the first call sets the baseline, so nine increases so far
    assert mk.rho_min == 0.25
    mk.update(x0, x1, np.eye(2), residual_norm=10.0)
    assert mk.rho_min == 0.5 and mk.streak == 0
    mk.update(x0, x1, np.eye(2), residual_norm=1.0)
    assert mk.streak == 0
    saved = mk.state()
    other = MkController("adaptive", 1.0, 1.0)
    other.load(saved)
    assert other.state() == saved


def test_schedule_defaults_use_nu():
    p = ScheduleParams.defaults(4.0)
    assert (p.c1, p.c2, p.c3, p.rho, p.m) == (0.25, 0.125, 1.0, 1.01, 5)
    assert ScheduleParams.defaults(0.0).c2 == 0.5
    assert math.isclose(ScheduleParams.defaults(4.0, m=9).m, 9)
