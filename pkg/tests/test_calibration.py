"""Objective, finite-difference derivatives and the projected optimizer."""

import numpy as np
import pytest

from hestoncal.calibration import (
    ClosedFormBackend,
    OptimizerOptions,
    calibrate,
    fd_gradient,
    fd_jacobian,
    objective,
    optimize,
)
from hestoncal.params import DEFAULT_CALIB_BOX, ParamBox, feller_margin
from hestoncal.quotes import Quote, QuoteSet


class _ArrayBackend:
    """Toy backend returning fixed per-quote prices independent of theta."""

    variant = "Toy"

    def __init__(self, prices):
        self.prices = np.asarray(prices, dtype=float)

    def price_vector(self, theta, quotes, S0, r):
        return self.prices


def _quote_set(prices):
    quotes = tuple(
        Quote(maturity=1.0, strike=100.0 + i, style="european", price=float(p))
        for i, p in enumerate(prices)
    )
    return QuoteSet(quotes=quotes, S0=100.0, r=0.02)


def test_objective_self_consistency():
    # model == observed -> zero cost and residuals
    qs = _quote_set([1.0, 2.0, 3.0])
    backend = _ArrayBackend(qs.prices())
    J, r = objective(np.zeros(5), qs, backend)
    assert J <= 1e-20
    assert np.all(r == 0.0)


def test_objective_single_quote_arithmetic():
    # M=1, observed 2.0, model 1.5 -> J = (0.5)^2 = 0.25
    qs = _quote_set([2.0])
    backend = _ArrayBackend([1.5])
    J, r = objective(np.zeros(5), qs, backend)
    assert J == pytest.approx(0.25)
    assert r[0] == pytest.approx(0.5)


def test_objective_is_mean_square_of_residuals():
    qs = _quote_set([1.0, 2.0, 4.0])
    backend = _ArrayBackend([1.1, 1.8, 4.4])
    J, r = objective(np.zeros(5), qs, backend)
    assert J == pytest.approx(float(r @ r) / r.size)


def test_fd_gradient_quadratic_oracle():
    A = np.diag([1.0, 2.0, 3.0, 4.0, 5.0])
    b = np.array([0.3, -0.2, 0.1, 0.0, -0.4])
    fun = lambda th: 0.5 * th @ A @ th + b @ th
    theta = np.array([0.4, -0.3, 0.25, 1.1, 0.2])
    grad = fd_gradient(fun, theta)
    exact = A @ theta + b
    assert np.allclose(grad, exact, atol=1e-4)


def test_fd_gradient_flips_at_upper_bound():
    box = ParamBox(lower=(0.0,) * 5, upper=(1.0, 1.0, 1.0, 1.0, 1.0))
    calls = []

    def fun(th):
        calls.append(th.copy())
        assert np.all(th <= 1.0 + 1e-15), "probe left the box"
        return float(np.sum(th**2))

    theta = np.ones(5)  # every coordinate at the upper bound
    grad = fd_gradient(fun, theta, box)
    assert np.allclose(grad, 2.0 * theta, atol=1e-4)


def test_fd_jacobian_matches_central_difference():
    def resid(th):
        return np.array([th[0] ** 2 - th[1], np.sin(th[2]) + th[3] * th[4], th[1] * th[3]])

    theta = np.array([0.5, -0.4, 0.3, 1.2, 0.25])
    r0 = resid(theta)
    jac, _ = fd_jacobian(resid, theta, r0)
    h = 1e-6
    central = np.empty_like(jac)
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        central[:, i] = (resid(theta + e) - resid(theta - e)) / (2 * h)
    assert np.allclose(jac, central, atol=1e-5)


def test_fd_jacobian_mask_zeroes_fixed_columns():
    resid = lambda th: th[:3] ** 2
    theta = np.array([0.5, 0.5, 0.5, 2.0, 0.3])
    mask = np.array([True, True, True, False, True])
    jac, n = fd_jacobian(resid, theta, resid(theta), mask=mask)
    assert np.all(jac[:, 3] == 0.0)
    assert n == 4  # one probe per free coordinate


def test_optimize_quadratic_recovers_target_inside_box():
    target = np.array([0.5, -0.3, 0.2, 1.0, 0.3])
    resid = lambda th: th - target
    box = DEFAULT_CALIB_BOX
    x0 = np.array([0.3, 0.0, 0.4, 2.0, 0.5])
    theta, J, iters, n_evals, status = optimize(resid, x0, box)
    assert np.allclose(theta, target, atol=1e-6)
    assert J <= 1e-12
    assert status in ("converged_dj", "converged_step")


def test_optimize_respects_box_exactly():
    # unconstrained optimum outside the box -> iterate clamps to the face
    target = np.array([2.0, -0.3, 0.2, 1.0, 0.3])  # xi target above 0.9
    resid = lambda th: th - target
    theta, *_ = optimize(resid, DEFAULT_CALIB_BOX.midpoint(), DEFAULT_CALIB_BOX)
    assert theta[0] == DEFAULT_CALIB_BOX.hi[0]
    assert np.allclose(theta[1:], target[1:], atol=1e-6)


def test_optimize_improves_objective():
    rng = np.random.default_rng(7)
    A = rng.normal(size=(8, 5))
    resid = lambda th: A @ (th - np.array([0.4, -0.2, 0.3, 1.5, 0.2])) + 0.01
    x0 = DEFAULT_CALIB_BOX.midpoint()
    J0 = float(resid(x0) @ resid(x0)) / 8
    theta, J, *_ = optimize(resid, x0, DEFAULT_CALIB_BOX)
    assert J <= J0


def test_optimize_feller_penalty_reaches_feasible_point():
    # pull toward a Feller-violating target; penalty must keep 2*kappa*gamma
    # - xi^2 >= 0 at the reported optimum
    target = np.array([0.9, -0.5, 0.02, 0.2, 0.3])
    resid = lambda th: th - target
    opts = OptimizerOptions(feller=True)
    theta, J, iters, n_evals, status = optimize(
        resid, DEFAULT_CALIB_BOX.midpoint(), DEFAULT_CALIB_BOX, opts
    )
    assert status != "feller_infeasible"
    assert feller_margin(theta[0], theta[2], theta[3]) >= 0.0


def test_optimize_fixed_kappa():
    target = np.array([0.5, -0.3, 0.2, 1.0, 0.3])
    resid = lambda th: th - target
    x0 = np.array([0.3, 0.0, 0.4, 2.0, 0.5])
    opts = OptimizerOptions(fix_kappa=True)
    theta, *_ = optimize(resid, x0, DEFAULT_CALIB_BOX, opts)
    assert theta[3] == x0[3]
    assert np.allclose(np.delete(theta, 3), np.delete(target, 3), atol=1e-6)


def test_calibrate_report_fields_consistent():
    theta_ex = np.array([0.25, -0.5, 0.10, 0.4, 0.10])
    backend = ClosedFormBackend()
    layout = [
        Quote(maturity=T, strike=K, style="european", price=np.nan)
        for T in (0.5, 1.0)
        for K in (90.0, 100.0, 110.0)
    ]
    prices = backend.price_vector(theta_ex, layout, 100.0, 0.05)
    quotes = QuoteSet(
        quotes=tuple(
            Quote(maturity=q.maturity, strike=q.strike, style="european", price=float(p))
            for q, p in zip(layout, prices)
        ),
        S0=100.0,
        r=0.05,
    )
    x0 = np.array([0.35, -0.4, 0.15, 0.8, 0.15])
    report = calibrate(quotes, backend, DEFAULT_CALIB_BOX, x0=x0)
    assert report.status in ("converged_dj", "converged_step")
    # residual identity: observed - model == residuals
    assert np.allclose(report.observed - report.model_prices, report.residuals)
    assert report.J_star <= 1e-10
    assert np.linalg.norm(report.theta_star - theta_ex) <= 1e-3
    # J(theta*) no worse than J(x0)
    J0, _ = objective(x0, quotes, backend)
    assert report.J_star <= J0


def test_calibrate_rejects_x0_outside_box():
    qs = _quote_set([1.0])
    backend = _ArrayBackend([1.0])
    with pytest.raises(ValueError):
        calibrate(qs, backend, DEFAULT_CALIB_BOX, x0=np.array([5.0, 0.0, 0.2, 1.0, 0.3]))
