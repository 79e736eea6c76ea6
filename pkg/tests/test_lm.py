"""Solver unit tests: finite-difference Jacobians and damped least squares."""

import numpy as np
import pytest

from dopplerlab.lm import (
    CONVERGED,
    MAX_ITERATIONS,
    STALLED,
    LmOptions,
    finite_difference_jacobian,
    lm_solve,
)


class TestFiniteDifferenceJacobian:
    def test_linear_recovers_matrix(self):
        rng = np.random.default_rng(11)
        a = rng.normal(size=(7, 3))
        b = rng.normal(size=7)
        x = np.array([0.3, -1.2, 2.0])
        jac = finite_difference_jacobian(lambda p: a @ p - b, x)
        assert np.abs(jac - a).max() < 1e-9

    def test_sine_derivative_at_origin(self):
        jac = finite_difference_jacobian(lambda p: np.sin(p), np.zeros(1))
        assert abs(jac[0, 0] - 1.0) < 1e-8

    def test_step_scales_with_magnitude(self):
        # Residual (x/1e6)^2 has slope 2e-6 at x=1e6.  A fixed 1e-6 probe
        # would be swallowed by roundoff at this magnitude.
        jac = finite_difference_jacobian(lambda p: (p / 1e6) ** 2, np.array([1e6]))
        assert abs(jac[0, 0] - 2e-6) / 2e-6 < 1e-5

    def test_coupled_parameters(self):
        def resid(p):
            return np.array([p[0] * p[1], p[0] + p[1]])

        x = np.array([3.0, -2.0])
        jac = finite_difference_jacobian(resid, x)
        expect = np.array([[-2.0, 3.0], [1.0, 1.0]])
        assert np.abs(jac - expect).max() < 1e-7

    def test_explicit_step_override(self):
        jac = finite_difference_jacobian(lambda p: np.sin(p), np.zeros(1), h=1e-4)
        # Central differences are second order, so the h=1e-4 error is ~1e-9.
        assert abs(jac[0, 0] - 1.0) < 1e-7

    def test_nonfinite_probe_raises(self):
        def resid(p):
            out = np.empty(1)
            out[0] = np.nan if p[0] < 0 else p[0]
            return out

        with pytest.raises(ValueError):
            finite_difference_jacobian(resid, np.zeros(1))


class TestLinearProblems:
    def test_two_iterations_to_least_squares(self):
        for seed in range(5):
            rng = np.random.default_rng(100 + seed)
            a = rng.normal(size=(9, 4))
            b = rng.normal(size=9)
            best = np.linalg.lstsq(a, b, rcond=None)[0]
            res = lm_solve(lambda p: a @ p - b, lambda p: a, np.zeros(4))
            assert res.status == CONVERGED
            assert res.iterations <= 2
            assert np.abs(res.x - best).max() < 1e-10

    def test_default_jacobian_matches_analytic(self):
        rng = np.random.default_rng(7)
        a = rng.normal(size=(6, 3))
        b = rng.normal(size=6)
        with_j = lm_solve(lambda p: a @ p - b, lambda p: a, np.zeros(3))
        without = lm_solve(lambda p: a @ p - b, None, np.zeros(3))
        assert without.status == CONVERGED
        assert without.iterations <= 2
        assert np.abs(with_j.x - without.x).max() < 1e-9

    def test_cost_is_half_squared_norm(self):
        a = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        b = np.array([1.0, 2.0, 0.0])
        res = lm_solve(lambda p: a @ p - b, lambda p: a, np.zeros(2))
        r = a @ res.x - b
        assert abs(res.cost - 0.5 * float(r @ r)) < 1e-14


class TestSmallProblems:
    def test_scalar_shift(self):
        res = lm_solve(lambda p: p - 3.0, None, np.zeros(1))
        assert res.status == CONVERGED
        assert abs(res.x[0] - 3.0) < 1e-10

    def test_separable_pair(self):
        res = lm_solve(
            lambda p: np.array([p[0] - 1.0, p[1] - 2.0]), None, np.zeros(2)
        )
        assert np.abs(res.x - [1.0, 2.0]).max() < 1e-10

    def test_scalar_quadratic_root(self):
        res = lm_solve(lambda p: p**2 - 4.0, None, np.ones(1))
        assert res.status == CONVERGED
        assert abs(res.x[0] - 2.0) < 1e-8

    def test_rosenbrock_valley(self):
        def resid(p):
            return np.array([10.0 * (p[1] - p[0] ** 2), 1.0 - p[0]])

        def jac(p):
            return np.array([[-20.0 * p[0], 10.0], [-1.0, 0.0]])

        res = lm_solve(resid, jac, np.array([-1.2, 1.0]))
        assert res.status == CONVERGED
        assert np.abs(res.x - 1.0).max() < 1e-8


class TestDescentBehavior:
    def test_cost_never_exceeds_start(self):
        def resid(p):
            return np.array([10.0 * (p[1] - p[0] ** 2), 1.0 - p[0]])

        x0 = np.array([-1.2, 1.0])
        c0 = 0.5 * float(resid(x0) @ resid(x0))
        for cap in (1, 2, 3, 5, 8):
            res = lm_solve(resid, None, x0, LmOptions(max_iter=cap))
            assert res.cost <= c0 + 1e-15

    def test_cost_monotone_in_iteration_cap(self):
        def resid(p):
            return np.array([10.0 * (p[1] - p[0] ** 2), 1.0 - p[0]])

        x0 = np.array([-1.2, 1.0])
        costs = [
            lm_solve(resid, None, x0, LmOptions(max_iter=cap)).cost
            for cap in range(1, 10)
        ]
        assert all(b <= a + 1e-15 for a, b in zip(costs, costs[1:]))

    def test_iteration_cap_reported(self):
        def resid(p):
            return np.array([10.0 * (p[1] - p[0] ** 2), 1.0 - p[0]])

        res = lm_solve(resid, None, np.array([-1.2, 1.0]), LmOptions(max_iter=1))
        assert res.status == MAX_ITERATIONS
        assert res.iterations == 1


class TestErrorHandling:
    def test_nonfinite_start_raises(self):
        with pytest.raises(ValueError):
            lm_solve(lambda p: np.full(1, np.nan), lambda p: np.ones((1, 1)), np.ones(1))

    def test_stalls_when_no_step_is_finite(self):
        # Finite only at the start: every trial point is rejected, damping
        # escalates to its cap, and the solver reports the stall instead of
        # looping.
        x0 = np.array([0.5])

        def resid(p):
            out = np.empty(1)
            out[0] = p[0] if p[0] == x0[0] else np.inf
            return out

        res = lm_solve(resid, lambda p: np.ones((1, 1)), x0)
        assert res.status == STALLED
        assert res.x[0] == x0[0]
