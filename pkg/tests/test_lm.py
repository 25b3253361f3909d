import numpy as np
import pytest

from ivimlab import lm
from ivimlab.errors import DimensionError


def line_problem(x, y, theta0=(0.0, 0.0)):
    return lm.FitProblem(
        residual=lambda th: th[0] * x + th[1] - y,
        theta0=np.asarray(theta0, dtype=float),
        transforms=(lm.identity(), lm.identity()),
    )


class TestTransforms:
    def test_round_trip(self):
        transforms = (lm.identity(), lm.log_positive(), lm.logistic(0.0, 1.0),
                      lm.offset_log(0.002))
        theta = np.array([-3.5, 0.7, 0.25, 0.05])
        u = lm._to_internal(theta, transforms)
        back = lm._to_external(u, transforms)
        assert np.allclose(back, theta, rtol=1e-12)

    def test_ranges_enforced(self):
        with pytest.raises(ValueError):
            lm._to_internal(np.array([-1.0]), (lm.log_positive(),))
        with pytest.raises(ValueError):
            lm._to_internal(np.array([1.5]), (lm.logistic(0.0, 1.0),))
        with pytest.raises(ValueError):
            lm._to_internal(np.array([0.001]), (lm.offset_log(0.002),))

    def test_logistic_stays_inside_bounds(self):
        t = (lm.logistic(0.0, 1.0),)
        for u in (-800.0, -5.0, 0.0, 5.0, 800.0):
            v = lm._to_external(np.array([u]), t)[0]
            assert 0.0 <= v <= 1.0


class TestLmFit:
    def test_exact_line(self):
        x = np.arange(5.0)
        y = 2.0 * x + 1.0
        result = lm.lm_fit(line_problem(x, y))
        assert result.converged
        assert result.params == pytest.approx([2.0, 1.0], abs=1e-10)

    def test_mono_exponential_recovery(self):
        b = np.array([0, 100, 200, 300, 400, 500, 600.0])
        s = 100.0 * np.exp(-0.002 * b)
        problem = lm.FitProblem(
            residual=lambda th: th[0] * np.exp(-th[1] * b) - s,
            theta0=np.array([50.0, 0.01]),
            transforms=(lm.log_positive(), lm.log_positive()),
        )
        result = lm.lm_fit(problem)
        assert result.converged
        assert result.params[0] == pytest.approx(100.0, rel=1e-8)
        assert result.params[1] == pytest.approx(0.002, rel=1e-8)

    def test_start_at_optimum_zero_residual(self):
        x = np.arange(5.0)
        y = 2.0 * x + 1.0
        result = lm.lm_fit(line_problem(x, y, theta0=(2.0, 1.0)))
        assert result.converged
        assert result.iterations <= 2
        assert result.ssr == 0.0

    def test_start_at_optimum_noisy(self):
        rng = np.random.default_rng(0)
        x = np.arange(10.0)
        y = 2.0 * x + 1.0 + rng.normal(0, 0.1, 10)
        opt = np.polyfit(x, y, 1)
        result = lm.lm_fit(line_problem(x, y, theta0=tuple(opt)))
        assert result.converged
        assert result.iterations <= 2
        ssr0 = float((((opt[0] * x + opt[1]) - y) ** 2).sum())
        assert result.ssr <= ssr0 + 1e-12

    def test_matches_closed_form_ols(self):
        rng = np.random.default_rng(42)
        for _ in range(25):
            x = rng.uniform(-5, 5, 12)
            y = rng.uniform(-2, 2) * x + rng.uniform(-3, 3) + rng.normal(0, 0.5, 12)
            slope, intercept = np.polyfit(x, y, 1)
            result = lm.lm_fit(line_problem(x, y))
            assert result.converged
            assert result.params[0] == pytest.approx(slope, rel=1e-8, abs=1e-10)
            assert result.params[1] == pytest.approx(intercept, rel=1e-8, abs=1e-10)

    def test_cost_never_exceeds_start(self):
        rng = np.random.default_rng(5)
        b = np.array([0, 50, 100, 200, 400, 600.0])
        for _ in range(20):
            s = rng.uniform(10, 200) * np.exp(-rng.uniform(1e-4, 5e-3) * b)
            s = s + rng.normal(0, 1.0, b.size)
            s = np.maximum(s, 1.0)
            theta0 = np.array([rng.uniform(1, 300), rng.uniform(1e-5, 0.05)])
            problem = lm.FitProblem(
                residual=lambda th: th[0] * np.exp(-th[1] * b) - s,
                theta0=theta0,
                transforms=(lm.log_positive(), lm.log_positive()),
            )
            r0 = problem.residual(theta0)
            result = lm.lm_fit(problem)
            assert result.ssr <= float(r0 @ r0) + 1e-9

    def test_bounds_honored_at_result(self):
        # force the optimum against a bound: constant data, decaying model
        b = np.array([200, 400, 600.0])
        s = np.full(3, 50.0)
        problem = lm.FitProblem(
            residual=lambda th: th[0] * np.exp(-th[1] * b) - s,
            theta0=np.array([50.0, 0.01]),
            transforms=(lm.log_positive(), lm.logistic(1e-5, 1e-1)),
        )
        result = lm.lm_fit(problem)
        assert 1e-5 <= result.params[1] <= 1e-1
        assert result.params[1] < 1.1e-5  # driven to the lower bound

    def test_dimension_error_when_underdetermined(self):
        problem = lm.FitProblem(
            residual=lambda th: np.array([th[0] + th[1] - 1.0]),
            theta0=np.array([0.0, 0.0]),
            transforms=(lm.identity(), lm.identity()),
        )
        with pytest.raises(DimensionError):
            lm.lm_fit(problem)

    def test_non_finite_start_rejected(self):
        problem = lm.FitProblem(
            residual=lambda th: np.array([np.nan, np.nan]),
            theta0=np.array([1.0]),
            transforms=(lm.identity(),),
        )
        with pytest.raises(ValueError):
            lm.lm_fit(problem)

    def test_deterministic(self):
        rng = np.random.default_rng(9)
        x = rng.uniform(0, 1, 8)
        y = 3 * x - 1 + rng.normal(0, 0.2, 8)
        r1 = lm.lm_fit(line_problem(x, y))
        r2 = lm.lm_fit(line_problem(x, y))
        assert np.array_equal(r1.params, r2.params)
        assert r1.ssr == r2.ssr and r1.iterations == r2.iterations


class TestJacobian:
    def test_matches_central_difference_cost_gradient(self):
        rng = np.random.default_rng(11)
        b = np.linspace(0, 600, 8)
        s = 80.0 * np.exp(-0.003 * b) + rng.normal(0, 0.5, 8)
        transforms = (lm.log_positive(), lm.log_positive())

        def resid(th):
            return th[0] * np.exp(-th[1] * b) - s

        theta = np.array([90.0, 0.002])
        u = lm._to_internal(theta, transforms)
        r = resid(lm._to_external(u, transforms))
        J = lm._jacobian(resid, u, r, transforms)
        grad_fd = 2.0 * J.T @ r

        def cost(uu):
            rr = resid(lm._to_external(uu, transforms))
            return float(rr @ rr)

        for i in range(u.size):
            h = 1e-6 * max(1.0, abs(u[i]))
            up, um = u.copy(), u.copy()
            up[i] += h
            um[i] -= h
            central = (cost(up) - cost(um)) / (2 * h)
            assert grad_fd[i] == pytest.approx(central, rel=1e-4, abs=1e-8)
