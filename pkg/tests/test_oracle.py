import math

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from scipy.stats import norm

from core_utils.errors import SingularCovarianceError, UndefinedKLError
from core_utils.numerics import make_rng
from core_utils.schedule import plan_steps
from guidance.samplers import ddim_gaussian_chain, guided_step_kl
from models.priors import standard_normal_model
from utils.oracle import (
    GaussianChain,
    GaussianDist,
    bound_violation_rate,
    check_squared_triangle_bound,
    conditional_score,
    finite_diff_grad,
    gaussian_kl,
    gaussian_posterior,
    log_likelihood_quadrature,
    mc_chain_kl,
    relative_error,
    vjp_check,
)


class TestGaussianPosterior:
    def test_scalar_conjugate(self):
        post = gaussian_posterior([0.0], [[1.0]], [[1.0]], 1.0, [2.0])
        assert_allclose(post.mean, [1.0])
        assert_allclose(post.cov, [[0.5]])

    def test_uninformative_likelihood(self):
        post = gaussian_posterior([0.3, -0.2], np.eye(2), np.eye(2), 1e6, [5.0, 5.0])
        assert np.max(np.abs(post.mean - [0.3, -0.2])) < 1e-5

    def test_zero_operator_returns_prior(self):
        cov = np.array([[2.0, 0.3], [0.3, 1.0]])
        post = gaussian_posterior([1.0, 2.0], cov, np.zeros((1, 2)), 0.5, [4.0])
        assert_array_equal(post.mean, [1.0, 2.0])
        assert_array_equal(post.cov, cov)

    def test_matches_dense_formula(self, rng):
        A = rng.standard_normal((2, 3))
        y = rng.standard_normal(2)
        post = gaussian_posterior(np.zeros(3), np.eye(3), A, 0.4, y)
        cov = np.linalg.inv(np.eye(3) + A.T @ A / 0.16)
        assert_allclose(post.cov, cov, rtol=1e-10)
        assert_allclose(post.mean, cov @ A.T @ y / 0.16, rtol=1e-10)

    def test_singular_prior(self):
        with pytest.raises(SingularCovarianceError):
            gaussian_posterior([0.0, 0.0], np.zeros((2, 2)), np.eye(2), 1.0, [1.0, 1.0])

    def test_non_symmetric_covariance(self):
        with pytest.raises(ValueError):
            GaussianDist(np.zeros(2), np.array([[1.0, 0.5], [0.0, 1.0]]))

    def test_sampling_moments(self):
        dist = GaussianDist(np.array([1.0, -1.0]), np.array([[1.0, 0.6], [0.6, 2.0]]))
        samples = dist.sample(make_rng(0), 50_000)
        assert_allclose(samples.mean(axis=0), dist.mean, atol=0.03)
        assert_allclose(np.cov(samples.T), dist.cov, atol=0.05)


class TestConditionalScore:
    def test_consistent_observation(self, sched):
        x = np.array([0.7, -1.1])
        assert_array_equal(conditional_score(sched, 250, x, math.sqrt(sched.alpha(250)) * x, 0.2), np.zeros(2))

    def test_closed_form_value(self, toy_sched):
        assert_allclose(conditional_score(toy_sched, 2, np.array([1.0]), np.array([2.0]), 1.0), [0.428571], atol=1e-6)

    def test_matches_quadrature_derivative(self, toy_sched):
        x, y, s = 0.4, 1.3, 0.6
        fd = finite_diff_grad(lambda z: log_likelihood_quadrature(toy_sched, 2, float(z[0]), y, s), np.array([x]), h=1e-4)
        exact = conditional_score(toy_sched, 2, np.array([x]), np.array([y]), s)
        assert_allclose(fd, exact, rtol=1e-5)

    def test_quadrature_matches_density(self, toy_sched):
        value = log_likelihood_quadrature(toy_sched, 2, 0.4, 1.3, 0.6)
        assert_allclose(value, norm.logpdf(1.3, loc=0.5 * 0.4, scale=math.sqrt(0.75 + 0.36)), atol=1e-8)


class TestFiniteDifferences:
    def test_quadratic(self):
        assert_allclose(finite_diff_grad(lambda x: float(x @ x), np.array([3.0]), h=1e-3), [6.0], atol=1e-5)

    def test_constant(self):
        assert_array_equal(finite_diff_grad(lambda x: 4.2, np.array([1.0, 2.0])), np.zeros(2))

    def test_invalid_step(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda x: 0.0, np.zeros(1), h=0.0)

    def test_relative_error_floor(self):
        assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
        assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)

    def test_vjp_check_detects_wrong_vjp(self, rng):
        matrix = rng.standard_normal((3, 3))
        fn = lambda x: matrix @ x
        assert vjp_check(fn, lambda x, c: matrix.T @ c, rng.standard_normal(3), rng) < 1e-8
        assert vjp_check(fn, lambda x, c: matrix @ c, rng.standard_normal(3), rng) > 1e-2


class TestChainKl:
    def test_identical_chains(self, rng):
        chain = GaussianChain(np.zeros(2), [lambda x: 0.5 * x, lambda x: x - 1.0], [0.3, 0.4])
        estimate, stderr = mc_chain_kl(chain, chain, 100, rng)
        assert (estimate, stderr) == (0.0, 0.0)

    def test_single_step_shift(self, rng):
        guided = GaussianChain(np.zeros(1), [lambda x: x + 1.0], [0.5])
        free = GaussianChain(np.zeros(1), [lambda x: x], [0.5])
        estimate, stderr = mc_chain_kl(guided, free, 50, rng)
        assert estimate == 2.0
        assert stderr == 0.0

    def test_three_step_ddim_chain(self, sched, rng):
        model = standard_normal_model(sched, 2)
        plan = plan_steps(sched, 3, 600)
        controls = [rng.standard_normal(2) * 0.2 for _ in range(3)]
        x_start = rng.standard_normal(2)
        guided = ddim_gaussian_chain(model, sched, plan, 0.8, 1.5, x_start, controls)
        free = ddim_gaussian_chain(model, sched, plan, 0.8, 1.5, x_start)
        estimate, stderr = mc_chain_kl(guided, free, 2000, rng)
        analytic = sum(
            guided_step_kl(model, sched, x_start, u, t, t_prev, 0.8, 1.5) for u, (t, t_prev) in zip(controls, plan.pairs())
        )
        assert abs(estimate - analytic) <= 3.0 * stderr + 1e-9 * analytic

    def test_state_dependent_chain_is_within_stderr(self, gmm_model, rng):
        sched = gmm_model.sched
        plan = plan_steps(sched, 2, 60)
        controls = [np.full(4, 0.1), np.full(4, -0.1)]
        x_start = rng.standard_normal(4)
        guided = ddim_gaussian_chain(gmm_model, sched, plan, 1.0, 1.0, x_start, controls)
        free = ddim_gaussian_chain(gmm_model, sched, plan, 1.0, 1.0, x_start)
        estimate, stderr = mc_chain_kl(guided, free, 500, rng)
        first = guided_step_kl(gmm_model, sched, x_start, controls[0], 60, plan.timesteps[1], 1.0, 1.0)
        assert estimate >= first - 1e-12
        assert stderr > 0.0

    def test_deterministic_step_is_undefined(self, rng):
        chain = GaussianChain(np.zeros(1), [lambda x: x], [0.0])
        with pytest.raises(UndefinedKLError):
            mc_chain_kl(chain, chain, 10, rng)

    def test_length_limits(self, rng):
        long = GaussianChain(np.zeros(1), [lambda x: x] * 5, [1.0] * 5)
        with pytest.raises(ValueError):
            mc_chain_kl(long, long, 10, rng)

    def test_gaussian_kl(self):
        assert gaussian_kl(np.array([1.0, 1.0]), np.zeros(2), 1.0) == 1.0


class TestTriangleBound:
    def test_aligned_vectors(self):
        assert check_squared_triangle_bound(np.array([1.0]), np.array([1.0])) == (False, True)

    def test_cancelling_vectors(self):
        assert check_squared_triangle_bound(np.array([1.0]), np.array([-1.0])) == (True, True)

    def test_random_pairs_never_break_factor_two(self):
        plain, factor2 = bound_violation_rate(make_rng(31), 100_000, 4)
        assert factor2 == 0.0
        assert 0.3 < plain < 0.7
