import numpy as np
import pytest
from numpy.testing import assert_allclose

from core_utils.errors import (
    DomainError,
    InvalidPlanError,
    ScheduleConstructionError,
    ScheduleOrderError,
)
from core_utils.schedule import (
    NoiseSchedule,
    build_schedule,
    ddim_direction_scale,
    ddim_sigma,
    ddpm_posterior_std,
    ndtm_coefficients,
    plan_steps,
    vp_diffusion_increment,
)


class TestBuildSchedule:
    def test_linear_beta_reaches_noise(self, sched):
        assert sched.T == 1000
        assert sched.alpha(1000) < 1e-4
        assert 0.999 < sched.alpha(0) < 1.0

    @pytest.mark.parametrize("kind", ["linear-beta", "cosine"])
    def test_strictly_decreasing(self, kind):
        s = build_schedule(kind, 200, 1e-4, 0.05)
        assert np.all(np.diff(s.alpha_bar) < 0.0)

    def test_too_short(self):
        with pytest.raises(ScheduleConstructionError):
            build_schedule("linear-beta", 1)

    def test_bad_betas(self):
        with pytest.raises(ScheduleConstructionError):
            build_schedule("linear-beta", 100, 0.02, 1e-4)

    def test_unknown_kind(self):
        with pytest.raises(ScheduleConstructionError):
            build_schedule("sigmoid", 100)

    def test_invalid_alpha_bar(self):
        with pytest.raises(ScheduleConstructionError):
            NoiseSchedule(np.array([0.9999, 0.7, 0.8, 0.005]))
        with pytest.raises(ScheduleConstructionError):
            NoiseSchedule(np.array([0.99, 0.5, 0.005]))
        with pytest.raises(ScheduleConstructionError):
            NoiseSchedule(np.array([0.9999, 0.5, 0.05]))

    def test_read_only(self, toy_sched):
        with pytest.raises(ValueError):
            toy_sched.alpha_bar[1] = 0.5


class TestDdimSigma:
    def test_eta_zero(self, toy_sched):
        assert ddim_sigma(toy_sched, 2, 1, 0.0) == 0.0

    def test_worked_values(self, toy_sched):
        assert_allclose(ddim_sigma(toy_sched, 2, 1, 1.0), 0.540833, atol=1e-5)
        assert_allclose(ddim_sigma(toy_sched, 2, 1, 0.5), 0.270416, atol=1e-5)

    def test_linear_in_eta(self, sched):
        for eta in (0.1, 0.35, 0.7):
            assert ddim_sigma(sched, 500, 480, eta) == eta * ddim_sigma(sched, 500, 480, 1.0)

    def test_ancestral_std(self, sched):
        a_t, a_p = sched.alpha(300), sched.alpha(250)
        expected = np.sqrt((1.0 - a_p) * (1.0 - a_t / a_p) / (1.0 - a_t))
        assert ddim_sigma(sched, 300, 250, 1.0) == expected
        assert ddpm_posterior_std(sched, 300, 250) == expected

    def test_order_error(self, toy_sched):
        with pytest.raises(ScheduleOrderError):
            ddim_sigma(toy_sched, 1, 2, 0.5)

    def test_eta_range(self, toy_sched):
        with pytest.raises(ValueError):
            ddim_sigma(toy_sched, 2, 1, 1.5)


class TestNdtmCoefficients:
    def test_deterministic_pair(self, toy_sched):
        kappa, tau = ndtm_coefficients(toy_sched, 2, 1, 0.0, 2.0)
        assert_allclose(kappa, 3.2, atol=1e-12)
        assert_allclose(tau, -0.785641, atol=1e-5)

    def test_stochastic_pair(self, toy_sched):
        _, tau = ndtm_coefficients(toy_sched, 2, 1, 1.0, 2.0)
        assert_allclose(tau, -1.125833, atol=1e-5)

    def test_kappa_linear_in_gamma(self, sched):
        k1, _ = ndtm_coefficients(sched, 700, 680, 0.7, 1.0)
        k3, _ = ndtm_coefficients(sched, 700, 680, 0.7, 3.0)
        assert_allclose(k3, 3.0 * k1, rtol=1e-15)
        assert ndtm_coefficients(sched, 700, 680, 0.7, 0.0)[0] == 0.0

    def test_negative_direction_variance(self, toy_sched):
        with pytest.raises(DomainError) as info:
            ddim_direction_scale(toy_sched, 2, 1, 0.7)
        assert info.value.t == 2


class TestPlanSteps:
    def test_full_plan(self, sched):
        plan = plan_steps(sched, 50, 1000)
        assert len(plan) == 50
        assert plan.timesteps[0] == 1000
        assert plan.timesteps[-1] == 1
        assert all(a > b for a, b in zip(plan.timesteps, plan.timesteps[1:]))

    def test_single_step(self, sched):
        assert plan_steps(sched, 1, 400).timesteps == (400,)

    def test_too_many_steps(self, sched):
        with pytest.raises(InvalidPlanError):
            plan_steps(sched, 500, 400)

    def test_every_timestep(self, toy_sched):
        plan = plan_steps(toy_sched, 3, 3)
        assert list(plan.pairs()) == [(3, 2), (2, 1), (1, 0)]


def test_vp_increment(toy_sched):
    assert_allclose(vp_diffusion_increment(toy_sched, 2, 1), 1.0 - 0.25 / 0.64)
