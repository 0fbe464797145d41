import numpy as np
import pytest

from core_utils.numerics import make_rng
from core_utils.schedule import NoiseSchedule, build_schedule
from guidance.control import GuidanceConfig
from models.priors import GmmPrior, GmmScoreModel, standard_normal_model


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def toy_sched():
    """alpha_bar = (0.9999, 0.64, 0.25, 0.005); the pair (2, 1) is (0.25, 0.64)."""
    return NoiseSchedule(np.array([0.9999, 0.64, 0.25, 0.005]))


@pytest.fixture
def sched():
    return build_schedule("linear-beta", 1000, 1e-4, 0.02)


@pytest.fixture
def short_sched():
    return build_schedule("linear-beta", 100, 1e-4, 0.12)


@pytest.fixture
def gmm_prior():
    rng = make_rng(7)
    return GmmPrior.random(4, 3, rng)


@pytest.fixture
def gmm_model(gmm_prior, short_sched):
    return GmmScoreModel(gmm_prior, short_sched)


@pytest.fixture
def normal_model(short_sched):
    return standard_normal_model(short_sched, 2)


@pytest.fixture
def fast_guidance():
    return GuidanceConfig(n_steps=3, sampling_steps=10, w_terminal=10.0, eta=0.7)
