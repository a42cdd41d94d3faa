import numpy as np
import pytest

from slowfast_ap.config import ExperimentConfig
from slowfast_ap.integrators import SlowFastConfig
from slowfast_ap.models import CoefficientSpec, ModelSpec, TermSpec
from slowfast_ap.signals import APSignal
from slowfast_ap.spectral import build_spectral_model

MODES = 4


def small_linear_config(**overrides) -> ExperimentConfig:
    base = dict(
        horizon=0.1,
        dt_macro=0.01,
        eps_list=[0.5, 0.2],
        trials=3,
        ensemble_size=32,
        burn_in=1.0,
        seed=7,
    )
    base.update(overrides)
    return ExperimentConfig.linear_validation(modes=MODES, **base)


def quiet_coefficients(d: float = 1.0, g2: float = 0.0) -> CoefficientSpec:
    """b₁ ≡ 0, b₂ = −dσ₂, 可选常数噪声。"""
    return CoefficientSpec(
        b1=TermSpec(kind="linear", params={"p": 0.0, "q": 0.0, "r": 0.0}),
        b2=TermSpec(kind="linear", params={"d": d}, signal=APSignal.constant(0.0)),
        g1=TermSpec(kind="constant", params={"g0": 0.1}),
        g2=TermSpec(kind="constant", params={"g0": g2}),
    )


@pytest.fixture
def linear_config() -> ExperimentConfig:
    return small_linear_config()


@pytest.fixture
def sf(linear_config) -> SlowFastConfig:
    return SlowFastConfig.from_experiment(linear_config)


@pytest.fixture
def model():
    return build_spectral_model(ModelSpec(modes=MODES))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)
