import numpy as np
import pytest

from slowfast_ap.config import ExperimentConfig
from slowfast_ap import measures
from slowfast_ap.constants import BURN_IN_FACTOR, NoiseCoupling
from slowfast_ap.exceptions import (
    EmptyFamily,
    GridMismatch,
    InsufficientSamples,
    InvalidParameter,
    NonFiniteSample,
)
from slowfast_ap.integrators import SlowFastConfig
from slowfast_ap.measures import (
    EmpiricalMeasure,
    TestFunctionDictionary,
    ap_measure_diagnostic,
    default_burn_in,
    dual_lipschitz_distance,
    estimate_evolution_measure,
    evolution_property_residual,
    measure_continuity_probe,
    mixing_decay_estimate,
    moment_envelope,
    pilot_burn_in,
    tightness_proxy,
)
from slowfast_ap.models import MixingEstimate


def _ensemble(model, rng, scale=1.0, n=64):
    return EmpiricalMeasure(model, scale * rng.standard_normal((n, model.modes)), 0.0, np.zeros(model.modes))


class TestEmpiricalMeasure:
    def test_needs_two_members(self, model):
        with pytest.raises(InsufficientSamples):
            EmpiricalMeasure(model, np.zeros((1, model.modes)), 0.0, np.zeros(model.modes))

    def test_width_must_match(self, model):
        with pytest.raises(GridMismatch):
            EmpiricalMeasure(model, np.zeros((4, model.modes + 1)), 0.0, np.zeros(model.modes))

    def test_rejects_non_finite(self, model):
        members = np.zeros((4, model.modes))
        members[2, 1] = np.nan
        with pytest.raises(NonFiniteSample):
            EmpiricalMeasure(model, members, 0.0, np.zeros(model.modes))

    def test_metadata(self, model, rng):
        mu = _ensemble(model, rng, n=8)
        meta = mu.metadata()
        assert meta["members"] == 8
        assert meta["streams"] == list(range(8))


class TestDictionary:
    def test_bounded_and_lipschitz(self, model, rng):
        dictionary = TestFunctionDictionary.default(model)
        y = 3.0 * rng.standard_normal((200, model.modes))
        z = y + 0.1 * rng.standard_normal((200, model.modes))
        fy, fz = dictionary.evaluate(y), dictionary.evaluate(z)
        assert np.all(np.abs(fy) <= 0.5)
        gaps = np.max(np.abs(fy - fz), axis=1)
        assert np.all(gaps <= 0.5 * model.sup_norm(y - z) + 1e-12)

    def test_default_size(self, model):
        dictionary = TestFunctionDictionary.default(model)
        assert len(dictionary) == model.modes + model.modes * (model.modes - 1) // 2 + 1

    def test_empty(self, model):
        with pytest.raises(EmptyFamily):
            TestFunctionDictionary(model, np.zeros((0, model.modes)))


class TestDistance:
    def test_pseudometric(self, model, rng):
        p, q, r = (_ensemble(model, rng, scale) for scale in (0.5, 1.0, 1.5))
        d = lambda a, b: dual_lipschitz_distance(a, b).value
        assert d(p, p) == 0.0
        assert d(p, q) == d(q, p)
        assert d(p, r) <= d(p, q) + d(q, r) + 1e-12

    def test_report_has_band(self, model, rng):
        report = dual_lipschitz_distance(_ensemble(model, rng), _ensemble(model, rng))
        assert report.mc_band > 0
        assert len(report.profile) == len(report.standard_errors)


class TestEvolutionMeasure:
    def test_members_and_metadata(self, sf):
        mu = estimate_evolution_measure(sf.x0, 0.0, 1.0, 16, sf)
        assert mu.members.shape == (16, sf.fast_model.modes)
        assert mu.burn_in == 1.0
        assert mu.dt == pytest.approx(sf.dt_frozen)

    def test_invalid_arguments(self, sf):
        with pytest.raises(InvalidParameter):
            estimate_evolution_measure(sf.x0, 0.0, 0.0, 16, sf)
        with pytest.raises(InsufficientSamples):
            estimate_evolution_measure(sf.x0, 0.0, 1.0, 1, sf)

    def test_default_burn_in(self, sf):
        assert default_burn_in(sf) == pytest.approx(5.0)
        pilot = MixingEstimate(delta=2.0, conclusive=True)
        assert default_burn_in(sf, pilot) == pytest.approx(2.5)
        assert default_burn_in(sf, MixingEstimate(delta=2.0, conclusive=False)) == pytest.approx(5.0)


class TestEvolutionResidual:
    def test_same_time_is_zero(self, sf):
        report = evolution_property_residual(sf.x0, 0.5, 0.5, 16, sf)
        assert all(r == 0.0 for r in report.residuals)

    def test_residual_within_monte_carlo_band(self, sf):
        report = evolution_property_residual(sf.x0, 0.0, 0.5, 128, sf, T_burn=2.0)
        for residual, band in zip(report.residuals, report.bands):
            assert residual <= 2.0 * band + 1e-9


class TestMixing:
    def test_linear_contraction_rate(self, sf):
        y = np.zeros(sf.fast_model.modes)
        y[0] = 1.0
        estimate = mixing_decay_estimate(
            np.zeros(sf.slow_model.modes), y, [0.5, 0.75, 1.0, 1.25, 1.5], 64, sf, T_burn=2.0
        )
        # 最慢模: γ₀α₁ + α + d = 3
        assert estimate.conclusive
        assert 2.4 < estimate.delta < 3.6
        assert estimate.r_squared >= 0.95

    def test_pilot_burn_in_uses_fitted_rate(self, sf):
        burn, estimate = pilot_burn_in(sf, np.zeros(sf.slow_model.modes))
        assert estimate.conclusive
        assert burn == pytest.approx(BURN_IN_FACTOR / estimate.delta)
        assert burn < default_burn_in(sf)

    def test_pilot_burn_in_falls_back_when_inconclusive(self, sf, monkeypatch):
        monkeypatch.setattr(
            measures, "mixing_decay_estimate", lambda *args, **kwargs: MixingEstimate(delta=-1.0)
        )
        burn, estimate = pilot_burn_in(sf)
        assert not estimate.conclusive
        assert burn == default_burn_in(sf)

    def test_needs_four_lags(self, sf):
        with pytest.raises(InsufficientSamples):
            mixing_decay_estimate(sf.x0, sf.y0, [0.0, 0.5, 1.0], 8, sf, T_burn=1.0)


class TestShiftDiagnostic:
    @pytest.fixture
    def periodic_sf(self):
        config = ExperimentConfig.periodic_measure(modes=4, burn_in=1.0, seed=7)
        return SlowFastConfig.from_experiment(config)

    def test_common_noise_period_shift(self, periodic_sf):
        report = ap_measure_diagnostic(
            periodic_sf.x0, [0.0, 1.3], [2.0 * np.pi], 32, periodic_sf, T_burn=1.0
        )
        entry = report.entries[0]
        assert report.common_noise
        assert entry.discrepancy < 1e-8
        assert entry.accepted

    def test_independent_noise_sees_sampling_error(self, periodic_sf):
        report = ap_measure_diagnostic(
            periodic_sf.x0, [0.0], [2.0 * np.pi], 32, periodic_sf, T_burn=1.0,
            coupling=NoiseCoupling.INDEPENDENT,
        )
        assert not report.common_noise
        assert report.entries[0].discrepancy > 1e-6

    def test_needs_times(self, periodic_sf):
        with pytest.raises(InsufficientSamples):
            ap_measure_diagnostic(periodic_sf.x0, [], [1.0], 8, periodic_sf, T_burn=1.0)


class TestTightnessAndContinuity:
    def test_tightness_quantiles(self, sf):
        mu = estimate_evolution_measure(sf.x0, 0.0, 1.0, 32, sf)
        report = tightness_proxy(mu, 0.25)
        assert report.seminorm_quantiles == sorted(report.seminorm_quantiles)
        assert report.max_seminorm >= report.seminorm_quantiles[-1]

    def test_tightness_theta_range(self, model, rng):
        with pytest.raises(InvalidParameter):
            tightness_proxy(_ensemble(model, rng), 0.6)

    def test_linear_continuity_is_deterministic(self, sf):
        x1 = sf.x0
        x2 = 0.5 * sf.x0
        report = measure_continuity_probe(x1, x2, 0.0, 16, sf, T_burn=1.0)
        assert report.quotient > 0
        assert report.standard_error < 1e-9

    def test_identical_inputs(self, sf):
        with pytest.raises(InvalidParameter):
            measure_continuity_probe(sf.x0, sf.x0, 0.0, 8, sf, T_burn=1.0)

    def test_moment_envelope(self, sf):
        mus = [estimate_evolution_measure(scale * sf.x0, 0.0, 1.0, 16, sf) for scale in (0.0, 1.0, 2.0)]
        fit = moment_envelope(mus)
        assert fit.constant == max(fit.ratios)
        with pytest.raises(EmptyFamily):
            moment_envelope([])
