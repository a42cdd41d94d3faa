import numpy as np
import pytest

from slowfast_ap.averaging import (
    ClosedFormLinearDrift,
    HMMDrift,
    NemytskiiDrift,
    bbar_regularity_probe,
    build_drift_oracle,
    ergodic_deviation_profile,
    estimate_bbar_ergodic,
    estimate_bbar_measure,
    truncate_coefficients,
)
from slowfast_ap.coefficients import build_coefficients
from slowfast_ap.config import ExperimentConfig
from slowfast_ap.constants import BURN_IN_FACTOR, HMM_T_MICRO_FACTOR, DriftMethod, DriftOracleKind
from slowfast_ap.exceptions import DriftOracleError, InsufficientSamples, InvalidParameter
from slowfast_ap.integrators import SlowFastConfig
from slowfast_ap.models import CoefficientSpec, HMMSpec, TermSpec

from conftest import small_linear_config

EXPECTED_DIAGONAL = np.array([1.0 / 3.0, 1.0 / 6.0, 1.0 / 11.0, 1.0 / 18.0])


class TestClosedForm:
    def test_diagonal_gain(self, sf):
        oracle = ClosedFormLinearDrift(sf)
        np.testing.assert_allclose(np.diag(oracle.matrix), EXPECTED_DIAGONAL, rtol=1e-10)
        np.testing.assert_allclose(oracle.matrix - np.diag(np.diag(oracle.matrix)), 0.0, atol=1e-12)

    def test_estimate(self, sf):
        estimate = ClosedFormLinearDrift(sf).estimate(sf.x0)
        assert estimate.method == DriftMethod.CLOSED_FORM
        assert estimate.error == 0.0
        assert estimate.estimate[0] == pytest.approx(1.0 / 3.0)

    def test_rejects_cubic(self):
        config = ExperimentConfig.ginzburg_landau(modes=4, eps_list=[0.5], dt_macro=0.01, horizon=0.1)
        with pytest.raises(DriftOracleError):
            ClosedFormLinearDrift(SlowFastConfig.from_experiment(config))


class TestErgodicEstimate:
    def test_matches_closed_form(self, sf):
        estimate = estimate_bbar_ergodic(sf.x0, 20.0, 32, sf, burn_in=2.0)
        assert estimate.method == DriftMethod.ERGODIC
        assert estimate.n_paths == 32
        assert abs(estimate.estimate[0] - 1.0 / 3.0) < 0.02 + 4.0 * estimate.standard_errors[0]

    def test_error_is_half_horizon_difference(self, sf):
        full = estimate_bbar_ergodic(sf.x0, 4.0, 8, sf, burn_in=1.0)
        half = estimate_bbar_ergodic(sf.x0, 2.0, 8, sf, burn_in=1.0)
        gap = sf.slow_model.sup_norm(np.asarray(full.estimate) - np.asarray(half.estimate))
        assert full.error == pytest.approx(float(gap), rel=1e-9)

    def test_bad_arguments(self, sf):
        with pytest.raises(InvalidParameter):
            estimate_bbar_ergodic(sf.x0, 0.0, 4, sf)
        with pytest.raises(InsufficientSamples):
            estimate_bbar_ergodic(sf.x0, 1.0, 0, sf)
        with pytest.raises(InsufficientSamples):
            estimate_bbar_ergodic(sf.x0, 0.01, 4, sf, burn_in=1.0)


class TestMeasureEstimate:
    def test_matches_closed_form(self, sf):
        estimate = estimate_bbar_measure(sf.x0, np.linspace(0.0, 5.0, 11), 64, sf, T_burn=2.0)
        assert estimate.method == DriftMethod.MEASURE
        assert estimate.estimate[0] == pytest.approx(1.0 / 3.0, abs=0.05)

    def test_empty_grid(self, sf):
        with pytest.raises(InsufficientSamples):
            estimate_bbar_measure(sf.x0, [], 8, sf, T_burn=1.0)


class TestNemytskii:
    def test_fast_independent_drift(self):
        spec = CoefficientSpec(
            b1=TermSpec(kind="linear", params={"p": -1.0, "q": 0.0, "r": 0.0}),
            b2=TermSpec(kind="linear", params={"d": 1.0}),
        )
        config = small_linear_config(coefficients=spec, drift_oracle=DriftOracleKind.NEMYTSKII)
        oracle = build_drift_oracle(SlowFastConfig.from_experiment(config), config.drift_oracle)
        assert isinstance(oracle, NemytskiiDrift)
        u = np.array([[0.3, -0.2, 0.1, 0.05]])
        np.testing.assert_allclose(oracle(u), -u, atol=1e-12)

    def test_rejects_fast_dependence(self, sf):
        with pytest.raises(DriftOracleError):
            NemytskiiDrift(sf)


class TestHMM:
    SPEC = HMMSpec(n_micro=2, t_micro=0.5, burn_in=0.5)

    def test_reproducible_across_instances(self, sf):
        u = np.stack([sf.x0, 0.5 * sf.x0])
        a = HMMDrift(sf, self.SPEC)(u)
        b = HMMDrift(sf, self.SPEC)(u)
        np.testing.assert_array_equal(a, b)
        assert a.shape == u.shape

    def test_call_counter_advances_streams(self, sf):
        oracle = HMMDrift(sf, self.SPEC)
        first = oracle(sf.x0)
        second = oracle(sf.x0)
        assert oracle.calls == 2
        assert not np.array_equal(first, second)

    def test_cache_returns_stored_value(self, sf):
        oracle = HMMDrift(sf, self.SPEC.model_copy(update={"cache": True}))
        first = oracle(sf.x0)
        np.testing.assert_array_equal(oracle(sf.x0), first)

    def test_pilot_burn_in_sets_micro_horizon(self, sf):
        oracle = HMMDrift(sf, HMMSpec(n_micro=2), burn_in=0.5)
        assert oracle.burn_in == 0.5
        assert oracle.t_micro == pytest.approx(HMM_T_MICRO_FACTOR * 0.5 / BURN_IN_FACTOR)
        assert build_drift_oracle(sf, DriftOracleKind.HMM, HMMSpec(n_micro=2), burn_in=0.5).burn_in == 0.5

    def test_stream_base_changes_result(self, sf):
        a = HMMDrift(sf, self.SPEC, stream_base=0)(sf.x0)
        b = HMMDrift(sf, self.SPEC, stream_base=1000)(sf.x0)
        assert not np.array_equal(a, b)


class TestTruncation:
    def test_cubic_becomes_lipschitz(self):
        coeffs = build_coefficients(ExperimentConfig.ginzburg_landau(modes=4).coefficients)
        truncated = truncate_coefficients(coeffs, 1.0)
        assert truncated.lipschitz_scan("b1") <= 2.0 + 1e-9
        assert truncated.lipschitz_scan("b1", truncated=False) > 100.0

    def test_radius_must_be_positive(self, sf):
        with pytest.raises(InvalidParameter):
            truncate_coefficients(sf.coeffs, 0.0)


class TestRegularityProbe:
    def test_linear_quotient_and_degenerate_pair(self, sf):
        oracle = ClosedFormLinearDrift(sf)
        x1 = sf.x0
        x2 = 2.0 * sf.x0
        pairs = [
            (oracle.estimate(x1), oracle.estimate(x2)),
            (oracle.estimate(x1), oracle.estimate(x1)),
        ]
        report = bbar_regularity_probe(pairs, sf.slow_model)
        assert report.excluded == 1
        assert report.quotients[1] is None
        assert report.quotients[0] == pytest.approx(1.0 / 3.0, rel=1e-10)
        assert report.max_quotient == pytest.approx(1.0 / 3.0, rel=1e-10)
        assert report.pairings[0] > 0


class TestDeviationProfile:
    def test_needs_three_horizons(self, sf):
        with pytest.raises(InsufficientSamples):
            ergodic_deviation_profile(sf.x0, [1.0, 2.0], 4, sf, EXPECTED_DIAGONAL * sf.x0)

    def test_decreasing_deviation(self, sf):
        profile = ergodic_deviation_profile(
            sf.x0, [1.0, 4.0, 8.0], 16, sf, EXPECTED_DIAGONAL * sf.x0, burn_in=2.0
        )
        assert profile.deviations[0] > profile.deviations[-1]
        assert profile.constant >= 0.0
        assert profile.floor >= 0.0
