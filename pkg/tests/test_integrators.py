import numpy as np
import pytest

from slowfast_ap.config import ExperimentConfig, Settings
from slowfast_ap.constants import LINEAR_VALIDATION
from slowfast_ap.exceptions import BlowUpError, InsufficientSamples, InvalidParameter, InvalidTimeInterval
from slowfast_ap.integrators import (
    SlowFastConfig,
    increment_regularity_probe,
    integrate_averaged,
    integrate_coupled,
    integrate_fast_frozen,
)
from slowfast_ap.models import CoefficientSpec, FieldSpec, ModelSpec, TermSpec
from slowfast_ap.signals import APSignal

from conftest import quiet_coefficients, small_linear_config


@pytest.fixture
def quiet_sf() -> SlowFastConfig:
    return SlowFastConfig.from_experiment(small_linear_config(coefficients=quiet_coefficients()))


class TestSlowFastConfig:
    def test_substeps_follow_eps(self, sf):
        assert sf.replace(eps=0.2).n_sub == 1
        assert sf.replace(eps=0.05).n_sub == 4
        assert sf.replace(eps=0.05).dt_fast == pytest.approx(0.0025)
        assert sf.n_macro == 10

    @pytest.mark.parametrize("eps", [0.0, 1.5])
    def test_eps_out_of_range(self, sf, eps):
        with pytest.raises(InvalidParameter):
            sf.replace(eps=eps)

    def test_c_dt_capped(self, sf):
        with pytest.raises(InvalidParameter):
            sf.replace(c_dt=0.2)

    def test_settings_feed_thresholds(self, linear_config):
        sf = SlowFastConfig.from_experiment(linear_config, settings=Settings(blowup_threshold=5.0, noise_chunk=16))
        assert sf.blowup_threshold == 5.0
        assert sf.noise_chunk == 16


class TestFastFrozen:
    @pytest.mark.parametrize("s, t, h", [(0.0, 1.0, 0.1), (0.25, 1.25, 1e-3)])
    def test_zero_noise_decay_matches_exponential(self, quiet_sf, s, t, h):
        model = quiet_sf.fast_model
        y0 = np.ones(model.modes)
        record = integrate_fast_frozen(quiet_sf.x0, s, t, y0, quiet_sf, dt=h)
        rate = model.alphas + quiet_sf.alpha + 1.0
        np.testing.assert_allclose(record.final_fast[0], np.exp(-rate * (t - s)) * y0, rtol=1e-4)
        assert record.times.tolist() == [s, t]

    def test_linear_decay_is_exact_on_coarse_grid(self, quiet_sf):
        model = quiet_sf.fast_model
        y0 = np.ones(model.modes)
        record = integrate_fast_frozen(quiet_sf.x0, 0.0, 1.0, y0, quiet_sf, dt=0.1)
        expected = np.exp(-(model.alphas + quiet_sf.alpha + 1.0)) * y0
        np.testing.assert_allclose(record.final_fast[0], expected, rtol=1e-10, atol=1e-14)

    @pytest.mark.slow
    def test_stationary_variance_of_linear_modes(self):
        sf = SlowFastConfig.from_experiment(ExperimentConfig.linear_validation(modes=8, seed=11))
        model = sf.fast_model
        n = 10_000
        record = integrate_fast_frozen(
            np.zeros(model.modes), -5.0, 0.0, np.zeros(model.modes), sf, streams=range(n)
        )
        p = LINEAR_VALIDATION
        rate = p["gamma0"] * model.alphas + p["alpha"] + p["d"]
        expected = p["g0"] ** 2 * model.noise_eigenvalues**2 / (2.0 * rate)
        sample = record.final_fast.var(axis=0, ddof=1)
        se = expected * np.sqrt(2.0 / (n - 1))
        assert np.all(np.abs(sample - expected) <= 3.0 * se)

    def test_uneven_segments_do_not_reuse_increments(self, sf):
        y0 = np.zeros(sf.fast_model.modes)
        seen_first, seen_second = [], []
        first = integrate_fast_frozen(
            sf.x0, 0.0, 0.32, y0, sf, stream=2, dt=0.1, observer=lambda r, v: seen_first.append(r)
        )
        second = integrate_fast_frozen(
            sf.x0, 0.32, 0.52, first.final_fast, sf, stream=2, dt=0.1, observer=lambda r, v: seen_second.append(r)
        )
        whole = integrate_fast_frozen(sf.x0, 0.0, 0.5, y0, sf, stream=2, dt=0.1)
        assert seen_first == pytest.approx([0.0, 0.1, 0.2])
        assert seen_second == pytest.approx([0.3, 0.4])
        assert first.times[-1] == 0.32
        np.testing.assert_allclose(second.final_fast, whole.final_fast, rtol=1e-12, atol=1e-14)

    def test_negative_start_stitches_two_sided_noise(self, sf):
        y0 = np.zeros(sf.fast_model.modes)
        whole = integrate_fast_frozen(sf.x0, -0.5, 0.5, y0, sf, stream=3, dt=0.1)
        first = integrate_fast_frozen(sf.x0, -0.5, 0.0, y0, sf, stream=3, dt=0.1)
        second = integrate_fast_frozen(sf.x0, 0.0, 0.5, first.final_fast, sf, stream=3, dt=0.1)
        np.testing.assert_allclose(whole.final_fast, second.final_fast, rtol=1e-10, atol=1e-12)

    def test_streams_are_independent_of_batch(self, sf):
        y0 = np.zeros(sf.fast_model.modes)
        batch = integrate_fast_frozen(sf.x0, 0.0, 0.5, y0, sf, streams=[4, 9], dt=0.05)
        single = integrate_fast_frozen(sf.x0, 0.0, 0.5, y0, sf, stream=9, dt=0.05)
        np.testing.assert_allclose(batch.final_fast[1], single.final_fast[0], rtol=1e-12, atol=1e-14)

    def test_observer_sees_every_step(self, sf):
        seen = []
        integrate_fast_frozen(
            sf.x0, 0.0, 0.3, np.zeros(sf.fast_model.modes), sf, dt=0.1, observer=lambda r, v: seen.append(r)
        )
        assert seen == pytest.approx([0.0, 0.1, 0.2])

    def test_record_every(self, sf):
        record = integrate_fast_frozen(sf.x0, 0.0, 1.0, np.zeros(sf.fast_model.modes), sf, dt=0.1, record_every=2)
        assert record.fast.shape[0] == 6

    def test_reversed_interval(self, sf):
        with pytest.raises(InvalidTimeInterval):
            integrate_fast_frozen(sf.x0, 1.0, 0.0, np.zeros(sf.fast_model.modes), sf)


class TestCoupled:
    def test_heat_flow_without_reaction_or_noise(self):
        modes = 16
        coefficients = CoefficientSpec(
            b1=TermSpec(kind="linear", params={"p": 0.0, "q": 0.0, "r": 0.0}),
            b2=TermSpec(kind="linear", params={"d": 0.0}, signal=APSignal.constant(0.0)),
            g1=TermSpec(kind="constant", params={"g0": 0.0}),
            g2=TermSpec(kind="constant", params={"g0": 0.0}),
        )
        x0 = [1.0 / (k + 1) for k in range(modes)]
        config = ExperimentConfig.linear_validation(
            modes=modes, coefficients=coefficients, x0=FieldSpec(coefficients=x0),
            horizon=0.1, dt_macro=1e-4, eps_list=[0.5],
        )
        sf = SlowFastConfig.from_experiment(config)
        record = integrate_coupled(sf)
        expected = np.exp(-sf.slow_model.alphas * record.times[-1]) * np.asarray(x0)
        np.testing.assert_allclose(record.slow[-1, 0], expected, rtol=1e-6)

    def test_shapes(self, sf):
        record = integrate_coupled(sf, streams=range(3), store_fast=True)
        assert record.slow.shape == (sf.n_macro + 1, 3, sf.slow_model.modes)
        assert record.fast.shape[1:] == (3, sf.fast_model.modes)
        assert record.times[-1] == pytest.approx(sf.horizon)

    def test_zero_b1_matches_averaged_with_zero_drift(self, quiet_sf):
        coupled = integrate_coupled(quiet_sf, streams=[2, 6])
        averaged = integrate_averaged(
            quiet_sf.x0, quiet_sf.horizon, lambda u: np.zeros_like(u), quiet_sf, streams=[2, 6]
        )
        np.testing.assert_array_equal(coupled.slow, averaged.slow)

    def test_reproducible(self, sf):
        a = integrate_coupled(sf, streams=[0, 1])
        b = integrate_coupled(sf, streams=[0, 1])
        np.testing.assert_array_equal(a.slow, b.slow)

    def test_blowup_reports_stream(self, sf):
        with pytest.raises(BlowUpError) as info:
            integrate_coupled(sf.replace(blowup_threshold=1e-6), streams=[5])
        assert info.value.stream == 5
        assert info.value.seed == sf.seed

    def test_freeze_window_resets_auxiliary_process(self, sf):
        record = integrate_coupled(sf, streams=[0, 1], freeze_window=5 * sf.dt_macro)
        deviation = record.extras["aux_deviation"]
        assert deviation.shape == (sf.n_macro, 2)
        np.testing.assert_array_equal(deviation[0], 0.0)
        np.testing.assert_array_equal(deviation[5], 0.0)
        assert np.all(deviation[1] > 0.0)

    def test_macro_hook(self, sf):
        calls = []
        integrate_coupled(sf, on_macro_step=lambda k, t, u, b, g: calls.append(k))
        assert calls == list(range(sf.n_macro))


class TestRegularityProbe:
    def test_needs_enough_lags(self, sf):
        with pytest.raises(InsufficientSamples):
            increment_regularity_probe(integrate_coupled(sf, streams=range(2)))

    def test_exponent_is_finite(self, linear_config):
        sf = SlowFastConfig.from_experiment(linear_config.with_overrides(horizon=0.64))
        fit = increment_regularity_probe(integrate_coupled(sf, streams=range(8)))
        assert np.isfinite(fit.exponent)
        assert fit.lower <= fit.exponent <= fit.upper
        assert len(fit.lags) == 5
