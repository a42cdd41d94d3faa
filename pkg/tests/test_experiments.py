import math

import numpy as np
import pytest

from slowfast_ap.averaging import ClosedFormLinearDrift
from slowfast_ap.config import ExperimentConfig
from slowfast_ap.constants import DriftOracleKind
from slowfast_ap.exceptions import ScheduleError
from slowfast_ap.experiments import convergence
from slowfast_ap.experiments.convergence import convergence_experiment, pilot_eta, resolve_burn_in
from slowfast_ap.experiments import invariants
from slowfast_ap.experiments.invariants import CHECKS, run_invariant_suite
from slowfast_ap.experiments.khasminskii import auxiliary_deviation, khasminskii_schedule, zeta
from slowfast_ap.experiments.remainder import remainder_series, weak_form_residual
from slowfast_ap.integrators import SlowFastConfig
from slowfast_ap.models import MixingEstimate
from slowfast_ap.records import read_run_record

from conftest import small_linear_config


class TestSchedule:
    def test_values(self):
        assert khasminskii_schedule(0.1) == pytest.approx(0.1 * math.log(10.0))
        assert zeta(0.1) == pytest.approx(math.log(10.0))
        assert khasminskii_schedule(0.1, kappa=2.0) == pytest.approx(0.2 * math.log(10.0))

    @pytest.mark.parametrize("eps", [0.0, 1.0, 1.5])
    def test_eps_must_be_in_open_interval(self, eps):
        with pytest.raises(ScheduleError):
            khasminskii_schedule(eps)

    def test_window_shorter_than_horizon(self):
        with pytest.raises(ScheduleError):
            khasminskii_schedule(0.5, horizon=0.1)

    def test_non_positive_kappa(self):
        with pytest.raises(ScheduleError):
            khasminskii_schedule(0.1, kappa=0.0)


class TestAuxiliaryDeviation:
    def test_series_shape(self, sf):
        series = auxiliary_deviation(sf, 0.2, N=4, window=0.05)
        assert series.window == 0.05
        assert len(series.times) == sf.n_macro
        assert series.sup == max(series.mean_square)
        assert series.mean_square[0] == 0.0

    @pytest.mark.slow
    def test_deviation_decreases_with_eps(self):
        # 快衰减率 α₁ + α + d ≫ 1/ζ_ε
        config = ExperimentConfig.linear_validation(
            modes=8, alpha=50.0, horizon=1.0, eps_list=[0.5, 0.2, 0.1, 0.05], seed=3,
        )
        sf = SlowFastConfig.from_experiment(config)
        series = [auxiliary_deviation(sf, eps, kappa=1.0, N=64) for eps in config.eps_list]
        for coarse, fine in zip(series, series[1:]):
            band = 3.0 * math.hypot(_se_at_sup(coarse), _se_at_sup(fine))
            assert fine.sup < coarse.sup + band
        assert series[-1].sup < series[0].sup


def _se_at_sup(series) -> float:
    return series.standard_errors[int(np.argmax(series.mean_square))]


class TestRemainder:
    def test_starts_at_zero(self, sf):
        probe = np.eye(sf.slow_model.modes)[0]
        report = remainder_series(sf, 0.2, probe, ClosedFormLinearDrift(sf), N=4)
        assert report.mean_path[0] == 0.0
        assert len(report.mean_path) == sf.n_macro + 1
        assert report.mean_sup == pytest.approx(np.mean(report.sup_values))

    def test_weak_form_identity(self, sf):
        report = weak_form_residual(sf, 0.2, np.eye(sf.slow_model.modes)[0], N=4)
        assert report.max_residual < 1e-2
        assert report.dt_macro == sf.dt_macro


class TestConvergence:
    @pytest.mark.slow
    def test_worker_count_does_not_change_record(self, linear_config):
        serial, serial_record = convergence_experiment(linear_config, workers=1)
        assert [cell.epsilon for cell in serial.cells] == linear_config.eps_list
        assert all(cell.trials == linear_config.trials for cell in serial.cells)
        for workers in (4, 16):
            parallel, record = convergence_experiment(linear_config, workers=workers)
            assert parallel == serial
            assert record.payload_equal(serial_record)

    @pytest.mark.slow
    def test_exceedance_shrinks_with_eps(self):
        config = ExperimentConfig.linear_validation(
            modes=8, horizon=1.0, eps_list=[0.5, 0.2, 0.1, 0.05], trials=50, seed=5,
        )
        report, _ = convergence_experiment(config)
        first, last = report.cells[0], report.cells[-1]
        assert first.proportion > 0.0
        assert last.proportion <= 0.5 * first.proportion
        assert report.monotone

    def test_burn_in_only_resolved_for_hmm(self, linear_config, monkeypatch):
        monkeypatch.setattr(convergence, "pilot_burn_in", lambda *args, **kwargs: (1.25, MixingEstimate()))
        assert resolve_burn_in(linear_config) is None
        hmm = linear_config.with_overrides(drift_oracle=DriftOracleKind.HMM)
        assert resolve_burn_in(hmm) == 1.0
        assert resolve_burn_in(hmm, 0.75) == 0.75
        assert resolve_burn_in(hmm.with_overrides(burn_in=None)) == 1.25

    def test_explicit_eta(self, linear_config):
        config = linear_config.with_overrides(eta=0.25)
        assert pilot_eta(config) == 0.25

    def test_record_round_trip(self, linear_config, tmp_path):
        _, record = convergence_experiment(linear_config, out_dir=tmp_path)
        loaded = read_run_record(tmp_path)
        assert loaded.payload_equal(record)
        assert loaded.kind == "sweep"
        assert set(loaded.series) == {f"gap/eps={eps}" for eps in linear_config.eps_list}


class TestInvariantSuite:
    def test_linear_validation_passes(self, linear_config):
        report = run_invariant_suite(linear_config)
        assert report.passed, [c for c in report.checks if not c.passed]
        assert len(report.checks) == len(CHECKS)

    def test_failure_is_recorded(self, linear_config, monkeypatch):
        def broken(config, sf):
            raise ValueError("boom")

        monkeypatch.setattr(invariants, "CHECKS", [("broken", broken, True)])
        report = invariants.run_invariant_suite(linear_config)
        assert not report.passed
        assert "boom" in report.checks[0].detail
