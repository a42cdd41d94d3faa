import json

import pytest
from pydantic import ValidationError

from slowfast_ap.config import PRESETS, ExperimentConfig, Settings, load_experiment_config
from slowfast_ap.exceptions import ConfigValidationError, RecordIOError
from slowfast_ap.models import CoefficientSpec, ModelSpec, TermSpec
from slowfast_ap.signals import APSignal

from conftest import small_linear_config


class TestPresets:
    @pytest.mark.parametrize("name", sorted(PRESETS))
    def test_presets_validate(self, name):
        config = PRESETS[name](modes=4)
        assert config.name == name
        assert len(config.config_hash) == 64

    def test_hash_tracks_seed(self, linear_config):
        assert linear_config.config_hash == small_linear_config().config_hash
        assert linear_config.with_overrides(seed=8).config_hash != linear_config.config_hash

    def test_aliases(self, linear_config):
        payload = json.loads(linear_config.model_dump_json(by_alias=True))
        assert "epsList" in payload
        restored = ExperimentConfig.model_validate(payload)
        assert restored.config_hash == linear_config.config_hash


class TestValidation:
    def test_eps_must_decrease(self, linear_config):
        with pytest.raises(ValidationError):
            linear_config.with_overrides(eps_list=[0.1, 0.2])

    def test_eps_range(self, linear_config):
        with pytest.raises(ValidationError):
            linear_config.with_overrides(eps_list=[1.5, 0.5])

    def test_c_dt_cap(self, linear_config):
        with pytest.raises(ValidationError):
            linear_config.with_overrides(c_dt=0.2)

    def test_gamma_lower_bound(self, linear_config):
        coefficients = linear_config.coefficients.model_copy(update={"gamma": APSignal.cosine(1.0, 1.0)})
        with pytest.raises(ValidationError):
            linear_config.with_overrides(coefficients=coefficients)

    def test_beta_rho_relation(self):
        with pytest.raises(ValidationError):
            ModelSpec(rho=4.0, beta=2.5)
        with pytest.raises(ValidationError):
            ModelSpec(rho=None, beta=1.0)

    def test_closed_form_needs_linear_terms(self):
        with pytest.raises(ValidationError):
            ExperimentConfig.ginzburg_landau(modes=4, drift_oracle="closed_form")

    def test_non_dissipative_fast_drift(self, linear_config):
        spec = CoefficientSpec(
            b1=TermSpec(kind="linear", params={"p": 0.0, "q": 1.0, "r": 0.0}),
            b2=TermSpec(kind="linear", params={"d": -1.0}, signal=APSignal.constant(0.0)),
        )
        with pytest.raises(ValidationError):
            linear_config.with_overrides(coefficients=spec)


class TestLoad:
    def test_preset_name(self):
        assert load_experiment_config("periodic_measure").name == "periodic_measure"

    def test_json_file(self, linear_config, tmp_path):
        path = tmp_path / "config.json"
        path.write_text(linear_config.model_dump_json(by_alias=True))
        assert load_experiment_config(path).config_hash == linear_config.config_hash

    def test_bad_json(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{not json")
        with pytest.raises(ConfigValidationError):
            load_experiment_config(path)

    def test_invalid_payload(self, linear_config, tmp_path):
        payload = json.loads(linear_config.model_dump_json(by_alias=True))
        payload["epsList"] = [0.1, 0.5]
        path = tmp_path / "config.json"
        path.write_text(json.dumps(payload))
        with pytest.raises(ConfigValidationError):
            load_experiment_config(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(RecordIOError):
            load_experiment_config(tmp_path / "absent.json")


class TestSettings:
    def test_environment(self, monkeypatch):
        monkeypatch.setenv("SLOWFAST_WORKERS", "3")
        monkeypatch.setenv("SLOWFAST_SEED", "42")
        settings = Settings()
        assert settings.workers == 3
        assert settings.seed == 42

    def test_rejects_zero_workers(self, monkeypatch):
        monkeypatch.setenv("SLOWFAST_WORKERS", "0")
        with pytest.raises(ValidationError):
            Settings()
