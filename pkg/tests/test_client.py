import pytest

from slowfast_ap import client as client_module
from slowfast_ap.client import SlowFastClient
from slowfast_ap.config import Settings
from slowfast_ap.models import MixingEstimate

from conftest import small_linear_config


@pytest.fixture
def pilot_calls(monkeypatch):
    calls = []

    def fake_pilot(config, x=None, N=None):
        calls.append(x)
        return 0.75, MixingEstimate(delta=5.0 / 0.75, conclusive=True)

    monkeypatch.setattr(client_module, "pilot_burn_in", fake_pilot)
    return calls


class TestBurnIn:
    def test_configured_burn_in_skips_pilot(self, pilot_calls):
        client = SlowFastClient(small_linear_config(burn_in=2.0), Settings())
        assert client._get_burn_in() == 2.0
        assert pilot_calls == []

    def test_pilot_runs_once_when_unset(self, pilot_calls):
        client = SlowFastClient(small_linear_config(burn_in=None), Settings())
        client.estimate_bbar(T=0.5, n_paths=2)
        client.estimate_bbar(T=0.5, n_paths=2)
        assert client._get_burn_in() == 0.75
        assert len(pilot_calls) == 1

    def test_measure_reports_pilot(self, pilot_calls):
        client = SlowFastClient(small_linear_config(burn_in=None), Settings())
        record = client.measure(N=8, lags=[0.0, 0.1, 0.2, 0.3], times=(0.0,), max_shifts=0, persist=False)
        assert record.summary["burnIn"] == 0.75
        assert record.summary["pilot"]["delta"] == pytest.approx(5.0 / 0.75)
        assert len(pilot_calls) == 1

    def test_closed_form_sweep_needs_no_pilot(self, pilot_calls):
        client = SlowFastClient(small_linear_config(burn_in=None), Settings())
        assert client._oracle_burn_in() is None
        assert pilot_calls == []
