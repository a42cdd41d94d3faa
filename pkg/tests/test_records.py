import json

import numpy as np
import pandas as pd
import pytest

from slowfast_ap.exceptions import RecordIOError, RunRecordCorruption
from slowfast_ap.integrators import integrate_coupled
from slowfast_ap.measures import EmpiricalMeasure
from slowfast_ap.models import RunRecord
from slowfast_ap.records import (
    MANIFEST_FILE,
    SERIES_FILE,
    export_measure,
    export_trajectory,
    load_measure,
    read_run_record,
    write_run_record,
)


@pytest.fixture
def record() -> RunRecord:
    return RunRecord(
        config_hash="ab" * 32,
        kind="sweep",
        artifact_version="0.1.0",
        seed=7,
        streams={"trials": [0, 1, 2]},
        series={"gap/eps=0.5": [0.1, 1.0 / 3.0, 2.0**-40], "time": [0.0, 0.01]},
        summary={"eta": 0.25, "slope": -0.5, "eps": [0.5, 0.2]},
        wall_clock=1.5,
    )


class TestRunRecord:
    def test_round_trip(self, record, tmp_path):
        write_run_record(record, tmp_path)
        loaded = read_run_record(tmp_path)
        assert loaded.payload_equal(record)
        assert loaded.wall_clock == 1.5

    def test_manifest_lists_digests(self, record, tmp_path):
        write_run_record(record, tmp_path)
        manifest = json.loads((tmp_path / MANIFEST_FILE).read_text())
        assert manifest["configHash"] == record.config_hash
        assert set(manifest["files"]) == {"summary.jsonl", SERIES_FILE}

    def test_tampered_series(self, record, tmp_path):
        write_run_record(record, tmp_path)
        path = tmp_path / SERIES_FILE
        path.write_text(path.read_text().replace("0.1", "0.2", 1))
        with pytest.raises(RunRecordCorruption):
            read_run_record(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(RecordIOError):
            read_run_record(tmp_path / "missing")


class TestExports:
    def test_trajectory_csv(self, sf, tmp_path):
        trajectory = integrate_coupled(sf, streams=[3, 8])
        path = export_trajectory(trajectory, tmp_path)
        frame = pd.read_csv(path, float_precision="round_trip")
        assert list(frame.columns) == ["time", "member", "stream"] + [f"c{j}" for j in range(sf.slow_model.modes)]
        assert len(frame) == (sf.n_macro + 1) * 2
        assert sorted(frame["stream"].unique()) == [3, 8]
        last = frame[frame["time"] == frame["time"].max()]
        np.testing.assert_array_equal(last.iloc[:, 3:].to_numpy(), trajectory.slow[-1])
        norms = (tmp_path / "trajectory_norms.jsonl").read_text().splitlines()
        assert len(norms) == len(frame)

    def test_measure_round_trip(self, model, rng, tmp_path):
        members = rng.standard_normal((6, model.modes)) / 3.0
        mu = EmpiricalMeasure(model, members, 1.25, np.arange(model.modes, dtype=float), burn_in=2.0, dt=0.01, seed=9)
        export_measure(mu, tmp_path)
        loaded = load_measure(tmp_path, model)
        np.testing.assert_array_equal(loaded.members, mu.members)
        assert loaded.metadata() == mu.metadata()

    def test_load_measure_missing(self, model, tmp_path):
        with pytest.raises(RecordIOError):
            load_measure(tmp_path, model)
