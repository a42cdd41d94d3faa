"""
运行记录、轨道与经验测度快照的持久化。

运行记录目录结构:
    summary.jsonl  每行一个 {"key": ..., "value": ...}
    series.csv     长格式 (name, index, value)
    manifest.json  配置哈希、种子、流编号、版本与上述文件的 SHA-256
"""

from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, List, Union

import numpy as np
import pandas as pd

from .exceptions import RecordIOError, RunRecordCorruption
from .integrators import TrajectoryRecord
from .measures import EmpiricalMeasure
from .models import RunRecord
from .spectral import SpectralModel
from .utils import sha256_hex

logger = logging.getLogger(__name__)

SUMMARY_FILE = "summary.jsonl"
SERIES_FILE = "series.csv"
MANIFEST_FILE = "manifest.json"


def _write_bytes(path: Path, data: bytes) -> str:
    try:
        path.write_bytes(data)
    except OSError as e:
        raise RecordIOError(f"写入 {path} 失败: {e}")
    return sha256_hex(data)


def _read_bytes(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as e:
        raise RecordIOError(f"读取 {path} 失败: {e}")


def _series_frame(series: Dict[str, List[float]]) -> pd.DataFrame:
    rows = [(name, i, float(v)) for name, values in series.items() for i, v in enumerate(values)]
    return pd.DataFrame(rows, columns=["name", "index", "value"])


def write_run_record(record: RunRecord, out_dir: Union[str, Path]) -> Path:
    """
    写出运行记录。

    Args:
        record: RunRecord。
        out_dir: 目标目录, 不存在时创建。

    Returns:
        目录路径。
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise RecordIOError(f"无法创建目录 {out}: {e}")
    lines = [json.dumps({"key": k, "value": v}, sort_keys=True) for k, v in record.summary.items()]
    summary_bytes = ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8")
    series_bytes = _series_frame(record.series).to_csv(index=False, float_format="%.17g").encode("utf-8")
    digests = {
        SUMMARY_FILE: _write_bytes(out / SUMMARY_FILE, summary_bytes),
        SERIES_FILE: _write_bytes(out / SERIES_FILE, series_bytes),
    }
    manifest = {
        "configHash": record.config_hash,
        "kind": record.kind,
        "artifactVersion": record.artifact_version,
        "seed": record.seed,
        "streams": record.streams,
        "wallClock": record.wall_clock,
        "files": digests,
    }
    _write_bytes(out / MANIFEST_FILE, json.dumps(manifest, indent=2, sort_keys=True).encode("utf-8"))
    logger.info("运行记录已写入 %s", out)
    return out


def read_run_record(path: Union[str, Path]) -> RunRecord:
    """读取 write_run_record 的输出; 文件摘要与清单不符时抛出 RunRecordCorruption。"""
    root = Path(path)
    try:
        manifest = json.loads(_read_bytes(root / MANIFEST_FILE))
    except json.JSONDecodeError as e:
        raise RunRecordCorruption(f"清单无法解析: {e}")
    blobs = {}
    for name, digest in manifest.get("files", {}).items():
        data = _read_bytes(root / name)
        if sha256_hex(data) != digest:
            raise RunRecordCorruption(f"{name} 的摘要与清单不符")
        blobs[name] = data
    if set(blobs) != {SUMMARY_FILE, SERIES_FILE}:
        raise RunRecordCorruption("清单缺少必要文件")

    summary = {}
    for line in blobs[SUMMARY_FILE].decode("utf-8").splitlines():
        if line.strip():
            item = json.loads(line)
            summary[item["key"]] = item["value"]

    series: Dict[str, List[float]] = {}
    frame = pd.read_csv(root / SERIES_FILE, float_precision="round_trip", keep_default_na=False)
    for name, group in frame.groupby("name", sort=False):
        series[str(name)] = group.sort_values("index")["value"].astype(float).tolist()

    return RunRecord(
        config_hash=manifest["configHash"],
        kind=manifest["kind"],
        artifact_version=manifest["artifactVersion"],
        seed=manifest["seed"],
        streams=manifest.get("streams", {}),
        series=series,
        summary=summary,
        wall_clock=manifest.get("wallClock", 0.0),
    )


def export_trajectory(record: TrajectoryRecord, out_dir: Union[str, Path], name: str = "trajectory") -> Path:
    """
    慢路径导出为 CSV (time, member, stream, c0..c{K−1}), 上确界范数导出为 JSON-lines。
    """
    if record.slow is None:
        raise RecordIOError("轨道没有慢路径可导出")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    m, n, k = record.slow.shape
    frame = pd.DataFrame(record.slow.reshape(m * n, k), columns=[f"c{j}" for j in range(k)])
    frame.insert(0, "stream", np.tile(np.asarray(record.streams), m))
    frame.insert(0, "member", np.tile(np.arange(n), m))
    frame.insert(0, "time", np.repeat(record.times, n))
    csv_path = out / f"{name}.csv"
    try:
        frame.to_csv(csv_path, index=False, float_format="%.17g")
        with open(out / f"{name}_norms.jsonl", "w", encoding="utf-8") as f:
            sups = record.slow_sup if record.slow_sup is not None else record.slow_model.sup_norm(record.slow)
            for i, t in enumerate(record.times):
                for member in range(n):
                    f.write(json.dumps({"time": float(t), "member": member, "sup": float(sups[i, member])}) + "\n")
    except OSError as e:
        raise RecordIOError(f"导出轨道失败: {e}")
    return csv_path


def export_measure(measure: EmpiricalMeasure, out_dir: Union[str, Path], name: str = "measure") -> Path:
    """经验测度快照: 成员 × 模的系数矩阵 CSV 与 JSON 元数据。"""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{name}.csv"
    frame = pd.DataFrame(measure.members, columns=[f"c{j}" for j in range(measure.model.modes)])
    try:
        frame.to_csv(csv_path, index_label="member", float_format="%.17g")
        (out / f"{name}.json").write_text(json.dumps(measure.metadata(), indent=2), encoding="utf-8")
    except OSError as e:
        raise RecordIOError(f"导出经验测度失败: {e}")
    return csv_path


def load_measure(out_dir: Union[str, Path], model: SpectralModel, name: str = "measure") -> EmpiricalMeasure:
    """export_measure 的逆。"""
    root = Path(out_dir)
    try:
        meta = json.loads((root / f"{name}.json").read_text(encoding="utf-8"))
        frame = pd.read_csv(root / f"{name}.csv", index_col="member", float_precision="round_trip")
    except (OSError, json.JSONDecodeError) as e:
        raise RecordIOError(f"读取经验测度失败: {e}")
    return EmpiricalMeasure(
        model,
        frame.to_numpy(dtype=float),
        meta["t"],
        np.asarray(meta["x"], dtype=float),
        x_norm=meta.get("xNorm", 0.0),
        burn_in=meta["burnIn"],
        dt=meta["dt"],
        seed=meta["seed"],
        streams=meta["streams"],
    )
