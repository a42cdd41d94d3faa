from __future__ import annotations

import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np

from ..averaging import build_drift_oracle
from ..config import ExperimentConfig
from ..constants import ARTIFACT_VERSION, DriftOracleKind, NoiseChannel, NoiseCoupling
from ..exceptions import BlowUpError
from ..integrators import SlowFastConfig, integrate_averaged, integrate_coupled
from ..measures import pilot_burn_in
from ..models import ConvergenceCell, ConvergenceReport, RunRecord
from ..records import write_run_record
from ..utils import wilson_interval

logger = logging.getLogger(__name__)

# HMM 预言机在每个试验内的流编号跨度
_ORACLE_STREAM_SPAN = 1 << 32

Job = Tuple[str, int, float, int, Optional[float]]


def _run_trial(job: Job) -> Dict[str, object]:
    """
    单个 (ε, trial) 单元: 耦合系统与平均方程共享 Q₁ 流 (common 耦合), 返回 sup_t|u_ε − ū|_E。

    只依赖 (配置, ε, trial), 因此与进程数和调度顺序无关。
    """
    config_json, eps_index, eps, trial, burn_in = job
    config = ExperimentConfig.model_validate_json(config_json)
    sf = SlowFastConfig.from_experiment(config, eps=eps)
    averaged_stream = trial if config.coupling == NoiseCoupling.COMMON else trial + config.trials
    try:
        coupled = integrate_coupled(sf, stream=trial)
        oracle = build_drift_oracle(
            sf, config.drift_oracle, config.hmm, stream_base=(1 + trial) * _ORACLE_STREAM_SPAN, burn_in=burn_in,
        )
        averaged = integrate_averaged(sf.x0, sf.horizon, oracle, sf, stream=averaged_stream)
    except BlowUpError as e:
        logger.warning("ε=%s 试验 %d 发散: %s", eps, trial, e)
        return {"eps_index": eps_index, "trial": trial, "gap": float("inf"), "blowup": True}
    n = min(coupled.slow.shape[0], averaged.slow.shape[0])
    diff = coupled.slow[:n, 0] - averaged.slow[:n, 0]
    gap = float(np.max(sf.slow_model.sup_norm(diff)))
    return {"eps_index": eps_index, "trial": trial, "gap": gap, "blowup": False}


def resolve_burn_in(config: ExperimentConfig, burn_in: Optional[float] = None) -> Optional[float]:
    """HMM 预言机的预热长度: 显式值、配置值, 否则由试运行混合估计给出; 其他预言机返回 None。"""
    if DriftOracleKind(config.drift_oracle) != DriftOracleKind.HMM:
        return None
    if burn_in is not None:
        return burn_in
    if config.burn_in is not None:
        return config.burn_in
    sf = SlowFastConfig.from_experiment(config)
    burn, _ = pilot_burn_in(sf, sf.x0)
    return burn


def pilot_eta(config: ExperimentConfig, burn_in: Optional[float] = None) -> float:
    """η 默认值: eta_scale × 平均解在试运行 (PILOT 通道) 中的上确界范数。"""
    if config.eta is not None:
        return config.eta
    sf = SlowFastConfig.from_experiment(config)
    oracle = build_drift_oracle(sf, config.drift_oracle, config.hmm, stream_base=0, burn_in=burn_in)
    pilot = integrate_averaged(sf.x0, sf.horizon, oracle, sf, channel=NoiseChannel.PILOT)
    scale = float(np.max(pilot.slow_sup))
    if scale <= 0:
        logger.warning("试运行的平均解恒为零, η 取 eta_scale")
        return config.eta_scale
    return config.eta_scale * scale


def _cells(config: ExperimentConfig, results: List[Dict[str, object]], eta: float) -> List[ConvergenceCell]:
    cells = []
    for i, eps in enumerate(config.eps_list):
        rows = [r for r in results if r["eps_index"] == i]
        if not rows:
            continue
        gaps = np.asarray([r["gap"] for r in rows], dtype=float)
        blowups = int(sum(bool(r["blowup"]) for r in rows))
        exceed = int(np.count_nonzero(gaps > eta))
        low, high = wilson_interval(exceed, len(rows))
        finite = gaps[np.isfinite(gaps)]
        cells.append(
            ConvergenceCell(
                epsilon=eps,
                trials=len(rows),
                exceedances=exceed,
                proportion=exceed / len(rows),
                wilson_low=low,
                wilson_high=high,
                gap_median=float(np.median(finite)) if finite.size else float("nan"),
                gap_q90=float(np.quantile(finite, 0.9)) if finite.size else float("nan"),
                blowups=blowups,
            )
        )
    return cells


def _monotone(cells: List[ConvergenceCell]) -> bool:
    """沿递减的 ε, 后一格的 Wilson 下界不超过前一格的上界。"""
    return all(b.wilson_low <= a.wilson_high for a, b in zip(cells, cells[1:]))


def _record(config: ExperimentConfig, eta: float, results, cells, wall: float, partial: bool) -> RunRecord:
    series: Dict[str, List[float]] = {}
    streams: Dict[str, List[int]] = {}
    for i, eps in enumerate(config.eps_list):
        rows = sorted((r for r in results if r["eps_index"] == i), key=lambda r: r["trial"])
        if rows:
            series[f"gap/eps={eps}"] = [float(r["gap"]) for r in rows]
            streams[f"eps={eps}"] = [int(r["trial"]) for r in rows]
    summary = {
        "eta": eta,
        "coupling": str(config.coupling),
        "partial": partial,
        "cells": [c.model_dump(mode="json", by_alias=True) for c in cells],
        "monotone": _monotone(cells),
    }
    return RunRecord(
        config_hash=config.config_hash,
        kind="sweep",
        artifact_version=ARTIFACT_VERSION,
        seed=config.seed,
        streams=streams,
        series=series,
        summary=summary,
        wall_clock=wall,
    )


def convergence_experiment(
    config: ExperimentConfig,
    workers: int = 1,
    out_dir: Optional[Union[str, Path]] = None,
    burn_in: Optional[float] = None,
) -> Tuple[ConvergenceReport, RunRecord]:
    """
    主实验: 对每个 ε 与试验比较耦合慢分量与平均解, 给出 P̂(sup_t|u_ε − ū|_E > η) 及 Wilson 区间。

    发散的试验记为超出 (保守处理) 并单独计数。中途异常时若给出 out_dir, 先写出已完成部分再重新抛出。

    Args:
        config: ExperimentConfig。
        workers: 进程数, 1 时在当前进程内执行。
        out_dir: 运行记录目录。
        burn_in: HMM 预言机的预热长度, 缺省时见 resolve_burn_in。

    Returns:
        (ConvergenceReport, RunRecord)。
    """
    started = time.perf_counter()
    burn = resolve_burn_in(config, burn_in)
    eta = pilot_eta(config, burn)
    config_json = config.model_dump_json(by_alias=True)
    jobs: List[Job] = [
        (config_json, i, eps, trial, burn)
        for i, eps in enumerate(config.eps_list)
        for trial in range(config.trials)
    ]
    logger.info("收敛实验: %d 个 ε × %d 次试验, η=%.4g, 进程数 %d", len(config.eps_list), config.trials, eta, workers)
    results: List[Dict[str, object]] = []
    try:
        if workers <= 1:
            for job in jobs:
                results.append(_run_trial(job))
        else:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                for result in pool.map(_run_trial, jobs, chunksize=1):
                    results.append(result)
    except Exception:
        if out_dir is not None and results:
            cells = _cells(config, results, eta)
            write_run_record(_record(config, eta, results, cells, 0.0, partial=True), out_dir)
            logger.error("收敛实验中断, 已写出 %d 个完成的单元", len(results))
        raise
    cells = _cells(config, results, eta)
    report = ConvergenceReport(eta=eta, coupling=str(config.coupling), cells=cells, monotone=_monotone(cells))
    record = _record(config, eta, results, cells, time.perf_counter() - started, partial=False)
    if out_dir is not None:
        write_run_record(record, out_dir)
    return report, record
