from __future__ import annotations

import logging
import math
import time
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .averaging import build_drift_oracle, estimate_bbar_ergodic, estimate_bbar_measure
from .config import ExperimentConfig, Settings
from .constants import ARTIFACT_VERSION, DriftMethod, DriftOracleKind
from .experiments.convergence import convergence_experiment
from .experiments.invariants import run_invariant_suite
from .integrators import DriftOracle, SlowFastConfig, TrajectoryRecord, integrate_averaged, integrate_coupled
from .measures import (
    ap_measure_diagnostic,
    estimate_evolution_measure,
    mixing_decay_estimate,
    pilot_burn_in,
    tightness_proxy,
)
from .models import AveragedDriftEstimate, CheckReport, ConvergenceReport, MixingEstimate, RunRecord
from .records import export_measure, export_trajectory, write_run_record
from .signals import uniform_ap_check

logger = logging.getLogger(__name__)


class SlowFastClient:
    """
    慢快平均实验的高级客户端, 是与本包交互的主要入口点。
    """

    def __init__(self, config: ExperimentConfig, settings: Settings):
        """
        初始化 SlowFastClient。

        Args:
            config: 实验配置。
            settings: 运行时设置 (输出目录、进程数、日志级别等)。
        """
        self.config = config
        self.settings = settings
        self._slow_fast_configs: Dict[float, SlowFastConfig] = {}
        self._drift_oracles: Dict[float, DriftOracle] = {}
        self._burn_in: Optional[float] = None
        self._pilot: Optional[MixingEstimate] = None

    def _get_slow_fast_config(self, eps: Optional[float] = None) -> SlowFastConfig:
        """
        按 ε 构造并缓存数值配置。
        """
        key = self.config.eps_list[0] if eps is None else float(eps)
        if key not in self._slow_fast_configs:
            self._slow_fast_configs[key] = SlowFastConfig.from_experiment(self.config, eps=key, settings=self.settings)
        return self._slow_fast_configs[key]

    def _get_burn_in(self) -> float:
        """
        预热长度: 配置给出时直接使用, 否则在 x₀ 处试运行一次混合估计 (5/δ̂) 并缓存。
        """
        if self.config.burn_in is not None:
            return self.config.burn_in
        if self._burn_in is None:
            sf = self._get_slow_fast_config()
            self._burn_in, self._pilot = pilot_burn_in(sf, sf.x0)
        return self._burn_in

    def _oracle_burn_in(self) -> Optional[float]:
        """只有 HMM 预言机需要预热长度。"""
        if DriftOracleKind(self.config.drift_oracle) != DriftOracleKind.HMM:
            return None
        return self._get_burn_in()

    def _get_drift_oracle(self, eps: Optional[float] = None) -> DriftOracle:
        key = self.config.eps_list[0] if eps is None else float(eps)
        if key not in self._drift_oracles:
            self._drift_oracles[key] = build_drift_oracle(
                self._get_slow_fast_config(key), self.config.drift_oracle, self.config.hmm,
                burn_in=self._oracle_burn_in(),
            )
        return self._drift_oracles[key]

    def output_dir(self, kind: str) -> Path:
        base = Path(self.config.output_dir) if self.config.output_dir else Path(self.settings.output_dir)
        return base / f"{kind}-{self.config.config_hash[:12]}"

    def _record(self, kind: str, started: float, **payload) -> RunRecord:
        return RunRecord(
            config_hash=self.config.config_hash,
            kind=kind,
            artifact_version=ARTIFACT_VERSION,
            seed=self.config.seed,
            wall_clock=time.perf_counter() - started,
            **payload,
        )

    def _persist(self, record: RunRecord, persist: bool) -> RunRecord:
        if persist:
            write_run_record(record, self.output_dir(record.kind))
        return record

    def simulate(
        self, eps: Optional[float] = None, members: int = 1, persist: bool = True
    ) -> Tuple[TrajectoryRecord, RunRecord]:
        """
        运行一次耦合系统。

        Args:
            eps: ε, 默认 epsList 的第一个值。
            members: 成员数。
            persist: 是否写出运行记录与轨道。
        """
        started = time.perf_counter()
        sf = self._get_slow_fast_config(eps)
        trajectory = integrate_coupled(sf, streams=range(members), store_fast=self.config.store_fast)
        sups = trajectory.slow_sup
        record = self._record(
            "simulate",
            started,
            streams={"members": list(trajectory.streams)},
            series={"time": trajectory.times.tolist(), "slow_sup_mean": sups.mean(axis=1).tolist()},
            summary={"eps": sf.eps, "nSub": sf.n_sub, "maxSup": float(sups.max())},
        )
        if persist:
            export_trajectory(trajectory, self.output_dir("simulate"))
        return trajectory, self._persist(record, persist)

    def average(self, members: int = 1, persist: bool = True) -> Tuple[TrajectoryRecord, RunRecord]:
        """平均方程的一次运行, 与 simulate 使用相同的 Q₁ 流。"""
        started = time.perf_counter()
        sf = self._get_slow_fast_config()
        trajectory = integrate_averaged(sf.x0, sf.horizon, self._get_drift_oracle(), sf, streams=range(members))
        sups = trajectory.slow_sup
        record = self._record(
            "average",
            started,
            streams={"members": list(trajectory.streams)},
            series={"time": trajectory.times.tolist(), "slow_sup_mean": sups.mean(axis=1).tolist()},
            summary={"driftOracle": str(self.config.drift_oracle), "maxSup": float(sups.max())},
        )
        if persist:
            export_trajectory(trajectory, self.output_dir("average"))
        return trajectory, self._persist(record, persist)

    def estimate_bbar(
        self,
        x: Optional[Sequence[float]] = None,
        T: float = 100.0,
        n_paths: int = 64,
        method: DriftMethod = DriftMethod.ERGODIC,
        times: Optional[Sequence[float]] = None,
        persist: bool = False,
    ) -> AveragedDriftEstimate:
        """
        估计 B̄(x)。

        Args:
            x: 慢场系数, 默认 x₀。
            T: 遍历平均长度。
            n_paths: 路径数 (测度平均时为集合大小)。
            method: ergodic-trajectory / measure-average / closed-form。
            times: 测度平均的时间网格, 默认 [0, T) 上 16 个点。
            persist: 是否写出运行记录。
        """
        started = time.perf_counter()
        sf = self._get_slow_fast_config()
        x_arr = sf.x0 if x is None else np.asarray(x, dtype=float)
        method = DriftMethod(method)
        if method == DriftMethod.ERGODIC:
            estimate = estimate_bbar_ergodic(x_arr, T, n_paths, sf, burn_in=self._get_burn_in())
        elif method == DriftMethod.MEASURE:
            grid = times if times is not None else np.linspace(0.0, T, 16, endpoint=False)
            estimate = estimate_bbar_measure(x_arr, grid, n_paths, sf, T_burn=self._get_burn_in())
        else:
            estimate = build_drift_oracle(sf, DriftOracleKind.CLOSED_FORM).estimate(x_arr)
        record = self._record(
            "bbar",
            started,
            series={"estimate": estimate.estimate, "standard_errors": estimate.standard_errors},
            summary=estimate.model_dump(mode="json", by_alias=True, exclude={"estimate", "standard_errors"}),
        )
        self._persist(record, persist)
        return estimate

    def measure(
        self,
        t: float = 0.0,
        N: Optional[int] = None,
        lags: Optional[Sequence[float]] = None,
        times: Sequence[float] = (0.0, 1.3, 2.6),
        max_shifts: int = 3,
        persist: bool = True,
    ) -> RunRecord:
        """
        在 x₀ 处构造 μ̂ᵗ 并运行混合、紧性与几乎周期性诊断。
        """
        started = time.perf_counter()
        sf = self._get_slow_fast_config()
        n = N or self.config.ensemble_size
        burn = self._get_burn_in()
        mu = estimate_evolution_measure(sf.x0, t, burn, n, sf)
        y = np.zeros(sf.fast_model.modes)
        y[0] = 1.0
        lag_grid = lags if lags is not None else np.linspace(0.0, 0.6 * burn, 8)
        mixing = mixing_decay_estimate(sf.x0, y, lag_grid, n, sf, s=t, T_burn=burn)
        tightness = tightness_proxy(mu, 0.25)
        shifts = self._candidate_shifts(max_shifts)
        shift_report = ap_measure_diagnostic(sf.x0, times, shifts, n, sf, T_burn=burn) if shifts else None
        summary = {
            "t": t,
            "burnIn": burn,
            "pilot": self._pilot.model_dump(mode="json", by_alias=True) if self._pilot else None,
            "members": n,
            "moment2": mu.moment(2.0),
            "moment4": mu.moment(4.0),
            "mixing": mixing.model_dump(mode="json", by_alias=True),
            "tightness": tightness.model_dump(mode="json", by_alias=True),
            "shifts": shift_report.model_dump(mode="json", by_alias=True) if shift_report else None,
        }
        record = self._record(
            "measure",
            started,
            streams={"members": mu.streams},
            series={"mean": mu.mean().tolist(), "standard_errors": mu.standard_errors().tolist()},
            summary=summary,
        )
        if persist:
            export_measure(mu, self.output_dir("measure"))
        return self._persist(record, persist)

    def _candidate_shifts(self, limit: int, epsilon: float = 0.05, window: float = 50.0) -> List[float]:
        if limit <= 0:
            return []
        coeffs = self.config.coefficients
        family = [s for s in (coeffs.gamma, coeffs.drift, coeffs.b2.signal, coeffs.g2.signal) if s is not None]
        family = [s for s in family if not s.is_constant]
        if not family:
            return []
        step = min(1e-2, math.pi / (4.0 * max(s.max_frequency for s in family)))
        report = uniform_ap_check(family, epsilon, window, step)
        # 每簇相邻的 τ 只取第一个, 跳过 0 附近的平凡平移
        shifts: List[float] = []
        for tau in report.common_periods:
            if tau <= report.common.zero_neighbourhood + step:
                continue
            if not shifts or tau - shifts[-1] > 1.0:
                shifts.append(tau)
            if len(shifts) == limit:
                break
        return shifts

    def sweep(self, workers: Optional[int] = None, persist: bool = True) -> ConvergenceReport:
        """主收敛实验, 见 convergence_experiment。"""
        n_workers = workers or self.settings.workers
        out = self.output_dir("sweep") if persist else None
        report, _ = convergence_experiment(
            self.config, workers=n_workers, out_dir=out, burn_in=self._oracle_burn_in(),
        )
        return report

    def check(self) -> CheckReport:
        return run_invariant_suite(self.config)
