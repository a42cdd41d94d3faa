from __future__ import annotations

import logging
import math
from typing import Optional

import numpy as np

from ..exceptions import InsufficientSamples, ScheduleError
from ..integrators import SlowFastConfig, integrate_coupled
from ..models import DeviationSeries

logger = logging.getLogger(__name__)


def khasminskii_schedule(eps: float, kappa: float = 1.0, horizon: Optional[float] = None) -> float:
    """
    冻结窗口长度 δ_ε = ε·κ·log(1/ε)。

    Args:
        eps: ε ∈ (0, 1)。
        kappa: κ > 0。
        horizon: 给定时要求 δ_ε < horizon。

    Returns:
        δ_ε。
    """
    if not (0.0 < eps < 1.0):
        raise ScheduleError(f"ε 必须在 (0, 1) 内 (log(1/ε) > 0), 实际 {eps}")
    if kappa <= 0:
        raise ScheduleError(f"κ 必须为正, 实际 {kappa}")
    delta = eps * kappa * math.log(1.0 / eps)
    if horizon is not None and delta >= horizon:
        raise ScheduleError(f"δ_ε = {delta:.4g} 不小于时间区间 {horizon}")
    return delta


def zeta(eps: float, kappa: float = 1.0) -> float:
    """ζ_ε = δ_ε/ε = κ·log(1/ε)。"""
    return khasminskii_schedule(eps, kappa) / eps


def auxiliary_deviation(
    config: SlowFastConfig,
    eps: float,
    n: Optional[float] = None,
    kappa: float = 1.0,
    N: int = 64,
    window: Optional[float] = None,
    stream_offset: int = 0,
) -> DeviationSeries:
    """
    辅助快过程偏差 sup_t Ê|v̂ − v|²_E。

    (u, v) 与 v̂ 在截断系数下共享噪声联合模拟; v̂ 在每个长度 δ_ε 的窗口起点重置为 v,
    窗口内慢变量冻结在窗口起点的值。

    Args:
        config: SlowFastConfig (ε 由参数覆盖)。
        eps: ε。
        n: 截断半径, 默认 config.default_truncation_radius()。
        kappa: κ。
        N: 成员数。
        window: 直接指定窗口长度, 默认 khasminskii_schedule(ε, κ)。
        stream_offset: 流编号起点。
    """
    radius = n if n is not None else config.default_truncation_radius()
    delta = window if window is not None else khasminskii_schedule(eps, kappa, config.horizon)
    run_config = config.replace(eps=eps, coeffs=config.coeffs.truncated(radius))
    record = integrate_coupled(
        run_config, streams=range(stream_offset, stream_offset + N), freeze_window=delta,
    )
    dev = record.extras.get("aux_deviation")
    if dev is None or dev.size == 0:
        raise InsufficientSamples("耦合运行没有产生辅助偏差序列")
    mean_sq = dev.mean(axis=1)
    se = dev.std(axis=1, ddof=1) / math.sqrt(N) if N > 1 else np.zeros_like(mean_sq)
    logger.info("辅助偏差: ε=%s, δ=%.4g, sup Ê|v̂−v|² = %.4g", eps, delta, float(mean_sq.max()))
    return DeviationSeries(
        epsilon=eps,
        window=delta,
        times=record.times[1:].tolist(),
        mean_square=mean_sq.tolist(),
        standard_errors=se.tolist(),
        sup=float(mean_sq.max()),
    )
