"""
几乎周期信号 (三角多项式): 求值、均值、平移集扫描与一致几乎周期检查。
"""

import math
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator, model_validator
from scipy.integrate import trapezoid

from .constants import PERIOD_TOL
from .exceptions import EmptyFamily, InvalidParameter, NonFiniteSample


class APSignal(BaseModel):
    """
    f(t) = a₀ + Σ a_j cos(ω_j t + φ_j)。

    terms 中每一项是 [a, ω, φ] 三元组; period 仅在所有频率可公度时声明。
    """

    offset: float = 0.0
    terms: List[Tuple[float, float, float]] = Field(default_factory=list)
    period: Optional[float] = None

    model_config = {
        "populate_by_name": True,
        "frozen": True,
    }

    @field_validator("terms")
    @classmethod
    def _positive_frequencies(cls, terms):
        for a, omega, phi in terms:
            if not (math.isfinite(a) and math.isfinite(omega) and math.isfinite(phi)):
                raise ValueError("信号参数必须为有限值")
            if omega <= 0:
                raise ValueError(f"角频率必须为正, 实际 {omega}")
        return terms

    @model_validator(mode="after")
    def _declared_period_consistent(self):
        if self.period is None:
            return self
        if self.period <= 0:
            raise ValueError("声明的周期必须为正")
        for _, omega, _ in self.terms:
            cycles = omega * self.period / (2.0 * math.pi)
            if abs(cycles - round(cycles)) > 1e-9 * max(1.0, cycles):
                raise ValueError(
                    f"声明的周期 {self.period} 与频率 {omega} 不可公度"
                )
        return self

    # 构造
    @classmethod
    def constant(cls, value: float) -> "APSignal":
        return cls(offset=value, terms=[], period=None)

    @classmethod
    def cosine(cls, amplitude: float, omega: float, offset: float = 0.0, phase: float = 0.0) -> "APSignal":
        return cls(offset=offset, terms=[(amplitude, omega, phase)], period=2.0 * math.pi / omega)

    @classmethod
    def sine(cls, amplitude: float, omega: float, offset: float = 0.0) -> "APSignal":
        return cls(offset=offset, terms=[(amplitude, omega, -math.pi / 2.0)], period=2.0 * math.pi / omega)

    def plus(self, other: "APSignal") -> "APSignal":
        period = self.period if self.period == other.period else None
        if not self.terms:
            period = other.period
        elif not other.terms:
            period = self.period
        return APSignal(offset=self.offset + other.offset, terms=[*self.terms, *other.terms], period=period)

    def scaled(self, factor: float) -> "APSignal":
        return APSignal(
            offset=factor * self.offset,
            terms=[(factor * a, w, p) for a, w, p in self.terms],
            period=self.period,
        )

    # 属性
    @property
    def is_constant(self) -> bool:
        return all(a == 0.0 for a, _, _ in self.terms)

    @property
    def is_periodic(self) -> bool:
        return self.is_constant or self.period is not None

    @property
    def amplitude_sum(self) -> float:
        return float(sum(abs(a) for a, _, _ in self.terms))

    @property
    def bound(self) -> float:
        """sup |f| 的上界 |a₀| + Σ|a_j|。"""
        return abs(self.offset) + self.amplitude_sum

    @property
    def lower_bound(self) -> float:
        return self.offset - self.amplitude_sum

    @property
    def max_frequency(self) -> float:
        return max((w for _, w, _ in self.terms), default=0.0)

    def _arrays(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        if not self.terms:
            empty = np.zeros(0)
            return empty, empty, empty
        arr = np.asarray(self.terms, dtype=float)
        return arr[:, 0], arr[:, 1], arr[:, 2]

    def __call__(self, t):
        return evaluate(self, t)

    def antiderivative(self, t):
        """F(t) = a₀t + Σ (a_j/ω_j) sin(ω_j t + φ_j)。"""
        t = np.asarray(t, dtype=float)
        a, w, p = self._arrays()
        out = self.offset * t
        if a.size:
            out = out + np.sum((a / w) * np.sin(np.multiply.outer(t, w) + p), axis=-1)
        return out

    def integral(self, s, t):
        """∫_s^t f(r) dr 的闭式值。"""
        return self.antiderivative(t) - self.antiderivative(s)

    def shift_bound(self, tau) -> np.ndarray:
        """
        sup_t |f(t+τ) − f(t)| ≤ Σ 2|a_j| |sin(ω_j τ/2)|, 对所有 t 成立。
        """
        tau = np.asarray(tau, dtype=float)
        a, w, _ = self._arrays()
        if a.size == 0:
            return np.zeros_like(tau)
        return np.sum(2.0 * np.abs(a) * np.abs(np.sin(np.multiply.outer(tau, w) / 2.0)), axis=-1)


SignalLike = Union[APSignal, Callable[[np.ndarray], np.ndarray]]


def evaluate(signal: APSignal, t):
    """a₀ + Σ a_j cos(ω_j t + φ_j), 对数组逐点求值。"""
    t_arr = np.asarray(t, dtype=float)
    a, w, p = signal._arrays()
    out = np.full(t_arr.shape, signal.offset, dtype=float)
    if a.size:
        out = out + np.sum(a * np.cos(np.multiply.outer(t_arr, w) + p), axis=-1)
    if np.ndim(t) == 0:
        return float(out)
    return out


class MeanValueEstimate(BaseModel):
    value: Union[float, List[float]]
    error: float
    horizon: float = Field(..., alias="horizon")
    start: float = Field(0.0, alias="start")

    model_config = {
        "populate_by_name": True,
    }


def _cesaro(source, T: float, t0: float, n_samples: int):
    if isinstance(source, APSignal):
        return float(source.integral(t0, t0 + T)) / T
    t = np.linspace(t0, t0 + T, n_samples)
    values = np.asarray(source(t), dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteSample("均值计算遇到非有限采样值")
    return float(trapezoid(values, t)) / T


def mean_value(
    source: Union[SignalLike, Tuple[np.ndarray, np.ndarray]],
    T: Optional[float] = None,
    t0: float = 0.0,
    n_samples: int = 4097,
) -> MeanValueEstimate:
    """
    Cesàro 均值 (1/T)∫_{t₀}^{t₀+T} f(s) ds。

    Args:
        source: APSignal (闭式积分)、可调用对象 (梯形求积) 或采样路径 (times, values),
            values 可以是向量值, 形状 (m, ...)。
        T: 平均区间长度; 采样路径时默认取整个时间跨度。
        t0: 起点, 采样路径时忽略。
        n_samples: 可调用对象的采样点数。

    Returns:
        均值与误差估计 |M(T) − M(T/2)|。
    """
    if isinstance(source, tuple):
        times, values = source
        return _path_mean_value(np.asarray(times, dtype=float), np.asarray(values, dtype=float))
    if T is None or T <= 0:
        raise InvalidParameter(f"平均区间长度必须为正, 实际 {T}")
    full = _cesaro(source, T, t0, n_samples)
    half = _cesaro(source, T / 2.0, t0, n_samples)
    return MeanValueEstimate(value=full, error=abs(full - half), horizon=T, start=t0)


def _path_mean_value(times: np.ndarray, values: np.ndarray) -> MeanValueEstimate:
    if not np.all(np.isfinite(values)):
        raise NonFiniteSample("均值计算遇到非有限采样值")
    if times.size == 1:
        # 单个时间点: 自治情形, 族与 t 无关
        value = values[0]
        return MeanValueEstimate(
            value=value.tolist() if np.ndim(value) else float(value),
            error=0.0,
            horizon=0.0,
            start=float(times[0]),
        )
    span = float(times[-1] - times[0])
    full = trapezoid(values, times, axis=0) / span
    mid = np.searchsorted(times, times[0] + span / 2.0, side="right")
    if mid >= 2:
        half = trapezoid(values[:mid], times[:mid], axis=0) / float(times[mid - 1] - times[0])
        error = float(np.max(np.abs(np.asarray(full) - np.asarray(half))))
    else:
        error = float("nan")
    return MeanValueEstimate(
        value=full.tolist() if np.ndim(full) else float(full),
        error=error,
        horizon=span,
        start=float(times[0]),
    )


class TranslationScan(BaseModel):
    """
    有限窗口上 ε-几乎周期的扫描结果。inclusion_length 是估计值, 不是证明。
    """

    epsilon: float
    window: float
    step: float
    almost_periods: List[float] = Field(default_factory=list, alias="almostPeriods")
    inclusion_length: Optional[float] = Field(None, alias="inclusionLength")
    conclusive: bool = True
    zero_neighbourhood: float = Field(0.0, alias="zeroNeighbourhood")

    model_config = {
        "populate_by_name": True,
    }


def _scan_mask(signal: APSignal, epsilon: float, grid: np.ndarray) -> np.ndarray:
    return signal.shift_bound(grid) < epsilon


def _zero_cluster_end(mask: np.ndarray) -> int:
    """从 τ = 0 开始连续命中的格点个数。"""
    misses = np.flatnonzero(~mask)
    return int(misses[0]) if misses.size else int(mask.size)


def _summarise(epsilon: float, window: float, step: float, grid: np.ndarray, mask: np.ndarray, extra: Sequence[float]) -> TranslationScan:
    taus = np.union1d(grid[mask], np.asarray(extra, dtype=float))
    zero_end = _zero_cluster_end(mask)
    every = zero_end == mask.size
    beyond = taus[taus > (zero_end - 1) * step + step / 2.0] if not every else taus
    conclusive = bool(every or beyond.size > 0)
    if taus.size >= 2 and conclusive:
        inclusion = float(np.max(np.diff(taus)))
    else:
        inclusion = None
    return TranslationScan(
        epsilon=epsilon,
        window=window,
        step=step,
        almost_periods=taus.tolist(),
        inclusion_length=inclusion,
        conclusive=conclusive,
        zero_neighbourhood=float(max(zero_end - 1, 0) * step),
    )


def _scan_grid(window: float, step: float) -> np.ndarray:
    n = int(math.floor(window / step + 1e-9))
    return np.arange(n + 1, dtype=float) * step


def _period_multiples(signal: APSignal, window: float) -> List[float]:
    if signal.period is None or signal.is_constant:
        return []
    count = int(math.floor(window / signal.period + 1e-12))
    return [k * signal.period for k in range(1, count + 1)]


def translation_scan(signal: APSignal, epsilon: float, window: float, step: float) -> TranslationScan:
    """
    在 [0, W] 的网格上搜索 ε-几乎周期。

    每个报告的 τ 满足 Σ 2|a_j||sin(ω_jτ/2)| < ε, 从而对任意采样网格都有
    sup_t |f(t+τ) − f(t)| < ε。声明了周期的信号额外加入 kτ ≤ W。
    l̂_ε 是相邻 τ 的最大间隔; 只找到 0 附近的 τ 时报告为不确定。

    Args:
        signal: 待扫描的信号。
        epsilon: 容差 (信号单位)。
        window: 扫描窗口 W。
        step: 扫描步长, 需分辨最高频率。

    Returns:
        TranslationScan
    """
    if epsilon <= 0 or window <= 0 or step <= 0:
        raise InvalidParameter("epsilon, window 与 step 都必须为正")
    if signal.max_frequency > 0 and step > math.pi / (4.0 * signal.max_frequency):
        raise InvalidParameter(f"步长 {step} 无法分辨最高频率 {signal.max_frequency}")
    grid = _scan_grid(window, step)
    mask = _scan_mask(signal, epsilon, grid)
    return _summarise(epsilon, window, step, grid, mask, _period_multiples(signal, window))


def translation_discrepancy(signal: APSignal, tau: float, t_grid: np.ndarray) -> float:
    """在给定采样网格上计算 max_t |f(t+τ) − f(t)|。"""
    t_grid = np.asarray(t_grid, dtype=float)
    return float(np.max(np.abs(evaluate(signal, t_grid + tau) - evaluate(signal, t_grid))))


class UniformAPReport(BaseModel):
    epsilon: float
    family_size: int = Field(..., alias="familySize")
    common: TranslationScan
    per_signal_counts: List[int] = Field(default_factory=list, alias="perSignalCounts")

    model_config = {
        "populate_by_name": True,
    }

    @property
    def common_periods(self) -> List[float]:
        return self.common.almost_periods

    @property
    def conclusive(self) -> bool:
        return self.common.conclusive


def uniform_ap_check(family: Sequence[APSignal], epsilon: float, window: float, step: float) -> UniformAPReport:
    """
    信号族的公共平移集: 各信号扫描结果在同一网格上取交集。

    Args:
        family: 有限信号族。
        epsilon: 容差。
        window: 扫描窗口。
        step: 扫描步长。

    Returns:
        UniformAPReport, 其中 common 给出公共 τ 与公共包含长度估计。
    """
    if not family:
        raise EmptyFamily("信号族为空")
    fastest = max(s.max_frequency for s in family)
    if fastest > 0 and step > math.pi / (4.0 * fastest):
        raise InvalidParameter(f"步长 {step} 无法分辨最高频率 {fastest}")
    grid = _scan_grid(window, step)
    masks = [_scan_mask(s, epsilon, grid) for s in family]
    common_mask = np.logical_and.reduce(masks)

    periods = {s.period for s in family if not s.is_constant}
    extra: List[float] = []
    if len(periods) == 1 and None not in periods:
        extra = _period_multiples(next(s for s in family if not s.is_constant), window)
    elif not periods:
        extra = []
    return UniformAPReport(
        epsilon=epsilon,
        family_size=len(family),
        common=_summarise(epsilon, window, step, grid, common_mask, extra),
        per_signal_counts=[int(m.sum()) for m in masks],
    )
