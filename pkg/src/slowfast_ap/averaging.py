"""
平均漂移 B̄(x) = lim (1/T)∫ B₁(x, v^x(t)) dt 的估计、系数截断与 B̄ 的正则性探测。

漂移预言机 (ClosedFormLinearDrift / NemytskiiDrift / HMMDrift) 供平均方程在每个宏步调用。
"""

from __future__ import annotations

import logging
import math
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import curve_fit

from .coefficients import CoefficientSet
from .constants import (
    BURN_IN_FACTOR,
    HMM_T_MICRO_FACTOR,
    DriftMethod,
    DriftOracleKind,
    NoiseChannel,
)
from .exceptions import DriftOracleError, InsufficientSamples, InvalidParameter
from .integrators import SlowFastConfig, integrate_fast_frozen
from .measures import default_burn_in, estimate_evolution_measure
from .models import AveragedDriftEstimate, DeviationProfile, HMMSpec, LipschitzReport
from .signals import mean_value
from .spectral import FieldState, SpectralModel

logger = logging.getLogger(__name__)


def _coeffs_of(x: Union[FieldState, np.ndarray, Sequence[float]]) -> np.ndarray:
    return x.coeffs if isinstance(x, FieldState) else np.asarray(x, dtype=float)


def _b1_projected(config: SlowFastConfig, x_nodal: np.ndarray, v: np.ndarray) -> np.ndarray:
    slow = config.slow_model
    v_nodal = config.fast_model.to_nodal(v)
    values = config.coeffs.b1(0.0, slow.nodes, x_nodal, v_nodal)
    return slow.project(np.broadcast_to(values, v_nodal.shape))


class _TimeAverager:
    """观察者: 左点累加 P[B₁(x, v(r))]·h, 并在给定步数处记录部分和。"""

    def __init__(self, config: SlowFastConfig, x_nodal: np.ndarray, h: float, checkpoints: Sequence[int]):
        self.config = config
        self.x_nodal = x_nodal
        self.h = h
        self.checkpoints = sorted(set(int(c) for c in checkpoints))
        self.total: Optional[np.ndarray] = None
        self.count = 0
        self.snapshots: Dict[int, np.ndarray] = {}

    def __call__(self, r: float, v: np.ndarray) -> None:
        term = _b1_projected(self.config, self.x_nodal, v) * self.h
        self.total = term if self.total is None else self.total + term
        self.count += 1
        if self.count in self.checkpoints:
            self.snapshots[self.count] = self.total.copy()


def _ergodic_paths(
    x_batch: np.ndarray,
    T: float,
    config: SlowFastConfig,
    streams: Sequence[int],
    s0: float,
    burn_in: float,
    dt: Optional[float],
    channel: NoiseChannel,
    horizons: Sequence[float] = (),
) -> Tuple[np.ndarray, Dict[float, np.ndarray]]:
    """
    逐路径时间平均 (1/T)∫_{s₀}^{s₀+T} P[B₁(x, v)]dr, 形状 (N, K₁); 同时返回各前缀 horizons 的平均。

    噪声网格以 s₀ 为原点, 预热段与平均段在 s₀ 处首尾相接。
    """
    h = config.dt_frozen if dt is None else float(dt)
    n_steps = int(round(T / h))
    if n_steps < 2:
        raise InsufficientSamples(f"平均区间 T={T} 不足两个快步 (h={h})")
    h = T / n_steps
    y0 = np.zeros(config.fast_model.modes)
    if burn_in > 0:
        y0 = integrate_fast_frozen(
            x_batch, s0 - burn_in, s0, y0, config, streams=streams, dt=h, channel=channel, time_offset=s0,
        ).final_fast
    marks = {float(H): int(round(H / h)) for H in horizons}
    averager = _TimeAverager(config, config.slow_model.to_nodal(x_batch), h, [n_steps, *marks.values()])
    integrate_fast_frozen(
        x_batch, s0, s0 + T, y0, config, streams=streams, dt=h, channel=channel, observer=averager,
        time_offset=s0,
    )
    partial = {H: averager.snapshots[m] / (m * h) for H, m in marks.items() if m in averager.snapshots}
    return averager.total / T, partial


def estimate_bbar_ergodic(
    x: Union[FieldState, np.ndarray],
    T: float,
    N_paths: int,
    config: SlowFastConfig,
    s0: float = 0.0,
    burn_in: Optional[float] = None,
    dt: Optional[float] = None,
    stream_offset: int = 0,
    channel: NoiseChannel = NoiseChannel.FAST,
) -> AveragedDriftEstimate:
    """
    遍历时间平均估计 B̄(x)。

    Args:
        x: 冻结慢场系数。
        T: 平均区间长度。
        N_paths: 路径数。
        config: SlowFastConfig。
        s0: 平均起点 (之前先回拉 burn_in)。
        burn_in: 预热长度, 默认 default_burn_in。
        dt: 快步长, 默认 config.dt_frozen。
        stream_offset: 流编号起点。
        channel: 噪声通道。

    Returns:
        AveragedDriftEstimate; error 为集合平均在 T/2 与 T 两个区间长度上的差 |B̂_{T/2} − B̂_T|_E,
        即截断区间引起的偏差的估计, 统计误差另见 standard_errors。
    """
    if T <= 0:
        raise InvalidParameter(f"平均区间长度必须为正, 实际 {T}")
    if N_paths < 1:
        raise InsufficientSamples("至少需要一条路径")
    x_arr = _coeffs_of(x)
    streams = list(range(stream_offset, stream_offset + N_paths))
    burn = default_burn_in(config) if burn_in is None else float(burn_in)
    batch = np.broadcast_to(x_arr, (N_paths, x_arr.size))
    full, partial = _ergodic_paths(batch, T, config, streams, s0, burn, dt, channel, horizons=[T / 2.0])
    half = partial[T / 2.0]
    slow = config.slow_model
    se = full.std(axis=0, ddof=1) / math.sqrt(N_paths) if N_paths > 1 else np.zeros(slow.modes)
    estimate = full.mean(axis=0)
    error = float(slow.sup_norm(half.mean(axis=0) - estimate))
    logger.debug("遍历估计 B̄: T=%s, N=%d, 误差 %.3g", T, N_paths, error)
    return AveragedDriftEstimate(
        x=x_arr.tolist(),
        estimate=estimate.tolist(),
        horizon=T,
        method=DriftMethod.ERGODIC,
        error=error,
        standard_errors=se.tolist(),
        n_paths=N_paths,
    )


def estimate_bbar_measure(
    x: Union[FieldState, np.ndarray],
    times: Sequence[float],
    N: int,
    config: SlowFastConfig,
    T_burn: Optional[float] = None,
) -> AveragedDriftEstimate:
    """
    测度平均: 在时间网格上构造 μ̂ᵗˣ, 计算 ∫B₁(x,·)dμ̂ᵗˣ, 再对得到的向量值信号取均值。

    各时间点使用互不重叠的流编号, 因而彼此独立。
    """
    times = np.asarray(sorted(float(t) for t in times))
    if times.size == 0:
        raise InsufficientSamples("时间网格为空")
    x_arr = _coeffs_of(x)
    burn = default_burn_in(config) if T_burn is None else T_burn
    x_nodal = config.slow_model.to_nodal(x_arr)
    values, ses = [], []
    for i, t in enumerate(times):
        mu = estimate_evolution_measure(x_arr, float(t), burn, N, config, stream_offset=i * N)
        inner = _b1_projected(config, x_nodal, mu.members)
        values.append(inner.mean(axis=0))
        ses.append(inner.std(axis=0, ddof=1) / math.sqrt(N))
    mv = mean_value((times, np.stack(values)))
    se = np.sqrt(np.mean(np.square(ses), axis=0) / times.size)
    error = mv.error if math.isfinite(mv.error) else 0.0
    return AveragedDriftEstimate(
        x=x_arr.tolist(),
        estimate=np.atleast_1d(np.asarray(mv.value, dtype=float)).tolist(),
        horizon=mv.horizon,
        method=DriftMethod.MEASURE,
        error=float(error),
        standard_errors=se.tolist(),
        n_paths=N,
    )


class TruncatedCoefficients:
    """
    在半径 n 处截断慢变量的系数: b_{1,n}, b_{2,n}, g_{1,n} 以 σ₁ 的 clip 代替径向截断。
    """

    def __init__(self, original: CoefficientSet, n: float):
        self.radius = float(n)
        self.original = original
        self.coefficients = original.truncated(n)

    @property
    def b1(self):
        return self.coefficients.b1

    @property
    def b2(self):
        return self.coefficients.b2

    @property
    def g1(self):
        return self.coefficients.g1

    def lipschitz_scan(
        self,
        role: str = "b1",
        sigma_max: float = 10.0,
        n_samples: int = 2001,
        fast: float = 0.0,
        t: float = 0.0,
        truncated: bool = True,
    ) -> float:
        """关于 σ₁ 的数值 Lipschitz 常数 max |f(σ)−f(σ')|/|σ−σ'| (相邻采样点)。"""
        source = self.coefficients if truncated else self.original
        term = getattr(source, role)
        sigma = np.linspace(-sigma_max, sigma_max, n_samples)
        xi = np.zeros_like(sigma)
        values = np.asarray(term(t, xi, sigma, np.full_like(sigma, fast)), dtype=float)
        values = np.broadcast_to(values, sigma.shape)
        return float(np.max(np.abs(np.diff(values)) / np.diff(sigma)))

    def __repr__(self) -> str:
        return f"TruncatedCoefficients(radius={self.radius})"


def truncate_coefficients(coeffs: CoefficientSet, n: float) -> TruncatedCoefficients:
    if n <= 0:
        raise InvalidParameter(f"截断半径必须为正, 实际 {n}")
    return TruncatedCoefficients(coeffs, n)


def bbar_regularity_probe(
    pairs: Sequence[Tuple[AveragedDriftEstimate, AveragedDriftEstimate]],
    model: SpectralModel,
    radius: Optional[float] = None,
) -> LipschitzReport:
    """
    B̄ 的局部 Lipschitz 商 |B̄(x₁)−B̄(x₂)|_E/|x₁−x₂|_E 与单侧配对 ⟨B̄(x+h)−B̄(x), δ_h⟩。

    δ_h 取 |h| 达到最大值的节点处带符号的 Dirac; 配对包络常数 c 使
    ⟨B̄(x+h)−B̄(x), δ_h⟩ ≤ c(1 + |h|_E + |x|_E)。差值不超过两估计误差之和时商标记为不可信。
    """
    quotients: List[Optional[float]] = []
    pairing_values: List[Optional[float]] = []
    inconclusive: List[bool] = []
    excluded = 0
    envelope = None
    for first, second in pairs:
        x1, x2 = np.asarray(first.x), np.asarray(second.x)
        b1, b2 = np.asarray(first.estimate), np.asarray(second.estimate)
        h_nodal = model.to_nodal(x2 - x1)
        dx = float(np.max(np.abs(h_nodal)))
        if dx == 0.0:
            excluded += 1
            quotients.append(None)
            pairing_values.append(None)
            inconclusive.append(True)
            continue
        diff_nodal = model.to_nodal(b2 - b1)
        db = float(np.max(np.abs(diff_nodal)))
        quotients.append(db / dx)
        inconclusive.append(bool(db <= first.error + second.error))
        node = int(np.argmax(np.abs(h_nodal)))
        pairing = float(diff_nodal[node] * np.sign(h_nodal[node]))
        pairing_values.append(pairing)
        bound = pairing / (1.0 + dx + float(model.sup_norm(x1)))
        envelope = bound if envelope is None else max(envelope, bound)
    conclusive = [q for q, bad in zip(quotients, inconclusive) if q is not None and not bad]
    if excluded:
        logger.info("已排除 %d 个退化点对 (x₁ = x₂)", excluded)
    return LipschitzReport(
        radius=radius,
        quotients=quotients,
        pairings=pairing_values,
        inconclusive=inconclusive,
        excluded=excluded,
        max_quotient=max(conclusive) if conclusive else None,
        envelope_constant=envelope,
    )


def _reciprocal_floor(T, c, floor):
    return c / T + floor


def ergodic_deviation_profile(
    x: Union[FieldState, np.ndarray],
    horizons: Sequence[float],
    N: int,
    config: SlowFastConfig,
    reference: Union[np.ndarray, Sequence[float]],
    s0: float = 0.0,
    burn_in: Optional[float] = None,
    dt: Optional[float] = None,
) -> DeviationProfile:
    """
    Ê|(1/T)∫B₁ − B̄(x)|²_E 关于 T 的曲线, 以 c/T + floor 拟合。

    各 T 是同一组路径的嵌套前缀。

    Args:
        x: 冻结慢场。
        horizons: 平均区间长度 (至少 3 个)。
        N: 路径数。
        config: SlowFastConfig。
        reference: 参照 B̄(x) 的系数。
    """
    horizons = sorted(float(H) for H in horizons)
    if len(horizons) < 3:
        raise InsufficientSamples("偏差曲线至少需要 3 个区间长度")
    x_arr = _coeffs_of(x)
    ref = np.asarray(reference, dtype=float)
    burn = default_burn_in(config) if burn_in is None else float(burn_in)
    batch = np.broadcast_to(x_arr, (N, x_arr.size))
    streams = list(range(N))
    full, partial = _ergodic_paths(
        batch, horizons[-1], config, streams, s0, burn, dt, NoiseChannel.FAST, horizons=horizons[:-1],
    )
    partial[horizons[-1]] = full
    slow = config.slow_model
    deviations = [float(np.mean(slow.sup_norm(partial[H] - ref) ** 2)) for H in horizons]
    T_arr, dev = np.asarray(horizons), np.asarray(deviations)
    p0 = (max(dev[0] * T_arr[0], 1e-12), max(float(dev.min()) * 0.1, 0.0))
    params, _ = curve_fit(_reciprocal_floor, T_arr, dev, p0=p0, bounds=([0.0, 0.0], [np.inf, np.inf]))
    fitted = _reciprocal_floor(T_arr, *params)
    ss_res = float(np.sum((dev - fitted) ** 2))
    ss_tot = float(np.sum((dev - dev.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 0.0
    return DeviationProfile(
        horizons=horizons,
        deviations=deviations,
        constant=float(params[0]),
        floor=float(params[1]),
        r_squared=r2,
    )


# ---------------------------------------------------------------------------
# 漂移预言机
# ---------------------------------------------------------------------------


class ClosedFormLinearDrift:
    """
    线性验证配置的闭式 B̄:
    b₁ = pσ₁ + qσ₂ + r, b₂ = −dσ₂ + c(t)σ₁, γ ≡ γ₀, l ≡ 0 时
    B̄(x)_k = p·x_k + q·P₁[c₀/(γ₀α_k + α + d)·P₂x] + r·⟨1, e_k⟩, c₀ 为 c 的均值。
    """

    kind = DriftOracleKind.CLOSED_FORM

    def __init__(self, config: SlowFastConfig):
        coeffs = config.coeffs
        if coeffs.b1.name != "linear" or coeffs.b2.name != "linear":
            raise DriftOracleError("闭式漂移只适用于线性 b₁ 与线性 b₂")
        gamma0 = config.fast_op.gamma_constant
        if gamma0 is None or not coeffs.drift_is_zero:
            raise DriftOracleError("闭式漂移要求 γ 为常数且 l ≡ 0")
        self.config = config
        p, q, r = (coeffs.b1.params[k] for k in ("p", "q", "r"))
        d = coeffs.b2.params["d"]
        c0 = coeffs.b2.signal.offset
        fast, slow = config.fast_model, config.slow_model
        # 行向量约定: B̄(x) = x @ matrix + offset
        gain = c0 / (gamma0 * fast.alphas + config.alpha + d)
        to_fast = fast.project(slow.basis)
        back = slow.project(fast.basis)
        self.matrix = p * np.eye(slow.modes) + q * (to_fast * gain) @ back
        self.offset = r * slow.constant_coefficients()

    def __call__(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float) @ self.matrix + self.offset

    def estimate(self, x: Union[FieldState, np.ndarray]) -> AveragedDriftEstimate:
        x_arr = _coeffs_of(x)
        return AveragedDriftEstimate(
            x=x_arr.tolist(),
            estimate=self(x_arr).tolist(),
            horizon=math.inf,
            method=DriftMethod.CLOSED_FORM,
            error=0.0,
        )


class NemytskiiDrift:
    """b₁ 与快变量无关时 B̄(x) = P[B₁(x, ·)]。"""

    kind = DriftOracleKind.NEMYTSKII

    def __init__(self, config: SlowFastConfig):
        if config.coeffs.b1.uses_fast:
            raise DriftOracleError("b₁ 依赖快变量, 不能直接使用 Nemytskii 漂移")
        self.config = config

    def __call__(self, u: np.ndarray) -> np.ndarray:
        slow = self.config.slow_model
        u = np.asarray(u, dtype=float)
        nodal = slow.to_nodal(u)
        # b₁ 不读取快变量, 快场取零
        values = self.config.coeffs.b1(0.0, slow.nodes, nodal, np.zeros_like(nodal))
        return slow.project(np.broadcast_to(values, u.shape[:-1] + (slow.grid.n_nodes,)))


class HMMDrift:
    """
    按需微观模拟: 每次调用对每个成员用 n_micro 条冻结快路径做长度 t_micro 的时间平均。

    调用计数决定流编号, 因此同一预言机实例上的调用序列可复现。可选缓存按 quantum 量化的系数存取。

    Args:
        config: SlowFastConfig。
        spec: HMMSpec (n_micro, t_micro, burn_in, cache, quantum)。
        stream_base: 流编号基数, 同一运行中不同试验应取不同值。
        burn_in: 试运行得到的预热长度; spec.burn_in 优先, 二者皆无时取 default_burn_in。
    """

    kind = DriftOracleKind.HMM

    def __init__(
        self,
        config: SlowFastConfig,
        spec: Optional[HMMSpec] = None,
        stream_base: int = 0,
        burn_in: Optional[float] = None,
    ):
        self.config = config
        self.spec = spec or HMMSpec()
        burn = default_burn_in(config) if burn_in is None else float(burn_in)
        self.t_micro = self.spec.t_micro or HMM_T_MICRO_FACTOR * burn / BURN_IN_FACTOR
        self.burn_in = self.spec.burn_in or burn
        self.stream_base = int(stream_base)
        self.calls = 0
        self._cache: Dict[Tuple[int, ...], np.ndarray] = {}

    def _key(self, x: np.ndarray) -> Tuple[int, ...]:
        return tuple(int(v) for v in np.round(x / self.spec.quantum))

    def __call__(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        n, modes = u.shape
        out = np.empty_like(u)
        todo = []
        for i in range(n):
            if self.spec.cache:
                hit = self._cache.get(self._key(u[i]))
                if hit is not None:
                    out[i] = hit
                    continue
            todo.append(i)
        if todo:
            m = self.spec.n_micro
            batch = np.repeat(u[todo], m, axis=0)
            start = self.stream_base + self.calls * n * m
            streams = [start + i * m + j for i in todo for j in range(m)]
            try:
                paths, _ = _ergodic_paths(
                    batch, self.t_micro, self.config, streams, 0.0, self.burn_in, None, NoiseChannel.HMM,
                )
            except (FloatingPointError, ValueError) as e:
                raise DriftOracleError(f"HMM 微观模拟失败: {e}")
            means = paths.reshape(len(todo), m, modes).mean(axis=1)
            for row, i in enumerate(todo):
                out[i] = means[row]
                if self.spec.cache:
                    self._cache[self._key(u[i])] = means[row]
        self.calls += 1
        return out


def build_drift_oracle(
    config: SlowFastConfig,
    kind: DriftOracleKind,
    hmm: Optional[HMMSpec] = None,
    stream_base: int = 0,
    burn_in: Optional[float] = None,
):
    """按配置键构造漂移预言机; burn_in 只用于 HMM。"""
    kind = DriftOracleKind(kind)
    if kind == DriftOracleKind.CLOSED_FORM:
        return ClosedFormLinearDrift(config)
    if kind == DriftOracleKind.NEMYTSKII:
        return NemytskiiDrift(config)
    return HMMDrift(config, hmm, stream_base=stream_base, burn_in=burn_in)
