"""
冻结慢变量 x 时快过程的演化测度族 μᵗˣ: 回拉估计、对偶 Lipschitz 距离及各项诊断。

距离 d̂ 是在固定测试函数字典上取的上确界, 因而是真实对偶 Lipschitz 距离的下界。
"""

from __future__ import annotations

import logging
import math
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .constants import (
    BURN_IN_FACTOR,
    MC_BAND_SIGMAS,
    MIN_MIXING_R2,
    PILOT_LAGS,
    PILOT_MEMBERS,
    NoiseChannel,
    NoiseCoupling,
)
from .exceptions import (
    EmptyFamily,
    GridMismatch,
    InsufficientSamples,
    InvalidParameter,
    InvalidTimeInterval,
    NonFiniteSample,
)
from .integrators import SlowFastConfig, integrate_fast_frozen
from .models import (
    ContinuityReport,
    DistanceReport,
    EnvelopeFit,
    MixingEstimate,
    ResidualReport,
    ShiftEntry,
    ShiftReport,
    TightnessReport,
)
from .spectral import FieldState, SpectralModel
from .utils import holder_seminorm, log_linear_fit

logger = logging.getLogger(__name__)

_HOLDER_BATCH = 256


class EmpiricalMeasure:
    """
    等权经验测度: 时刻 t、冻结慢场 x 下的 N 个快场。

    Args:
        model: 快模型。
        members: 谱系数, 形状 (N, K₂)。
        t: 时间标签。
        x: 冻结慢场的系数。
        x_norm: |x|_E。
        burn_in: 回拉长度 T_burn。
        dt: 快步长。
        seed: 主种子。
        streams: 各成员的流编号。
    """

    def __init__(
        self,
        model: SpectralModel,
        members: np.ndarray,
        t: float,
        x: np.ndarray,
        x_norm: float = 0.0,
        burn_in: float = 0.0,
        dt: float = 0.0,
        seed: int = 0,
        streams: Optional[Sequence[int]] = None,
    ):
        members = np.asarray(members, dtype=float)
        if members.ndim != 2 or members.shape[0] < 2:
            raise InsufficientSamples(f"经验测度至少需要 2 个成员, 实际形状 {members.shape}")
        if members.shape[1] != model.modes:
            raise GridMismatch(f"成员维数 {members.shape[1]} 与模数 {model.modes} 不符")
        if not np.all(np.isfinite(members)):
            raise NonFiniteSample("经验测度包含非有限成员")
        self.model = model
        self.members = members
        self.t = float(t)
        self.x = np.asarray(x, dtype=float)
        self.x_norm = float(x_norm)
        self.burn_in = float(burn_in)
        self.dt = float(dt)
        self.seed = int(seed)
        self.streams = list(streams) if streams is not None else list(range(members.shape[0]))

    @property
    def size(self) -> int:
        return self.members.shape[0]

    def as_state(self) -> FieldState:
        return FieldState.from_coeffs(self.model, self.members)

    def mean(self) -> np.ndarray:
        return np.mean(self.members, axis=0)

    def standard_errors(self) -> np.ndarray:
        return np.std(self.members, axis=0, ddof=1) / math.sqrt(self.size)

    def sup_norms(self) -> np.ndarray:
        return self.model.sup_norm(self.members)

    def moment(self, p: float) -> float:
        """Ê|y|_E^p。"""
        return float(np.mean(self.sup_norms() ** p))

    def metadata(self) -> Dict[str, Any]:
        return {
            "t": self.t,
            "x": self.x.tolist(),
            "xNorm": self.x_norm,
            "burnIn": self.burn_in,
            "dt": self.dt,
            "seed": self.seed,
            "streams": [int(s) for s in self.streams],
            "members": self.size,
            "modes": self.model.modes,
        }

    def __repr__(self) -> str:
        return f"EmpiricalMeasure(t={self.t}, members={self.size})"


class TestFunctionDictionary:
    """
    有界 Lipschitz 测试泛函 f_j(y) = ½·tanh(⟨y, φ_j⟩/c_j), c_j = max(1, |φ_j|_{L¹})。

    |⟨y, φ⟩| ≤ |y|_E·|φ|_{L¹}, 所以每个 f_j 满足 |f_j|_E + [f_j]_Lip ≤ 1。
    """

    __test__ = False

    def __init__(self, model: SpectralModel, probes: np.ndarray, labels: Optional[List[str]] = None):
        probes = np.asarray(probes, dtype=float)
        if probes.ndim != 2 or probes.shape[0] == 0:
            raise EmptyFamily("测试函数字典为空")
        if probes.shape[1] != model.modes:
            raise GridMismatch(f"探针维数 {probes.shape[1]} 与模数 {model.modes} 不符")
        self.model = model
        self.probes = probes
        l1 = np.sum(np.abs(model.to_nodal(probes)) * model.grid.weights, axis=-1)
        self.scales = np.maximum(1.0, l1)
        self.labels = labels or [f"f{j}" for j in range(probes.shape[0])]

    @classmethod
    def default(cls, model: SpectralModel, pairs: bool = True, constant: bool = True) -> "TestFunctionDictionary":
        """特征函数、两两之和与常数场。"""
        k = model.modes
        probes = [np.eye(k)[i] for i in range(k)]
        labels = [f"e{i}" for i in range(k)]
        if pairs:
            for i in range(k):
                for j in range(i + 1, k):
                    probes.append(np.eye(k)[i] + np.eye(k)[j])
                    labels.append(f"e{i}+e{j}")
        if constant:
            const = model.constant_coefficients()
            if np.any(np.abs(const) > 1e-12):
                probes.append(const)
                labels.append("1")
        return cls(model, np.stack(probes), labels)

    def __len__(self) -> int:
        return self.probes.shape[0]

    def evaluate(self, members: np.ndarray) -> np.ndarray:
        """成员 (N, K) 上各泛函的值, 形状 (N, M)。"""
        pairing = np.asarray(members, dtype=float) @ self.probes.T
        return 0.5 * np.tanh(pairing / self.scales)


def default_burn_in(config: SlowFastConfig, pilot: Optional[MixingEstimate] = None) -> float:
    """
    默认回拉长度 5/δ̂; 试运行不可信时退回 5/α (α = 0 时用 γ₀ 与最小正特征值)。
    """
    if pilot is not None and pilot.conclusive and pilot.delta:
        return BURN_IN_FACTOR / pilot.delta
    rate = config.alpha
    if rate <= 0:
        positive = config.fast_model.alphas[config.fast_model.alphas > 0]
        gamma0 = config.fast_op.gamma_bounds[0]
        rate = gamma0 * float(np.min(positive)) if positive.size else 1.0
    return BURN_IN_FACTOR / rate


def _member_streams(n: int, offset: int = 0) -> List[int]:
    return list(range(offset, offset + n))


def estimate_evolution_measure(
    x: Union[FieldState, np.ndarray],
    t: float,
    T_burn: float,
    N: int,
    config: SlowFastConfig,
    *,
    y0: Optional[np.ndarray] = None,
    stream_offset: int = 0,
    time_offset: float = 0.0,
    dt: Optional[float] = None,
    channel: NoiseChannel = NoiseChannel.FAST,
) -> EmpiricalMeasure:
    """
    回拉估计 μᵗˣ: N 条冻结快轨道从 s = t − T_burn 的 y₀ (默认 0) 出发推进到 t。

    Args:
        x: 冻结慢场。
        t: 目标时间。
        T_burn: 回拉长度, > 0。
        N: 成员数。
        config: SlowFastConfig。
        y0: 初值, 默认 0。
        stream_offset: 成员流编号起点。
        time_offset: 噪声网格原点 (平移比较中使 t 与 t+τ 共享噪声)。
        dt: 快步长, 默认 config.dt_frozen。
        channel: 噪声通道。

    Returns:
        EmpiricalMeasure。
    """
    if T_burn <= 0:
        raise InvalidParameter(f"回拉长度必须为正, 实际 {T_burn}")
    if N < 2:
        raise InsufficientSamples(f"成员数至少为 2, 实际 {N}")
    model = config.fast_model
    x_arr = x.coeffs if isinstance(x, FieldState) else np.asarray(x, dtype=float)
    start = np.zeros(model.modes) if y0 is None else np.asarray(y0, dtype=float)
    streams = _member_streams(N, stream_offset)
    record = integrate_fast_frozen(
        x_arr, t - T_burn, t, start, config,
        streams=streams, dt=dt, channel=channel, time_offset=time_offset,
    )
    logger.debug("演化测度: t=%s, T_burn=%s, N=%d", t, T_burn, N)
    return EmpiricalMeasure(
        model,
        record.final_fast,
        t,
        x_arr,
        x_norm=float(config.slow_model.sup_norm(x_arr)) if x_arr.ndim == 1 else 0.0,
        burn_in=T_burn,
        dt=float(config.dt_frozen if dt is None else dt),
        seed=config.seed,
        streams=streams,
    )


def _check_same(mu: EmpiricalMeasure, nu: EmpiricalMeasure) -> None:
    if mu.model.modes != nu.model.modes or mu.model.grid != nu.model.grid:
        raise GridMismatch("两个经验测度不在同一模型上")


def dual_lipschitz_distance(
    mu: EmpiricalMeasure,
    nu: EmpiricalMeasure,
    dictionary: Optional[TestFunctionDictionary] = None,
) -> DistanceReport:
    """
    d̂(μ̂, ν̂) = max_j |mean f_j(μ̂) − mean f_j(ν̂)|, 真实距离的下界。

    standard_errors 按两个集合独立计算 √(s²₁/N₁ + s²₂/N₂)。
    """
    _check_same(mu, nu)
    dictionary = dictionary or TestFunctionDictionary.default(mu.model)
    if len(dictionary) == 0:
        raise EmptyFamily("测试函数字典为空")
    fa = dictionary.evaluate(mu.members)
    fb = dictionary.evaluate(nu.members)
    profile = np.abs(fa.mean(axis=0) - fb.mean(axis=0))
    se = np.sqrt(fa.var(axis=0, ddof=1) / fa.shape[0] + fb.var(axis=0, ddof=1) / fb.shape[0])
    return DistanceReport(value=float(profile.max()), profile=profile.tolist(), standard_errors=se.tolist())


def evolution_property_residual(
    x: Union[FieldState, np.ndarray],
    s: float,
    t: float,
    N: int,
    config: SlowFastConfig,
    dictionary: Optional[TestFunctionDictionary] = None,
    T_burn: Optional[float] = None,
) -> ResidualReport:
    """
    演化性质 ∫P_{s,t}φ dμˢ = ∫φ dμᵗ 的残差。

    左端: μ̂ˢ 的每个成员用新噪声 (FRESH 通道) 推进到 t; 右端: 用另一组流在 t 处回拉估计。

    Returns:
        每个泛函的 |LHS − RHS| 与 3σ 蒙特卡洛带。
    """
    if t < s:
        raise InvalidTimeInterval(f"要求 s ≤ t, 实际 s={s}, t={t}")
    dictionary = dictionary or TestFunctionDictionary.default(config.fast_model)
    if t == s:
        zeros = [0.0] * len(dictionary)
        return ResidualReport(s=s, t=t, residuals=zeros, bands=zeros)
    burn = T_burn if T_burn is not None else default_burn_in(config)
    mu_s = estimate_evolution_measure(x, s, burn, N, config)
    x_arr = x.coeffs if isinstance(x, FieldState) else np.asarray(x, dtype=float)
    continued = integrate_fast_frozen(
        x_arr, s, t, mu_s.members, config, streams=mu_s.streams, channel=NoiseChannel.FRESH,
    )
    lhs = dictionary.evaluate(continued.final_fast)
    mu_t = estimate_evolution_measure(x, t, burn, N, config, stream_offset=N)
    rhs = dictionary.evaluate(mu_t.members)
    residuals = np.abs(lhs.mean(axis=0) - rhs.mean(axis=0))
    bands = MC_BAND_SIGMAS * np.sqrt(lhs.var(axis=0, ddof=1) / N + rhs.var(axis=0, ddof=1) / N)
    return ResidualReport(s=s, t=t, residuals=residuals.tolist(), bands=bands.tolist())


def mixing_decay_estimate(
    x: Union[FieldState, np.ndarray],
    y: Union[FieldState, np.ndarray],
    lags: Sequence[float],
    N: int,
    config: SlowFastConfig,
    dictionary: Optional[TestFunctionDictionary] = None,
    s: float = 0.0,
    T_burn: Optional[float] = None,
    channel: NoiseChannel = NoiseChannel.FAST,
) -> MixingEstimate:
    """
    混合速率: 间隙 max_j |P_{s,s+ℓ}f_j(y) − ∫f_j dμ^{s+ℓ}| 关于 ℓ 的对数线性拟合。

    y 出发的 N 条轨道与回拉到 s 的 N 条轨道共享噪声 (同一批次中流编号重复),
    因此间隙主要来自初值差的收缩。只有高于 3 倍标准误的间隙参与拟合。

    Args:
        x: 冻结慢场。
        y: 起点。
        lags: 滞后网格, 至少 4 个点, 升序。
        N: 每侧成员数。
        config: SlowFastConfig。
        dictionary: 测试函数字典。
        s: 起始时间。
        T_burn: 回拉长度。
        channel: 噪声通道。
    """
    lags = np.asarray(sorted(float(l) for l in lags))
    if lags.size < 4:
        raise InsufficientSamples(f"滞后网格至少需要 4 个点, 实际 {lags.size}")
    if lags[0] < 0:
        raise InvalidParameter("滞后必须非负")
    model = config.fast_model
    dictionary = dictionary or TestFunctionDictionary.default(model)
    burn = T_burn if T_burn is not None else default_burn_in(config)
    x_arr = x.coeffs if isinstance(x, FieldState) else np.asarray(x, dtype=float)
    y_arr = y.coeffs if isinstance(y, FieldState) else np.asarray(y, dtype=float)

    streams = _member_streams(N)
    pulled = estimate_evolution_measure(x_arr, s, burn, N, config, channel=channel)
    state = np.concatenate([np.broadcast_to(y_arr, (N, model.modes)), pulled.members])
    stacked = streams + streams
    now = s
    gaps, bands = [], []
    for lag in lags:
        target = s + lag
        if target > now:
            state = integrate_fast_frozen(
                x_arr, now, target, state, config, streams=stacked, channel=channel,
            ).final_fast
            now = target
        values = dictionary.evaluate(state)
        diff = values[:N] - values[N:]
        gap = np.abs(diff.mean(axis=0))
        se = diff.std(axis=0, ddof=1) / math.sqrt(N)
        j = int(np.argmax(gap))
        gaps.append(float(gap[j]))
        bands.append(float(MC_BAND_SIGMAS * se[j]))

    gaps_arr, bands_arr = np.asarray(gaps), np.asarray(bands)
    usable = gaps_arr > np.maximum(bands_arr, 1e-300)
    estimate = MixingEstimate(lags=lags.tolist(), gaps=gaps, bands=bands)
    if np.count_nonzero(usable) < 3:
        logger.info("混合拟合不可信: 仅 %d 个间隙高于蒙特卡洛带", int(np.count_nonzero(usable)))
        return estimate
    fit = log_linear_fit(lags[usable], gaps_arr[usable])
    delta = -fit.slope
    estimate.delta = delta
    estimate.prefactor = float(math.exp(fit.intercept))
    estimate.r_squared = fit.r_squared
    estimate.conclusive = bool(delta > 0 and fit.r_squared >= MIN_MIXING_R2)
    return estimate


def pilot_burn_in(
    config: SlowFastConfig,
    x: Optional[Union[FieldState, np.ndarray]] = None,
    N: int = PILOT_MEMBERS,
) -> Tuple[float, MixingEstimate]:
    """
    试运行 (PILOT 通道) 估计混合速率 δ̂, 返回 (5/δ̂, 估计); 不可信时退回 default_burn_in。

    起点取第一个特征函数, 滞后网格与回拉长度以回退值 5/α 为单位。
    """
    fallback = default_burn_in(config)
    x_arr = np.zeros(config.slow_model.modes) if x is None else (
        x.coeffs if isinstance(x, FieldState) else np.asarray(x, dtype=float)
    )
    y = np.zeros(config.fast_model.modes)
    y[0] = 1.0
    lags = [fallback * f for f in PILOT_LAGS]
    mixing = mixing_decay_estimate(
        x_arr, y, lags, N, config, T_burn=fallback, channel=NoiseChannel.PILOT,
    )
    burn = default_burn_in(config, mixing)
    if mixing.conclusive:
        logger.info("试运行混合速率 δ̂=%.4g (R²=%.3f), 预热长度 %.4g", mixing.delta, mixing.r_squared, burn)
    else:
        logger.warning("试运行混合拟合不可信, 预热长度退回 %.4g", burn)
    return burn, mixing


def ap_measure_diagnostic(
    x: Union[FieldState, np.ndarray],
    times: Sequence[float],
    shifts: Sequence[float],
    N: int,
    config: SlowFastConfig,
    dictionary: Optional[TestFunctionDictionary] = None,
    T_burn: Optional[float] = None,
    tolerance: Optional[float] = None,
    coupling: NoiseCoupling = NoiseCoupling.COMMON,
) -> ShiftReport:
    """
    t ↦ μᵗˣ 的几乎周期性: 对每个候选平移 τ 计算 max_t d̂(μ̂^{t+τ}, μ̂ᵗ)。

    common 耦合时 t+τ 处的集合把噪声网格原点平移 τ, 与 t 处共享同一噪声;
    independent 时使用新的流编号。

    Args:
        x: 冻结慢场。
        times: 采样时间。
        shifts: 候选平移, 通常来自 uniform_ap_check。
        N: 成员数。
        config: SlowFastConfig。
        dictionary: 测试函数字典。
        T_burn: 回拉长度。
        tolerance: 接受阈值, 默认取蒙特卡洛带。
        coupling: 噪声耦合方式。
    """
    coupling = NoiseCoupling(coupling)
    times = [float(t) for t in times]
    if not times:
        raise InsufficientSamples("至少需要一个采样时间")
    dictionary = dictionary or TestFunctionDictionary.default(config.fast_model)
    burn = T_burn if T_burn is not None else default_burn_in(config)
    base = {t: estimate_evolution_measure(x, t, burn, N, config) for t in times}
    entries = []
    for i, tau in enumerate(shifts):
        tau = float(tau)
        worst, band = 0.0, 0.0
        for t in times:
            if coupling == NoiseCoupling.COMMON:
                shifted = estimate_evolution_measure(x, t + tau, burn, N, config, time_offset=tau)
            else:
                shifted = estimate_evolution_measure(x, t + tau, burn, N, config, stream_offset=(i + 1) * N)
            report = dual_lipschitz_distance(shifted, base[t], dictionary)
            worst = max(worst, report.value)
            band = max(band, report.mc_band)
        limit = tolerance if tolerance is not None else band
        entries.append(ShiftEntry(shift=tau, discrepancy=worst, mc_band=band, accepted=bool(worst <= limit)))
        logger.debug("平移 τ=%.4f: 差异 %.3g, 蒙特卡洛带 %.3g", tau, worst, band)
    return ShiftReport(
        times=times, tolerance=tolerance, common_noise=coupling == NoiseCoupling.COMMON, entries=entries,
    )


def tightness_proxy(
    ensemble: EmpiricalMeasure,
    theta_holder: float,
    quantiles: Sequence[float] = (0.5, 0.9, 0.99),
) -> TightnessReport:
    """集合成员离散 Hölder 半范数与上确界范数的分位数。"""
    if not (0.0 < theta_holder < 0.5):
        raise InvalidParameter(f"θ 必须在 (0, 1/2) 内, 实际 {theta_holder}")
    model = ensemble.model
    nodal = model.to_nodal(ensemble.members)
    seminorms = np.concatenate([
        holder_seminorm(nodal[i : i + _HOLDER_BATCH], model.nodes, theta_holder)
        for i in range(0, nodal.shape[0], _HOLDER_BATCH)
    ])
    norms = np.max(np.abs(nodal), axis=-1)
    levels = [float(q) for q in quantiles]
    return TightnessReport(
        theta_holder=theta_holder,
        quantile_levels=levels,
        seminorm_quantiles=np.quantile(seminorms, levels).tolist(),
        norm_quantiles=np.quantile(norms, levels).tolist(),
        max_seminorm=float(seminorms.max()),
    )


def measure_continuity_probe(
    x1: Union[FieldState, np.ndarray],
    x2: Union[FieldState, np.ndarray],
    t: float,
    N: int,
    config: SlowFastConfig,
    T_burn: Optional[float] = None,
    dictionary: Optional[TestFunctionDictionary] = None,
) -> ContinuityReport:
    """
    Ê|η^{x₁}(t) − η^{x₂}(t)|²_E / |x₁ − x₂|²_E, 两组集合共享噪声。
    """
    a = x1.coeffs if isinstance(x1, FieldState) else np.asarray(x1, dtype=float)
    b = x2.coeffs if isinstance(x2, FieldState) else np.asarray(x2, dtype=float)
    denom = float(config.slow_model.sup_norm(a - b)) ** 2
    if denom == 0.0:
        raise InvalidParameter("x₁ 与 x₂ 相同, 商无定义")
    burn = T_burn if T_burn is not None else default_burn_in(config)
    mu1 = estimate_evolution_measure(a, t, burn, N, config)
    mu2 = estimate_evolution_measure(b, t, burn, N, config)
    sq = config.fast_model.sup_norm(mu1.members - mu2.members) ** 2 / denom
    return ContinuityReport(
        quotient=float(sq.mean()),
        standard_error=float(sq.std(ddof=1) / math.sqrt(N)),
        distance=dual_lipschitz_distance(mu1, mu2, dictionary).value,
    )


def moment_envelope(measures: Sequence[EmpiricalMeasure], p: float = 2.0) -> EnvelopeFit:
    """单常数拟合 Ê|y|_E^p ≤ c(1 + |x|_E^p), c 取各集合比值的最大值。"""
    if not measures:
        raise EmptyFamily("没有可拟合的经验测度")
    ratios = [m.moment(p) / (1.0 + m.x_norm**p) for m in measures]
    return EnvelopeFit(p=p, constant=max(ratios), ratios=ratios)
