"""
温和解 (指数 Euler) 时间推进: 冻结慢变量的快方程、ε 缩放的耦合慢快系统与平均方程。

线性刚性部分由积分因子精确处理; 反应项、一阶项与噪声系数取步左端点的时间与状态。
"""

from __future__ import annotations

import logging
import math
from typing import Any, Callable, Dict, List, Optional, Protocol, Sequence, Union

import numpy as np

from .coefficients import CoefficientSet, build_coefficients
from .constants import BLOWUP_THRESHOLD, DEFAULT_C_DT, MAX_C_DT, NOISE_CHUNK, NoiseChannel
from .exceptions import BlowUpError, InsufficientSamples, InvalidParameter, InvalidTimeInterval
from .models import RegularityFit
from .spectral import FieldState, SpectralModel, TimeDependentOperator, build_spectral_model
from .noise import IncrementSampler
from .utils import holder_seminorm, log_log_fit, noise_weight, phi1

logger = logging.getLogger(__name__)

SlowInput = Union[FieldState, np.ndarray, Callable[[float], np.ndarray]]


class DriftOracle(Protocol):
    def __call__(self, u: np.ndarray) -> np.ndarray:
        """B̄(u) 的谱系数, 输入输出形状 (N, K₁)。"""
        ...


class SlowFastConfig:
    """
    一次模拟所需的全部数值对象。

    dt_fast = dt_macro / ⌈dt_macro/(c_dt·ε)⌉ ≤ min(dt_macro, c_dt·ε)。
    """

    def __init__(
        self,
        slow_model: SpectralModel,
        fast_model: SpectralModel,
        coeffs: CoefficientSet,
        eps: float,
        alpha: float,
        dt_macro: float,
        horizon: float,
        x0: np.ndarray,
        y0: np.ndarray,
        seed: int = 0,
        c_dt: float = DEFAULT_C_DT,
        dt_frozen: float = 1e-2,
        blowup_threshold: float = BLOWUP_THRESHOLD,
        noise_chunk: int = NOISE_CHUNK,
    ):
        if not (0.0 < eps <= 1.0):
            raise InvalidParameter(f"ε 必须在 (0, 1] 内, 实际 {eps}")
        if c_dt <= 0 or c_dt > MAX_C_DT:
            raise InvalidParameter(f"c_dt 必须在 (0, {MAX_C_DT}] 内, 实际 {c_dt}")
        if dt_macro <= 0 or horizon <= 0:
            raise InvalidParameter("dt_macro 与 horizon 必须为正")
        if slow_model.grid != fast_model.grid:
            raise InvalidParameter("慢、快模型必须共享配点网格")
        self.slow_model = slow_model
        self.fast_model = fast_model
        self.coeffs = coeffs
        self.eps = float(eps)
        self.alpha = float(alpha)
        self.dt_macro = float(dt_macro)
        self.horizon = float(horizon)
        self.x0 = np.asarray(x0, dtype=float)
        self.y0 = np.asarray(y0, dtype=float)
        self.seed = int(seed)
        self.c_dt = float(c_dt)
        self.dt_frozen = float(dt_frozen)
        self.blowup_threshold = float(blowup_threshold)
        self.noise_chunk = int(noise_chunk)
        self.fast_op = TimeDependentOperator(
            fast_model, coeffs.gamma, coeffs.drift, coeffs.drift_profile, dt=self.dt_frozen
        )

    @property
    def n_sub(self) -> int:
        return max(1, math.ceil(self.dt_macro / (self.c_dt * self.eps) - 1e-9))

    @property
    def dt_fast(self) -> float:
        return self.dt_macro / self.n_sub

    @property
    def n_macro(self) -> int:
        return max(1, int(round(self.horizon / self.dt_macro)))

    @classmethod
    def from_experiment(cls, config, eps: Optional[float] = None, settings=None) -> "SlowFastConfig":
        """
        由 ExperimentConfig 构造。

        Args:
            config: ExperimentConfig。
            eps: 覆盖 ε, 默认取 epsList 的第一个值。
            settings: 运行时 Settings, 提供发散阈值与噪声块大小。
        """
        n_nodes = max(config.slow_model.resolved_nodes, config.fast_model.resolved_nodes)
        slow = build_spectral_model(config.slow_model, n_nodes)
        fast = build_spectral_model(config.fast_model, n_nodes)
        coeffs = build_coefficients(config.coefficients)
        x0 = np.zeros(slow.modes)
        x0[: len(config.x0.coefficients)] = config.x0.coefficients
        y0 = np.zeros(fast.modes)
        y0[: len(config.y0.coefficients)] = config.y0.coefficients
        radius = config.truncation_radius
        if radius is not None:
            coeffs = coeffs.truncated(radius)
        extra: Dict[str, Any] = {}
        if settings is not None:
            extra = {"blowup_threshold": settings.blowup_threshold, "noise_chunk": settings.noise_chunk}
        return cls(
            slow,
            fast,
            coeffs,
            eps=config.eps_list[0] if eps is None else eps,
            alpha=config.alpha,
            dt_macro=config.dt_macro,
            horizon=config.horizon,
            x0=x0,
            y0=y0,
            seed=config.seed,
            c_dt=config.c_dt,
            dt_frozen=config.dt_frozen,
            **extra,
        )

    def replace(self, **changes) -> "SlowFastConfig":
        fields = dict(
            slow_model=self.slow_model,
            fast_model=self.fast_model,
            coeffs=self.coeffs,
            eps=self.eps,
            alpha=self.alpha,
            dt_macro=self.dt_macro,
            horizon=self.horizon,
            x0=self.x0,
            y0=self.y0,
            seed=self.seed,
            c_dt=self.c_dt,
            dt_frozen=self.dt_frozen,
            blowup_threshold=self.blowup_threshold,
            noise_chunk=self.noise_chunk,
        )
        fields.update(changes)
        return SlowFastConfig(**fields)

    def default_truncation_radius(self) -> float:
        """n = 4·(1 + |x₀|_E + |y₀|_E)。"""
        return 4.0 * (
            1.0 + float(self.slow_model.sup_norm(self.x0)) + float(self.fast_model.sup_norm(self.y0))
        )

    def __repr__(self) -> str:
        return (
            f"SlowFastConfig(eps={self.eps}, alpha={self.alpha}, dt_macro={self.dt_macro}, "
            f"n_sub={self.n_sub}, horizon={self.horizon})"
        )


class TrajectoryRecord:
    """
    采样时间上的慢/快路径 (成员维在第二维) 与上确界范数序列。

    slow: (M, N, K₁); fast: (M', N, K₂); *_sup: 对应的 |·|_E。
    """

    def __init__(
        self,
        times: np.ndarray,
        streams: Sequence[int],
        slow: Optional[np.ndarray] = None,
        slow_sup: Optional[np.ndarray] = None,
        fast_times: Optional[np.ndarray] = None,
        fast: Optional[np.ndarray] = None,
        fast_sup: Optional[np.ndarray] = None,
        slow_model: Optional[SpectralModel] = None,
        fast_model: Optional[SpectralModel] = None,
        extras: Optional[Dict[str, np.ndarray]] = None,
    ):
        self.times = np.asarray(times, dtype=float)
        self.streams = list(streams)
        self.slow = slow
        self.slow_sup = slow_sup
        self.fast_times = fast_times
        self.fast = fast
        self.fast_sup = fast_sup
        self.slow_model = slow_model
        self.fast_model = fast_model
        self.extras = extras or {}

    @property
    def n_members(self) -> int:
        return len(self.streams)

    @property
    def final_slow(self) -> Optional[np.ndarray]:
        return None if self.slow is None else self.slow[-1]

    @property
    def final_fast(self) -> Optional[np.ndarray]:
        return None if self.fast is None else self.fast[-1]

    def __repr__(self) -> str:
        return f"TrajectoryRecord(samples={self.times.size}, members={self.n_members})"


def _guard(model: SpectralModel, state: np.ndarray, threshold: float, t: float, streams: Sequence[int], seed: int) -> np.ndarray:
    sup = model.sup_norm(state)
    bad = ~np.isfinite(sup) | (sup > threshold)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise BlowUpError(
            f"轨道发散: |·|_E = {sup[i]:.3g} 超过阈值 {threshold:.3g}",
            member=i,
            stream=int(streams[i]),
            seed=seed,
            time=float(t),
        )
    return sup


def _as_batch(value, modes: int, n: int) -> np.ndarray:
    arr = value.coeffs if isinstance(value, FieldState) else np.asarray(value, dtype=float)
    if arr.shape[-1] != modes:
        raise InvalidParameter(f"系数维数 {arr.shape[-1]} 与模数 {modes} 不符")
    return np.broadcast_to(arr, (n, modes)).copy()


class FastStepper:
    """
    快方程的一步指数 Euler (步长 h, 快时间):

    v ← e^{−z}v + φ₁·P[N₂(r,x,v) + L(r)v] + w·P[G₂(r,v)dW],
    z_k = γ(r+h, r)α_k + (α + d)h, φ₁ = h(1 − e^{−z})/z, w = sqrt((1 − e^{−2z})/(2z))。

    b₂ = −d·v + N₂, 线性阻尼 d 并入 z; 对线性 b₂ 与常数 γ, 零噪声衰减与平稳方差都是精确的。
    """

    def __init__(self, op: TimeDependentOperator, coeffs: CoefficientSet, alpha: float, h: float):
        self.op = op
        self.model = op.model
        self.coeffs = coeffs
        self.alpha = alpha
        self.damping = coeffs.b2.damping
        self.h = h
        self._xi = self.model.nodes
        gamma0 = op.gamma_constant
        self._fixed = self._weights_for(gamma0 * h) if gamma0 is not None else None
        self._noise_scalar: Optional[float] = None
        signal = coeffs.g2.signal
        if coeffs.g2.state_free and (signal is None or signal.is_constant):
            g = np.asarray(coeffs.g2(0.0, self._xi, None, None), dtype=float)
            if np.ptp(g) == 0.0:
                self._noise_scalar = float(g[0])

    def _weights_for(self, gamma_int: float):
        z = gamma_int * self.model.alphas + (self.alpha + self.damping) * self.h
        return np.exp(-z), phi1(z, self.h), noise_weight(z)

    def weights(self, r: float):
        if self._fixed is not None:
            return self._fixed
        return self._weights_for(float(self.op.gamma_integral(r, r + self.h)))

    def noise(self, r: float, v_nodal: np.ndarray, dw: np.ndarray) -> np.ndarray:
        if self._noise_scalar is not None:
            return self._noise_scalar * dw
        g2 = self.coeffs.g2
        if g2.state_free:
            g = np.asarray(g2(r, self._xi, None, None), dtype=float)
            if np.ptp(g) == 0.0:
                return float(g[0]) * dw
        else:
            g = g2(r, self._xi, None, v_nodal)
        return self.model.project(g * self.model.to_nodal(dw))

    def step(self, r: float, x_nodal: np.ndarray, v: np.ndarray, dw: np.ndarray) -> np.ndarray:
        decay, phi, weight = self.weights(r)
        v_nodal = self.model.to_nodal(v)
        drift_nodal = self.coeffs.b2.nonlinear(r, self._xi, x_nodal, v_nodal)
        if self.op.has_first_order:
            drift_nodal = drift_nodal + self.op.first_order_nodal(r, v)
        drift = self.model.project(np.broadcast_to(drift_nodal, v_nodal.shape))
        return decay * v + phi * drift + weight * self.noise(r, v_nodal, dw)


class SlowStepper:
    """慢方程的一步指数 Euler: u ← e^{−α₁dt}u + φ₁·B + w·P[G₁(u)dW₁], w 同快方程。"""

    def __init__(self, model: SpectralModel, coeffs: CoefficientSet, dt: float):
        self.model = model
        self.coeffs = coeffs
        self.dt = dt
        z = model.alphas * dt
        self.decay = np.exp(-z)
        self.phi = phi1(z, dt)
        self.weight = noise_weight(z)
        self._xi = model.nodes

    def noise(self, u_nodal: np.ndarray, dw: np.ndarray) -> np.ndarray:
        g1 = self.coeffs.g1
        if g1.state_free:
            g = np.asarray(g1(0.0, self._xi, None, None), dtype=float)
            if np.ptp(g) == 0.0:
                return float(g[0]) * dw
        else:
            g = g1(0.0, self._xi, u_nodal, None)
        return self.model.project(g * self.model.to_nodal(dw))

    def step(self, u: np.ndarray, drift: np.ndarray, noise: np.ndarray) -> np.ndarray:
        return self.decay * u + self.phi * drift + self.weight * noise


def _streams_for(stream: int, streams: Optional[Sequence[int]], n_default: int = 1) -> List[int]:
    if streams is not None:
        return [int(s) for s in streams]
    return [int(stream) + i for i in range(n_default)]


def integrate_fast_frozen(
    x: SlowInput,
    s: float,
    t: float,
    y: Union[FieldState, np.ndarray],
    config: SlowFastConfig,
    stream: int = 0,
    *,
    streams: Optional[Sequence[int]] = None,
    dt: Optional[float] = None,
    record_every: Optional[int] = None,
    observer: Optional[Callable[[float, np.ndarray], None]] = None,
    channel: NoiseChannel = NoiseChannel.FAST,
    time_offset: float = 0.0,
    refinement: int = 1,
) -> TrajectoryRecord:
    """
    冻结慢变量 x 的快方程 dv = [(A₂(t)−α)v + B₂(t,x,v)]dt + G₂(t,v)dw̄, 从 v(s) = y 推进到 t。

    s < 0 时负时间步自动使用双边 Wiener 过程的负分支。步点取在 time_offset + kh 网格上,
    s 与 t 吸附到最近的网格点 (偏差不超过 h/2, 正跨度至少一步), 因此相邻区间拼接时不会重复使用增量。

    Args:
        x: 慢场 (系数 (K₁,) 或 (N, K₁)), 或时间的函数 r ↦ 系数 (用于慢路径随时间变化的比较)。
        s: 起始时间。
        t: 终止时间, s ≤ t。
        y: 初值, (K₂,) 或 (N, K₂)。
        config: SlowFastConfig。
        stream: 单成员时的流编号; 批量时成员 i 默认使用 stream + i。
        streams: 显式指定各成员的流编号 (可重复以共享噪声)。
        dt: 步长, 默认 config.dt_frozen。
        record_every: 每隔多少步记录一次, None 只记录起点与终点。
        observer: 每步左端点调用 observer(r, v)。
        channel: 噪声通道。
        time_offset: 噪声网格原点, 平移后可在不同时间段复用同一噪声。
        refinement: 噪声细化倍数。

    Returns:
        TrajectoryRecord, 快路径在 fast 字段。
    """
    if t < s:
        raise InvalidTimeInterval(f"要求 s ≤ t, 实际 s={s}, t={t}")
    model = config.fast_model
    y_arr = y.coeffs if isinstance(y, FieldState) else np.asarray(y, dtype=float)
    n_default = y_arr.shape[0] if y_arr.ndim == 2 else 1
    if streams is None and not callable(x):
        x_probe = x.coeffs if isinstance(x, FieldState) else np.asarray(x, dtype=float)
        if x_probe.ndim == 2:
            n_default = max(n_default, x_probe.shape[0])
    ids = _streams_for(stream, streams, n_default)
    n = len(ids)
    v = _as_batch(y_arr, model.modes, n)

    h = config.dt_frozen if dt is None else float(dt)
    # 步点固定在 time_offset + kh 网格上, 第 k 步使用第 k 个增量
    k0 = int(round((s - time_offset) / h))
    k1 = int(round((t - time_offset) / h))
    if t > s and k1 == k0:
        k1 = k0 + 1
    m = k1 - k0

    slow_model = config.slow_model
    if callable(x) and not isinstance(x, (FieldState, np.ndarray)):
        x_at = lambda r: slow_model.to_nodal(_as_batch(x(r), slow_model.modes, n))
    else:
        x_fixed = slow_model.to_nodal(_as_batch(x, slow_model.modes, n))
        x_at = lambda r: x_fixed

    times = [s]
    states = [v.copy()]
    sups = [_guard(model, v, config.blowup_threshold, s, ids, config.seed)]
    if m == 0:
        return TrajectoryRecord(
            np.asarray(times), ids, fast_times=np.asarray(times), fast=np.stack(states),
            fast_sup=np.stack(sups), slow_model=slow_model, fast_model=model,
        )

    stepper = FastStepper(config.fast_op, config.coeffs, config.alpha, h)
    sampler = IncrementSampler(
        model.noise_eigenvalues, config.seed, channel, ids, h,
        time_offset=time_offset, refinement=refinement, chunk=config.noise_chunk,
    )
    for i in range(m):
        k = k0 + i
        r = time_offset + k * h
        if observer is not None:
            observer(r, v)
        v = stepper.step(r, x_at(r), v, sampler.increments(k))
        sup = _guard(model, v, config.blowup_threshold, r + h, ids, config.seed)
        last = i == m - 1
        if last or (record_every is not None and (i + 1) % record_every == 0):
            times.append(r + h if not last else t)
            states.append(v.copy())
            sups.append(sup)
    return TrajectoryRecord(
        np.asarray(times), ids, fast_times=np.asarray(times), fast=np.stack(states),
        fast_sup=np.stack(sups), slow_model=slow_model, fast_model=model,
    )


MacroHook = Callable[[int, float, np.ndarray, np.ndarray, np.ndarray], None]


def integrate_coupled(
    config: SlowFastConfig,
    stream: int = 0,
    *,
    streams: Optional[Sequence[int]] = None,
    store_fast: bool = False,
    fast_every: Optional[int] = None,
    on_macro_step: Optional[MacroHook] = None,
    freeze_window: Optional[float] = None,
    refinement: int = 1,
    slow_channel: NoiseChannel = NoiseChannel.SLOW,
    fast_channel: NoiseChannel = NoiseChannel.FAST,
    slow_path: Optional[Callable[[float], np.ndarray]] = None,
) -> TrajectoryRecord:
    """
    耦合系统
        du = [A₁u + B₁(u,v)]dt + G₁(u)dw₁,
        dv = (1/ε)[(A₂(t/ε)−α)v + B₂(t/ε,u,v)]dt + (1/√ε)G₂(t/ε,v)dw₂。

    每个宏步 dt_macro 内, u 冻结在左端点, v 以快时间步长 h = dt_fast/ε 推进 n_sub 个子步;
    宏步的慢漂移取各子步左端点 B₁(u, v) 的平均。

    Args:
        config: SlowFastConfig。
        stream: 成员流编号起点。
        streams: 各成员流编号, 同一编号同时用于 Q₁ 与 Q₂ 通道。
        store_fast: 是否存储快路径。
        fast_every: 快路径每隔多少子步存储一次, 默认 n_sub。
        on_macro_step: 宏步回调 (k, t_k, u_left, B₁ 平均, P[G₁(u)dW₁])。
        freeze_window: 给定 δ 时同时推进辅助快过程 v̂ (每个窗口起点重置为 v, 慢变量冻结在窗口起点),
            并在 extras["aux_deviation"] 中记录 |v̂ − v|²_E。
        refinement: 慢噪声细化倍数。
        slow_path: 给定时慢变量不再演化, 而取 slow_path(t) (快方程在外加慢路径下的比较)。

    Returns:
        TrajectoryRecord, 每个宏步记录一次慢状态。
    """
    slow_model, fast_model = config.slow_model, config.fast_model
    ids = _streams_for(stream, streams)
    n = len(ids)
    u = _as_batch(config.x0, slow_model.modes, n)
    v = _as_batch(config.y0, fast_model.modes, n)
    if slow_path is not None:
        u = _as_batch(slow_path(0.0), slow_model.modes, n)

    n_sub = config.n_sub
    dt = config.dt_macro
    h = config.dt_fast / config.eps
    fast_step = FastStepper(config.fast_op, config.coeffs, config.alpha, h)
    slow_step = SlowStepper(slow_model, config.coeffs, dt)
    slow_noise = IncrementSampler(
        slow_model.noise_eigenvalues, config.seed, slow_channel, ids, dt,
        refinement=refinement, chunk=config.noise_chunk,
    )
    fast_noise = IncrementSampler(
        fast_model.noise_eigenvalues, config.seed, fast_channel, ids, h, chunk=config.noise_chunk,
    )
    xi = slow_model.nodes
    every = fast_every if fast_every is not None else n_sub

    window_steps = None
    if freeze_window is not None:
        window_steps = max(1, int(round(freeze_window / dt)))
    v_hat = None
    x_frozen = None
    deviations: List[np.ndarray] = []

    times = [0.0]
    slow_states = [u.copy()]
    slow_sups = [_guard(slow_model, u, config.blowup_threshold, 0.0, ids, config.seed)]
    fast_times: List[float] = [0.0]
    fast_states = [v.copy()] if store_fast else []
    fast_sups = [fast_model.sup_norm(v)]

    for k in range(config.n_macro):
        t_k = k * dt
        u_left = u
        u_nodal = slow_model.to_nodal(u_left)
        if window_steps is not None and k % window_steps == 0:
            v_hat = v.copy()
            x_frozen = u_nodal
        b1_acc = np.zeros_like(u)
        for j in range(n_sub):
            if slow_path is not None:
                u_nodal = slow_model.to_nodal(_as_batch(slow_path(t_k + j * config.dt_fast), slow_model.modes, n))
            r = (t_k + j * config.dt_fast) / config.eps
            v_nodal = fast_model.to_nodal(v)
            b1_acc += slow_model.project(
                np.broadcast_to(config.coeffs.b1(t_k, xi, u_nodal, v_nodal), u_nodal.shape)
            )
            dw = fast_noise.increments(k * n_sub + j)
            if v_hat is not None:
                v_hat = fast_step.step(r, x_frozen, v_hat, dw)
            v = fast_step.step(r, u_nodal, v, dw)
            sub_t = t_k + (j + 1) * config.dt_fast
            fsup = _guard(fast_model, v, config.blowup_threshold, sub_t, ids, config.seed)
            if (j + 1) % every == 0:
                fast_times.append(sub_t)
                fast_sups.append(fsup)
                if store_fast:
                    fast_states.append(v.copy())
        b1_mean = b1_acc / n_sub
        noise_term = slow_step.noise(slow_model.to_nodal(u_left), slow_noise.increments(k))
        if slow_path is not None:
            u = _as_batch(slow_path((k + 1) * dt), slow_model.modes, n)
        else:
            u = slow_step.step(u_left, b1_mean, noise_term)
        t_next = (k + 1) * dt
        sup = _guard(slow_model, u, config.blowup_threshold, t_next, ids, config.seed)
        if on_macro_step is not None:
            on_macro_step(k, t_k, u_left, b1_mean, noise_term)
        if v_hat is not None:
            _guard(fast_model, v_hat, config.blowup_threshold, t_next, ids, config.seed)
            deviations.append(fast_model.sup_norm(v_hat - v) ** 2)
        times.append(t_next)
        slow_states.append(u.copy())
        slow_sups.append(sup)

    extras: Dict[str, np.ndarray] = {}
    if deviations:
        extras["aux_deviation"] = np.stack(deviations)
    logger.debug("耦合积分完成: eps=%s, 宏步 %d, 子步 %d", config.eps, config.n_macro, n_sub)
    return TrajectoryRecord(
        np.asarray(times),
        ids,
        slow=np.stack(slow_states),
        slow_sup=np.stack(slow_sups),
        fast_times=np.asarray(fast_times),
        fast=np.stack(fast_states) if store_fast else None,
        fast_sup=np.stack(fast_sups),
        slow_model=slow_model,
        fast_model=fast_model,
        extras=extras,
    )


def integrate_averaged(
    x: Union[FieldState, np.ndarray],
    T: float,
    oracle: DriftOracle,
    config: SlowFastConfig,
    stream: int = 0,
    *,
    streams: Optional[Sequence[int]] = None,
    dt: Optional[float] = None,
    refinement: int = 1,
    channel: NoiseChannel = NoiseChannel.SLOW,
) -> TrajectoryRecord:
    """
    平均方程 du = [A₁u + B̄(u)]dt + G₁(u)dw₁ 的指数 Euler, 每个宏步调用一次 B̄。

    与 integrate_coupled 使用相同通道、流编号与步长时, 两者共享同一 Q₁ 噪声。

    Args:
        x: 初值。
        T: 终止时间。
        oracle: 漂移 B̄, 作用于 (N, K₁) 系数。
        config: SlowFastConfig。
        stream: 流编号起点。
        streams: 各成员流编号。
        dt: 步长, 默认 config.dt_macro。
        refinement: 噪声细化倍数 (步长减半对比时共享布朗路径)。
        channel: 噪声通道。
    """
    model = config.slow_model
    x_arr = x.coeffs if isinstance(x, FieldState) else np.asarray(x, dtype=float)
    ids = _streams_for(stream, streams, x_arr.shape[0] if x_arr.ndim == 2 else 1)
    n = len(ids)
    u = _as_batch(x_arr, model.modes, n)
    step = config.dt_macro if dt is None else float(dt)
    n_steps = max(1, int(round(T / step)))
    stepper = SlowStepper(model, config.coeffs, step)
    sampler = IncrementSampler(
        model.noise_eigenvalues, config.seed, channel, ids, step,
        refinement=refinement, chunk=config.noise_chunk,
    )
    times = [0.0]
    states = [u.copy()]
    sups = [_guard(model, u, config.blowup_threshold, 0.0, ids, config.seed)]
    for k in range(n_steps):
        drift = np.asarray(oracle(u), dtype=float)
        noise = stepper.noise(model.to_nodal(u), sampler.increments(k))
        u = stepper.step(u, drift, noise)
        t_next = (k + 1) * step
        sups.append(_guard(model, u, config.blowup_threshold, t_next, ids, config.seed))
        times.append(t_next)
        states.append(u.copy())
    return TrajectoryRecord(
        np.asarray(times), ids, slow=np.stack(states), slow_sup=np.stack(sups), slow_model=model,
    )


def increment_regularity_probe(
    trajectory: TrajectoryRecord,
    p: float = 2.0,
    theta_holder: float = 0.25,
    lags: Optional[Sequence[int]] = None,
    confidence: float = 0.95,
) -> RegularityFit:
    """
    时间增量正则性: 对 Ê|u(r+ℓ) − u(r)|_E^p 与 ℓ 做双对数回归, γ̂ = 斜率/p。

    Args:
        trajectory: 等间隔采样的慢路径。
        p: 矩的阶。
        theta_holder: 初值的 Hölder 指数 (报告中给出初值的离散 Hölder 半范数)。
        lags: 以采样间隔为单位的滞后, 默认 1, 2, 4, ... 不超过样本数的四分之一。
        confidence: 置信水平。
    """
    if trajectory.slow is None or trajectory.slow_model is None:
        raise InsufficientSamples("轨道缺少慢路径")
    path = trajectory.slow
    model = trajectory.slow_model
    m = path.shape[0]
    if lags is None:
        lags = []
        lag = 1
        while lag <= max(1, (m - 1) // 4):
            lags.append(lag)
            lag *= 2
    lags = [int(l) for l in lags if 0 < l < m]
    if len(lags) < 3:
        raise InsufficientSamples(f"增量回归至少需要 3 个滞后, 实际 {len(lags)} (样本数 {m})")
    dt = float(np.mean(np.diff(trajectory.times)))
    moments = []
    for lag in lags:
        diff = path[lag:] - path[:-lag]
        moments.append(float(np.mean(model.sup_norm(diff) ** p)))
    fit = log_log_fit(np.asarray(lags) * dt, np.asarray(moments))
    lo, hi = fit.slope_interval(confidence)
    initial = float(holder_seminorm(model.to_nodal(path[0, 0]), model.nodes, theta_holder))
    return RegularityFit(
        exponent=fit.slope / p,
        lower=lo / p,
        upper=hi / p,
        r_squared=fit.r_squared,
        p=p,
        theta_holder=theta_holder,
        initial_holder=initial,
        lags=[l * dt for l in lags],
        moments=moments,
    )
