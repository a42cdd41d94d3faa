"""
谱基上的 Q-Wiener 增量。

随机数基于计数器 (numpy Philox): 密钥由 (seed, channel, stream, branch) 组成,
计数器由步序号给出, 因此增量是 (seed, channel, stream, branch, step, mode) 的纯函数,
与求值顺序和进程数无关。
"""

from __future__ import annotations

import logging
import math
from typing import Dict, NamedTuple, Optional, Sequence, Tuple, TYPE_CHECKING

import numpy as np

from .constants import NOISE_CHUNK, Branch, NoiseChannel
from .exceptions import GridMismatch, InvalidParameter
from .spectral import FieldState, SpectralModel, TimeDependentOperator

if TYPE_CHECKING:
    from .coefficients import CoefficientSet

logger = logging.getLogger(__name__)

_TWO_POW_MINUS_53 = 2.0**-53
_WORDS_PER_BLOCK = 4


def _key(seed: int, channel: int, stream: int, branch: int) -> int:
    if not 0 <= stream < 2**55:
        raise InvalidParameter(f"流编号越界: {stream}")
    return (int(seed) << 64) | (int(channel) << 56) | (int(stream) << 1) | int(branch)


def _blocks_per_step(modes: int) -> int:
    return max(1, math.ceil(2 * modes / _WORDS_PER_BLOCK))


def _normals_from_words(words: np.ndarray, modes: int) -> np.ndarray:
    """Box–Muller (只取余弦分支), 每个正态数消耗两个 64 位字。"""
    u = ((words[..., : 2 * modes] >> np.uint64(11)).astype(np.float64) + 0.5) * _TWO_POW_MINUS_53
    u1 = u[..., 0::2]
    u2 = u[..., 1::2]
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def _branch_normals(seed: int, channel: int, stream: int, branch: int, local_start: int, count: int, modes: int) -> np.ndarray:
    blocks = _blocks_per_step(modes)
    bit_gen = np.random.Philox(key=_key(seed, channel, stream, branch), counter=local_start * blocks)
    words = bit_gen.random_raw(count * blocks * _WORDS_PER_BLOCK).reshape(count, blocks * _WORDS_PER_BLOCK)
    return _normals_from_words(words, modes)


def standard_normals(seed: int, channel: int, stream: int, start: int, count: int, modes: int) -> np.ndarray:
    """
    步序号 start..start+count−1 的标准正态数, 形状 (count, modes)。

    步 j ≥ 0 走 PLUS 分支 (局部序号 j); j < 0 走 MINUS 分支 (局部序号 −j−1)。
    """
    end = start + count
    parts = []
    if start < 0:
        neg_end = min(end, 0)
        # 局部序号从 −(neg_end−1)−1 到 −start−1, 逆序对应递增的 j
        lo = -neg_end
        hi = -start - 1
        neg = _branch_normals(seed, channel, stream, Branch.MINUS, lo, hi - lo + 1, modes)
        parts.append(neg[::-1])
    if end > 0:
        pos_start = max(start, 0)
        parts.append(_branch_normals(seed, channel, stream, Branch.PLUS, pos_start, end - pos_start, modes))
    return np.concatenate(parts, axis=0) if len(parts) > 1 else parts[0]


class NoiseSpec:
    """
    一条轨道的噪声: 谱模型 (提供 λ_k)、主种子、流编号与通道。
    """

    def __init__(self, model: SpectralModel, seed: int, stream: int = 0, channel: NoiseChannel = NoiseChannel.FAST):
        if model.noise_eigenvalues is None:
            raise InvalidParameter("谱模型缺少噪声特征值")
        self.model = model
        self.seed = int(seed)
        self.stream = int(stream)
        self.channel = NoiseChannel(channel)

    @property
    def eigenvalues(self) -> np.ndarray:
        return self.model.noise_eigenvalues

    def with_stream(self, stream: int) -> "NoiseSpec":
        return NoiseSpec(self.model, self.seed, stream, self.channel)

    def __repr__(self) -> str:
        return f"NoiseSpec(seed={self.seed}, stream={self.stream}, channel={self.channel.name})"


class WienerIncrementBlock(NamedTuple):
    dt: float
    step: int
    stream: int
    branch: Branch
    increments: np.ndarray


class StreamSelector(NamedTuple):
    stream: int
    branch: Branch
    local_index: Optional[int] = None


def sample_increments(spec: NoiseSpec, step: int, dt: float) -> WienerIncrementBlock:
    """
    第 step 步 [step·dt, (step+1)·dt) 的增量 Δ_k = λ_k √dt z_k。

    Args:
        spec: 噪声描述。
        step: 带符号的步序号, 负值走双边过程的负分支。
        dt: 时间步长, > 0。
    """
    if dt <= 0:
        raise InvalidParameter(f"dt 必须为正, 实际 {dt}")
    z = standard_normals(spec.seed, spec.channel, spec.stream, int(step), 1, spec.model.modes)[0]
    branch = Branch.PLUS if step >= 0 else Branch.MINUS
    return WienerIncrementBlock(float(dt), int(step), spec.stream, branch, spec.eigenvalues * math.sqrt(dt) * z)


def two_sided_stream(spec: NoiseSpec, t: float, dt: Optional[float] = None) -> StreamSelector:
    """
    w̄(t) = w₁(t) (t ≥ 0), w₂(−t) (t < 0): 按时间符号选择分支。给出 dt 时同时返回局部步序号。
    """
    branch = Branch.PLUS if t >= 0 else Branch.MINUS
    local = None
    if dt is not None:
        step = int(math.floor(t / dt + 1e-9))
        local = step if step >= 0 else -step - 1
    return StreamSelector(spec.stream, branch, local)


class IncrementSampler:
    """
    批量增量采样器: N 条流按块缓存, 每块 chunk 个细步。

    粗步 j 覆盖 [offset + j·dt, offset + (j+1)·dt), 由 refinement 个细步之和构成,
    因此步长 dt 与 dt/2 (refinement 加倍) 的运行共享同一布朗路径。

    Args:
        eigenvalues: λ_k, 形状 (K,)。
        seed: 主种子。
        channel: 通道。
        streams: 各成员的流编号, 可重复 (重复即共享噪声)。
        dt: 粗步长。
        time_offset: 网格原点。
        refinement: 每个粗步包含的细步数。
        chunk: 每次生成的细步数。
    """

    def __init__(
        self,
        eigenvalues: np.ndarray,
        seed: int,
        channel: NoiseChannel,
        streams: Sequence[int],
        dt: float,
        time_offset: float = 0.0,
        refinement: int = 1,
        chunk: int = NOISE_CHUNK,
    ):
        if dt <= 0:
            raise InvalidParameter(f"dt 必须为正, 实际 {dt}")
        if refinement < 1:
            raise InvalidParameter(f"refinement 必须 ≥ 1, 实际 {refinement}")
        self.eigenvalues = np.asarray(eigenvalues, dtype=float)
        self.modes = self.eigenvalues.size
        self.seed = int(seed)
        self.channel = NoiseChannel(channel)
        self.streams = np.asarray(streams, dtype=np.int64)
        self._unique, self._inverse = np.unique(self.streams, return_inverse=True)
        self.dt = float(dt)
        self.time_offset = float(time_offset)
        self.refinement = int(refinement)
        self.fine_dt = self.dt / self.refinement
        self.chunk = max(int(chunk), self.refinement)
        self._start: Optional[int] = None
        self._cache: Optional[np.ndarray] = None
        self._scale = self.eigenvalues * math.sqrt(self.fine_dt)

    def step_index(self, r: float) -> int:
        """时间 r 所在粗步的序号 round((r − offset)/dt)。"""
        return int(round((r - self.time_offset) / self.dt))

    def _fill(self, fine_start: int) -> None:
        per_stream = [
            standard_normals(self.seed, self.channel, int(s), fine_start, self.chunk, self.modes)
            for s in self._unique
        ]
        self._cache = np.stack(per_stream)[self._inverse]
        self._start = fine_start

    def normals(self, step: int) -> np.ndarray:
        """粗步 step 的细步标准正态数, 形状 (N, refinement, K)。"""
        fine = step * self.refinement
        if self._start is None or fine < self._start or fine + self.refinement > self._start + self.chunk:
            self._fill(fine)
        i = fine - self._start
        return self._cache[:, i : i + self.refinement]

    def increments(self, step: int) -> np.ndarray:
        """粗步 step 的增量, 形状 (N, K)。"""
        return np.sum(self.normals(step), axis=1) * self._scale

    def at(self, r: float) -> np.ndarray:
        return self.increments(self.step_index(r))


def stochastic_convolution(
    op: TimeDependentOperator,
    coeffs: "CoefficientSet",
    times: np.ndarray,
    path: Optional[np.ndarray],
    lam: float,
    eps: float,
    spec: NoiseSpec,
    streams: Optional[Sequence[int]] = None,
    refinement: int = 1,
) -> FieldState:
    """
    Γ_λ(v;s)(t) = ∫_s^t U_{λ,ε}(t,r)G₂(r,v(r))dw̄(r) 的左点 Itô 和。

    G₂(r_i, v(r_i))·dW_i 在配点上逐点相乘后投影到 K 个模, 再乘以 U 的逐模乘子。

    Args:
        op: 时变算子。
        coeffs: 系数集 (使用 g₂)。
        times: 均匀网格 r_0 = s, ..., r_m = t。
        path: v 在 r_0..r_{m−1} (或 r_0..r_m) 上的系数, 形状 (m[+1], N, K);
            g₂ 与状态无关时可为 None。
        lam: λ ≥ 0。
        eps: ε > 0。
        spec: 噪声描述。
        streams: 批量时各成员的流编号, 默认 [spec.stream]。
        refinement: 噪声细化倍数。
    """
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise GridMismatch("随机卷积至少需要两个时间点")
    steps = np.diff(times)
    dt = float(steps[0])
    if not np.allclose(steps, dt, rtol=1e-9, atol=1e-12):
        raise GridMismatch("随机卷积要求均匀时间网格")
    m = times.size - 1
    stream_ids = list(streams) if streams is not None else [spec.stream]
    n_members = len(stream_ids)
    model = op.model
    if path is not None:
        path = np.asarray(path, dtype=float)
        if path.shape[0] not in (m, m + 1):
            raise GridMismatch(f"路径样本数 {path.shape[0]} 与增量网格 {m} 不符")
        if path.ndim == 2:
            path = path[:, None, :]
    elif not coeffs.g2.state_free:
        raise GridMismatch("g₂ 依赖状态时必须提供路径")

    sampler = IncrementSampler(spec.eigenvalues, spec.seed, spec.channel, stream_ids, dt, refinement=refinement)
    t_end = times[-1]
    gint = np.asarray(op.gamma_integral(times[:-1], np.full(m, t_end)), dtype=float)
    mult = np.exp(-(np.multiply.outer(gint, model.alphas) + lam * (t_end - times[:-1])[:, None]) / eps)

    total = np.zeros((n_members, model.modes))
    for i in range(m):
        r = times[i]
        dw = sampler.at(r)
        state = None if path is None else model.to_nodal(path[i])
        g = coeffs.g2(r, model.nodes, None, state)
        term = model.project(np.broadcast_to(g, (n_members, model.grid.n_nodes)) * model.to_nodal(dw))
        total += mult[i] * term
    if streams is None:
        total = total[0]
    return FieldState.from_coeffs(model, total)
