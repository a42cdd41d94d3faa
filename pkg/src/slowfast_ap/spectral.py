"""
空间离散: 一维区间 (0, L) 上椭圆算子的特征基、半群与发展算子作用, 以及复合 (Nemytskii) 算子。

所有算子在谱系数上都是逐模乘子。场的批量形式为 (..., K) 的系数数组或 (..., n) 的节点值数组。
"""

from __future__ import annotations

import math
from typing import TYPE_CHECKING, Callable, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.integrate import simpson, trapezoid

from .constants import MIN_NODES, ORTHONORMALITY_TOL, BoundaryKind, NemytskiiKind, SpatialProfile
from .exceptions import (
    GridMismatch,
    HypothesisViolation,
    InsufficientSamples,
    InvalidParameter,
    InvalidTimeInterval,
    RepresentationMismatch,
    UnsupportedBoundary,
)
from .signals import APSignal

if TYPE_CHECKING:
    from .coefficients import CoefficientSet
    from .models import ModelSpec


class SpatialGrid:
    """
    均匀配点网格。

    Dirichlet: 内点 ξ_j = jL/(n+1), 权重 L/(n+1);
    Neumann: 含端点 ξ_j = jL/(n−1), 梯形权重。两种情形下离散内积使特征函数精确正交。
    """

    def __init__(self, boundary: BoundaryKind, length: float, n_nodes: int):
        boundary = _as_boundary(boundary)
        if length <= 0:
            raise InvalidParameter(f"区间长度必须为正, 实际 {length}")
        if n_nodes < 3:
            raise InvalidParameter(f"节点数过少: {n_nodes}")
        self.boundary = boundary
        self.length = float(length)
        self.n_nodes = int(n_nodes)
        if boundary == BoundaryKind.DIRICHLET:
            h = self.length / (self.n_nodes + 1)
            self.nodes = h * np.arange(1, self.n_nodes + 1, dtype=float)
            self.weights = np.full(self.n_nodes, h)
        else:
            h = self.length / (self.n_nodes - 1)
            self.nodes = h * np.arange(self.n_nodes, dtype=float)
            self.weights = np.full(self.n_nodes, h)
            self.weights[0] = self.weights[-1] = h / 2.0
        self.spacing = h

    def __eq__(self, other) -> bool:
        if not isinstance(other, SpatialGrid):
            return NotImplemented
        return (
            self.boundary == other.boundary
            and self.length == other.length
            and self.n_nodes == other.n_nodes
        )

    def __hash__(self) -> int:
        return hash((self.boundary, self.length, self.n_nodes))

    def inner(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """离散 L² 内积 Σ w_j f(ξ_j) g(ξ_j), 对最后一维求和。"""
        return np.sum(f * g * self.weights, axis=-1)


def _as_boundary(boundary) -> BoundaryKind:
    try:
        return BoundaryKind(boundary)
    except ValueError:
        raise UnsupportedBoundary(f"不支持的边界类型: {boundary}")


class SpectralModel:
    """
    特征对 (α_k, e_k)、噪声特征值 λ_k 与噪声指数 (ρ, β)。

    A e_k = −α_k e_k, Q e_k = λ_k e_k 在构造时成立。
    """

    def __init__(
        self,
        grid: SpatialGrid,
        modes: int,
        alphas: np.ndarray,
        basis: np.ndarray,
        dbasis: np.ndarray,
        noise_eigenvalues: Optional[np.ndarray] = None,
        rho: Optional[float] = None,
        beta: Optional[float] = None,
    ):
        self.grid = grid
        self.boundary = grid.boundary
        self.modes = int(modes)
        self.alphas = np.asarray(alphas, dtype=float)
        self.basis = np.asarray(basis, dtype=float)
        self.dbasis = np.asarray(dbasis, dtype=float)
        self.noise_eigenvalues = None if noise_eigenvalues is None else np.asarray(noise_eigenvalues, dtype=float)
        self.rho = rho
        self.beta = beta
        # 投影矩阵: coeffs = nodal @ projector
        self._projector = (self.basis * grid.weights).T
        self.sup_norms = np.max(np.abs(self.basis), axis=1)

    @property
    def length(self) -> float:
        return self.grid.length

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.nodes

    def with_noise(self, noise_eigenvalues: Sequence[float], rho: Optional[float], beta: float) -> "SpectralModel":
        """
        附加噪声特征值与噪声指数, 检查 β(ρ−2)/ρ < 1 以及 κ, ζ 有限。

        Args:
            noise_eigenvalues: λ_k, 长度 K。
            rho: ρ ∈ (2, ∞], None 表示 ∞。
            beta: β > 0。
        """
        lam = np.asarray(noise_eigenvalues, dtype=float)
        if lam.shape != (self.modes,):
            raise InvalidParameter(f"噪声特征值长度 {lam.size} 与模数 {self.modes} 不符")
        if np.any(lam < 0):
            raise InvalidParameter("噪声特征值必须非负")
        rho_value = math.inf if rho is None else float(rho)
        if rho_value <= 2:
            raise HypothesisViolation(f"ρ 必须大于 2, 实际 {rho_value}")
        if beta is None or beta <= 0:
            raise HypothesisViolation(f"β 必须为正, 实际 {beta}")
        ratio = beta if math.isinf(rho_value) else beta * (rho_value - 2.0) / rho_value
        if ratio >= 1.0:
            raise HypothesisViolation(f"违反 β(ρ−2)/ρ < 1 (比值 {ratio:.4f})")
        model = SpectralModel(
            self.grid, self.modes, self.alphas, self.basis, self.dbasis, lam, rho_value, float(beta)
        )
        if not (math.isfinite(model.kappa) and math.isfinite(model.zeta)):
            raise HypothesisViolation("κ 或 ζ 在保留模上不有限")
        return model

    @property
    def regularity_ratio(self) -> float:
        if self.rho is None or self.beta is None:
            return float("nan")
        return self.beta if math.isinf(self.rho) else self.beta * (self.rho - 2.0) / self.rho

    @property
    def kappa(self) -> float:
        """κ = Σ λ_k^ρ |e_k|_∞²; ρ = ∞ 时取 max λ_k 作为算子范数。"""
        if self.noise_eigenvalues is None or self.rho is None:
            return float("nan")
        if math.isinf(self.rho):
            return float(np.max(self.noise_eigenvalues, initial=0.0))
        return float(np.sum(self.noise_eigenvalues**self.rho * self.sup_norms**2))

    @property
    def zeta(self) -> float:
        """ζ = Σ_{α_k>0} α_k^{−β} |e_k|_∞²。"""
        if self.beta is None:
            return float("nan")
        positive = self.alphas > 0
        return float(np.sum(self.alphas[positive] ** (-self.beta) * self.sup_norms[positive] ** 2))

    def gram(self) -> np.ndarray:
        return self.basis @ self._projector

    def orthonormality_error(self) -> float:
        return float(np.max(np.abs(self.gram() - np.eye(self.modes))))

    def to_nodal(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs, dtype=float) @ self.basis

    def derivative_nodal(self, coeffs: np.ndarray) -> np.ndarray:
        return np.asarray(coeffs, dtype=float) @ self.dbasis

    def project(self, nodal: np.ndarray) -> np.ndarray:
        return np.asarray(nodal, dtype=float) @ self._projector

    def sup_norm(self, coeffs: np.ndarray) -> np.ndarray:
        """|u|_E 在配点上的最大值。"""
        return np.max(np.abs(self.to_nodal(coeffs)), axis=-1)

    def l2_norm(self, coeffs: np.ndarray) -> np.ndarray:
        return np.sqrt(np.sum(np.asarray(coeffs) ** 2, axis=-1))

    def constant_coefficients(self) -> np.ndarray:
        """常数场 1 在本基底上的投影 ⟨1, e_k⟩。"""
        return self.project(np.ones(self.grid.n_nodes))


def eigenpairs(boundary, K: int, L: float = math.pi, n_nodes: Optional[int] = None) -> SpectralModel:
    """
    一维二阶导数算子的特征对 (不含噪声)。

    Dirichlet: α_k = (kπ/L)², e_k = √(2/L) sin(kπξ/L), k = 1..K;
    Neumann: α_k = (kπ/L)², k = 0..K−1, e_0 = 1/√L, e_k = √(2/L) cos(kπξ/L)。

    Args:
        boundary: 边界类型。
        K: 模数, ≥ 1。
        L: 区间长度, > 0。
        n_nodes: 配点数, 默认 max(2K+1, 64)。

    Returns:
        SpectralModel 骨架。
    """
    boundary = _as_boundary(boundary)
    if K < 1:
        raise InvalidParameter(f"模数必须 ≥ 1, 实际 {K}")
    if L <= 0:
        raise InvalidParameter(f"区间长度必须为正, 实际 {L}")
    n = n_nodes if n_nodes is not None else max(2 * K + 1, MIN_NODES)
    if n < 2 * K + 1:
        raise InvalidParameter(f"节点数 {n} 小于 2K+1 = {2 * K + 1}")
    grid = SpatialGrid(boundary, L, n)
    xi = grid.nodes
    if boundary == BoundaryKind.DIRICHLET:
        k = np.arange(1, K + 1, dtype=float)
        freq = k * math.pi / L
        basis = math.sqrt(2.0 / L) * np.sin(np.outer(freq, xi))
        dbasis = math.sqrt(2.0 / L) * freq[:, None] * np.cos(np.outer(freq, xi))
    else:
        k = np.arange(0, K, dtype=float)
        freq = k * math.pi / L
        amp = np.where(k == 0, math.sqrt(1.0 / L), math.sqrt(2.0 / L))
        basis = amp[:, None] * np.cos(np.outer(freq, xi))
        dbasis = -amp[:, None] * freq[:, None] * np.sin(np.outer(freq, xi))
    model = SpectralModel(grid, K, freq**2, basis, dbasis)
    err = model.orthonormality_error()
    if err > ORTHONORMALITY_TOL:
        raise GridMismatch(f"离散 Gram 矩阵偏离单位阵 {err:.2e}")
    return model


def build_spectral_model(spec: "ModelSpec", n_nodes: Optional[int] = None) -> SpectralModel:
    """由 ModelSpec 构造带噪声的完整模型; n_nodes 可覆盖以与另一模型共享网格。"""
    nodes = n_nodes if n_nodes is not None else spec.resolved_nodes
    skeleton = eigenpairs(spec.boundary, spec.modes, spec.length, nodes)
    if spec.noise_eigenvalues is not None:
        lam = np.asarray(spec.noise_eigenvalues, dtype=float)
    else:
        lam = spec.noise_scale * np.arange(1, spec.modes + 1, dtype=float) ** (-spec.noise_decay)
    return skeleton.with_noise(lam, spec.rho, spec.beta)


class FieldState:
    """
    区间上的场, 同时持有节点与谱两种表示, 按需转换并缓存。

    支持批量: coeffs 形状 (..., K), nodal 形状 (..., n)。
    """

    def __init__(self, model: SpectralModel, coeffs: Optional[np.ndarray] = None, nodal: Optional[np.ndarray] = None):
        if coeffs is None and nodal is None:
            raise RepresentationMismatch("FieldState 至少需要一种表示")
        self.model = model
        self._coeffs = None if coeffs is None else np.asarray(coeffs, dtype=float)
        self._nodal = None if nodal is None else np.asarray(nodal, dtype=float)
        if self._coeffs is not None and self._coeffs.shape[-1] != model.modes:
            raise RepresentationMismatch(f"系数维数 {self._coeffs.shape[-1]} 与模数 {model.modes} 不符")
        if self._nodal is not None and self._nodal.shape[-1] != model.grid.n_nodes:
            raise RepresentationMismatch(f"节点维数 {self._nodal.shape[-1]} 与网格 {model.grid.n_nodes} 不符")

    @classmethod
    def from_coeffs(cls, model: SpectralModel, coeffs) -> "FieldState":
        return cls(model, coeffs=np.asarray(coeffs, dtype=float))

    @classmethod
    def from_nodal(cls, model: SpectralModel, nodal) -> "FieldState":
        return cls(model, nodal=np.asarray(nodal, dtype=float))

    @classmethod
    def from_function(cls, model: SpectralModel, func: Callable[[np.ndarray], np.ndarray]) -> "FieldState":
        return cls(model, nodal=np.asarray(func(model.nodes), dtype=float))

    @classmethod
    def zeros(cls, model: SpectralModel, batch: Tuple[int, ...] = ()) -> "FieldState":
        return cls(model, coeffs=np.zeros((*batch, model.modes)))

    @property
    def spectral_current(self) -> bool:
        return self._coeffs is not None

    @property
    def nodal_current(self) -> bool:
        return self._nodal is not None

    @property
    def coeffs(self) -> np.ndarray:
        if self._coeffs is None:
            self._coeffs = self.model.project(self._nodal)
        return self._coeffs

    @property
    def nodal(self) -> np.ndarray:
        if self._nodal is None:
            self._nodal = self.model.to_nodal(self._coeffs)
        return self._nodal

    @property
    def batch_shape(self) -> Tuple[int, ...]:
        arr = self._coeffs if self._coeffs is not None else self._nodal
        return tuple(arr.shape[:-1])

    def sup_norm(self) -> np.ndarray:
        return np.max(np.abs(self.nodal), axis=-1)

    def l2_norm(self) -> np.ndarray:
        return np.sqrt(self.model.grid.inner(self.nodal, self.nodal))

    def roundtrip(self) -> "FieldState":
        """节点 → 谱 → 节点, 带限场应精确重现。"""
        return FieldState.from_coeffs(self.model, self.model.project(self.nodal))

    def __repr__(self) -> str:
        return f"FieldState(modes={self.model.modes}, batch={self.batch_shape})"


Signal = Union[APSignal, Callable[[np.ndarray], np.ndarray]]


class TimeDependentOperator:
    """
    A₂(t) = γ(t)A₂ + L(t), 其中 L(t)u = l(t)·profile(ξ)·∂_ξ u。

    γ(t,s) = ∫_s^t γ(r)dr: APSignal 用闭式原函数, 其他可调用对象用步长 dt/4 的复合 Simpson。
    """

    def __init__(
        self,
        model: SpectralModel,
        gamma: Signal,
        drift: Optional[Signal] = None,
        profile: SpatialProfile = SpatialProfile.CONSTANT,
        dt: float = 1e-3,
        check_window: Tuple[float, float] = (0.0, 200.0),
    ):
        self.model = model
        self.gamma = gamma
        self.drift = drift if drift is not None else APSignal.constant(0.0)
        self.profile = SpatialProfile(profile)
        self.dt = dt
        self.profile_values = _profile_values(self.profile, model.nodes, model.length)
        self.gamma_bounds = self.check_bounds(np.linspace(*check_window, 20001))

    @property
    def has_first_order(self) -> bool:
        return not (isinstance(self.drift, APSignal) and self.drift.is_constant and self.drift.offset == 0.0)

    @property
    def gamma_constant(self) -> Optional[float]:
        if isinstance(self.gamma, APSignal) and self.gamma.is_constant:
            return self.gamma.offset
        return None

    def check_bounds(self, t_samples: np.ndarray) -> Tuple[float, float]:
        """γ₀ ≤ γ(t) ≤ γ₁ 且 γ₀ > 0; l 有界。返回 (γ₀, γ₁)。"""
        if isinstance(self.gamma, APSignal) and self.gamma.lower_bound > 0:
            lo, hi = self.gamma.lower_bound, self.gamma.bound
        else:
            values = np.asarray(self.gamma(t_samples), dtype=float)
            lo, hi = float(np.min(values)), float(np.max(values))
        if not (np.isfinite(lo) and np.isfinite(hi)) or lo <= 0:
            raise HypothesisViolation(f"γ(t) 的下界必须为正, 采样得 γ₀ = {lo}")
        drift_values = np.asarray(self.drift(t_samples), dtype=float)
        if not np.all(np.isfinite(drift_values)):
            raise HypothesisViolation("l(t) 无界或非有限")
        return (float(lo), float(hi))

    def gamma_integral(self, s, t):
        """γ(t,s) = ∫_s^t γ(r) dr, 对数组逐点计算。"""
        if isinstance(self.gamma, APSignal):
            return self.gamma.integral(s, t)
        s_arr, t_arr = np.broadcast_arrays(np.asarray(s, dtype=float), np.asarray(t, dtype=float))
        out = np.empty(s_arr.shape)
        h = self.dt / 4.0
        for idx in np.ndindex(s_arr.shape):
            a, b = s_arr[idx], t_arr[idx]
            if b == a:
                out[idx] = 0.0
                continue
            n = max(2, int(math.ceil(abs(b - a) / h)))
            n += n % 2
            r = np.linspace(a, b, n + 1)
            out[idx] = simpson(np.asarray(self.gamma(r), dtype=float), x=r)
        return out if out.shape else float(out)

    def multiplier(self, s: float, t: float, lam: float = 0.0, eps: float = 1.0) -> np.ndarray:
        """U_{λ,ε}(t,s) 的逐模乘子 exp(−(γ(t,s)α_k + λ(t−s))/ε)。"""
        if t < s:
            raise InvalidTimeInterval(f"要求 s ≤ t, 实际 s={s}, t={t}")
        if eps <= 0:
            raise InvalidParameter(f"ε 必须为正, 实际 {eps}")
        g = float(self.gamma_integral(s, t))
        return np.exp(-(g * self.model.alphas + lam * (t - s)) / eps)

    def drift_value(self, r: float) -> float:
        return float(self.drift(r))

    def first_order_nodal(self, r: float, coeffs: np.ndarray) -> np.ndarray:
        """L(r)u 的节点值 l(r)·profile(ξ)·∂_ξ u。"""
        return self.drift_value(r) * self.profile_values * self.model.derivative_nodal(coeffs)

    def apply_first_order(self, r: float, coeffs: np.ndarray) -> np.ndarray:
        """L(r)u 投影回 K 个模。"""
        return self.model.project(self.first_order_nodal(r, coeffs))


def _profile_values(profile: SpatialProfile, nodes: np.ndarray, length: float) -> np.ndarray:
    if profile == SpatialProfile.CONSTANT:
        return np.ones_like(nodes)
    if profile == SpatialProfile.SINE:
        return np.sin(math.pi * nodes / length)
    return np.cos(math.pi * nodes / length)


def semigroup_apply(model: SpectralModel, field: FieldState, t: float, shift: float = 0.0) -> FieldState:
    """
    e^{tA − λt} 的作用: c_k ↦ e^{−(α_k+λ)t} c_k。

    Args:
        model: 谱模型。
        field: 输入场。
        t: 时间, ≥ 0。
        shift: 平移 λ。
    """
    if t < 0:
        raise InvalidTimeInterval(f"半群时间必须非负, 实际 {t}")
    _same_model(model, field)
    return FieldState.from_coeffs(model, np.exp(-(model.alphas + shift) * t) * field.coeffs)


def evolution_apply(op: TimeDependentOperator, field: FieldState, s: float, t: float, lam: float = 0.0, eps: float = 1.0) -> FieldState:
    """
    U_{λ,ε}(t,s) = exp((1/ε)γ(t,s)A₂ − (λ/ε)(t−s)) 的作用。

    Args:
        op: 时变算子。
        field: 输入场。
        s: 起始时间。
        t: 终止时间, s ≤ t。
        lam: λ ≥ 0。
        eps: ε > 0。
    """
    _same_model(op.model, field)
    return FieldState.from_coeffs(op.model, op.multiplier(s, t, lam, eps) * field.coeffs)


def psi_convolution(
    op: TimeDependentOperator,
    times: np.ndarray,
    path: Union[np.ndarray, Sequence[FieldState]],
    lam: float = 0.0,
    eps: float = 1.0,
) -> FieldState:
    """
    ψ_{λ,ε}(u;s)(t) = (1/ε)∫_s^t U_{λ,ε}(t,ρ)L(ρ)u(ρ)dρ 的梯形离散, s = times[0], t = times[-1]。

    Args:
        op: 时变算子。
        times: 均匀时间网格 (m,)。
        path: 各网格点上的 u, 系数数组 (m, ..., K) 或 FieldState 序列。
        lam: λ ≥ 0。
        eps: ε > 0。
    """
    times = np.asarray(times, dtype=float)
    if times.size < 2:
        raise InsufficientSamples("ψ 卷积至少需要 2 个时间样本")
    if eps <= 0:
        raise InvalidParameter(f"ε 必须为正, 实际 {eps}")
    coeffs = np.stack([p.coeffs for p in path]) if not isinstance(path, np.ndarray) else path
    if coeffs.shape[0] != times.size:
        raise GridMismatch(f"路径样本数 {coeffs.shape[0]} 与时间网格 {times.size} 不符")
    t_end = times[-1]
    g = np.asarray(op.gamma_integral(times, np.full_like(times, t_end)), dtype=float)
    mult = np.exp(-(np.multiply.outer(g, op.model.alphas) + lam * (t_end - times)[:, None]) / eps)
    lu = np.stack([op.apply_first_order(r, coeffs[i]) for i, r in enumerate(times)])
    extra = (1,) * (lu.ndim - 2)
    integrand = mult.reshape(mult.shape[0], *extra, mult.shape[1]) * lu
    return FieldState.from_coeffs(op.model, trapezoid(integrand, times, axis=0) / eps)


def nemytskii_apply(
    coeffs: "CoefficientSet",
    which: NemytskiiKind,
    t: float,
    x: FieldState,
    y: Optional[FieldState] = None,
    spectral: bool = False,
) -> FieldState:
    """
    逐点复合: B₁(x,y)(ξ) = b₁(ξ,x(ξ),y(ξ)), B₂(t,x,y), G₁(x), G₂(t,y)。

    Args:
        coeffs: 系数集。
        which: 算子种类。
        t: 时间 (B₂, G₂ 使用)。
        x: 慢场 (G₂ 时作为快场使用, 可省略 y)。
        y: 快场。
        spectral: True 时投影回 x 的模型的 K 个模。
    """
    which = NemytskiiKind(which)
    if y is not None and y.model.grid != x.model.grid:
        raise RepresentationMismatch("x 与 y 不在同一配点网格上")
    xi = x.model.nodes
    if which in (NemytskiiKind.B1, NemytskiiKind.B2) and y is None:
        raise RepresentationMismatch(f"{which} 需要快场 y")
    if which == NemytskiiKind.B1:
        values = coeffs.b1(t, xi, x.nodal, y.nodal)
    elif which == NemytskiiKind.B2:
        values = coeffs.b2(t, xi, x.nodal, y.nodal)
    elif which == NemytskiiKind.G1:
        values = coeffs.g1(t, xi, x.nodal, None)
    else:
        field = y if y is not None else x
        values = coeffs.g2(t, xi, None, field.nodal)
    values = np.broadcast_to(values, np.broadcast_shapes(np.shape(values), x.nodal.shape)).copy()
    out = FieldState.from_nodal(x.model, values)
    if spectral:
        target = y.model if (which == NemytskiiKind.B2 and y is not None) else x.model
        return FieldState.from_coeffs(target, target.project(values))
    return out


def _same_model(model: SpectralModel, field: FieldState) -> None:
    if field.model.modes != model.modes or field.model.grid != model.grid:
        raise RepresentationMismatch("场与模型的表示不一致")
