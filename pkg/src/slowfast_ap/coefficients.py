"""
反应与扩散系数的注册表。

所有系数函数统一签名 f(t, ξ, σ₁, σ₂), 不用到的参数被忽略:
b₁(ξ, σ₁, σ₂), b₂(t, ξ, σ₁, σ₂), g₁(ξ, σ₁), g₂(t, ξ, σ₂)。
"""

from __future__ import annotations

import math
from fractions import Fraction
from typing import Callable, Dict, Optional, Tuple

import numpy as np

from .constants import SpatialProfile
from .exceptions import ConfigValidationError, InvalidParameter
from .models import CoefficientSpec, DissipativityReport, PeriodicityReport, TermSpec
from .signals import APSignal

CoefficientFunc = Callable[[float, np.ndarray, Optional[np.ndarray], Optional[np.ndarray]], np.ndarray]


class Coefficient:
    """
    单个注册系数及其元数据。

    Args:
        name: 注册名。
        func: 逐点函数 f(t, ξ, σ₁, σ₂)。
        growth: 增长指数 (b₁ 的 m₁, b₂ 的 m₂)。
        lipschitz: 关于状态的全局 Lipschitz 常数, 未知或无界时为 None。
        uses_slow: 是否依赖 σ₁。
        uses_fast: 是否依赖 σ₂。
        signal: 时间依赖所用的 APSignal。
        damping: 线性阻尼 d, f = −d·σ₂ + remainder, 由积分器并入指数因子。
        remainder: 去掉 −d·σ₂ 后的部分; 缺省时由 func 反推。
    """

    def __init__(
        self,
        name: str,
        func: CoefficientFunc,
        growth: float = 1.0,
        lipschitz: Optional[float] = None,
        uses_slow: bool = True,
        uses_fast: bool = True,
        signal: Optional[APSignal] = None,
        params: Optional[Dict[str, float]] = None,
        damping: float = 0.0,
        remainder: Optional[CoefficientFunc] = None,
    ):
        self.name = name
        self.func = func
        self.growth = growth
        self.lipschitz = lipschitz
        self.uses_slow = uses_slow
        self.uses_fast = uses_fast
        self.signal = signal
        self.params = dict(params or {})
        self.damping = float(damping)
        self.remainder = remainder

    def __call__(self, t, xi, s1, s2):
        return self.func(t, xi, s1, s2)

    def nonlinear(self, t, xi, s1, s2):
        """f + d·σ₂, 即显式处理的部分。"""
        if self.remainder is not None:
            return self.remainder(t, xi, s1, s2)
        if self.damping == 0.0:
            return self.func(t, xi, s1, s2)
        return self.func(t, xi, s1, s2) + self.damping * s2

    @property
    def state_free(self) -> bool:
        return not (self.uses_slow or self.uses_fast)

    def __repr__(self) -> str:
        return f"Coefficient({self.name!r}, params={self.params})"


def _signal_or(spec: TermSpec, default: float) -> APSignal:
    return spec.signal if spec.signal is not None else APSignal.constant(default)


def _param(spec: TermSpec, key: str, default: float) -> float:
    return float(spec.params.get(key, default))


# --- b₁ -------------------------------------------------------------------


def _b1_linear(spec: TermSpec) -> Coefficient:
    p, q, r = _param(spec, "p", 0.0), _param(spec, "q", 1.0), _param(spec, "r", 0.0)
    return Coefficient(
        "linear",
        lambda t, xi, s1, s2: p * s1 + q * s2 + r,
        growth=1.0,
        lipschitz=max(abs(p), abs(q)),
        uses_slow=p != 0.0,
        uses_fast=q != 0.0,
        params={"p": p, "q": q, "r": r},
    )


def _b1_cubic(spec: TermSpec) -> Coefficient:
    a, p, q = _param(spec, "a", 1.0), _param(spec, "p", 1.0), _param(spec, "q", 0.0)
    return Coefficient(
        "cubic",
        lambda t, xi, s1, s2: -a * s1**3 + p * s1 + q * s2,
        growth=3.0,
        uses_fast=q != 0.0,
        params={"a": a, "p": p, "q": q},
    )


def _b1_fitzhugh_nagumo(spec: TermSpec) -> Coefficient:
    a, q = _param(spec, "a", 0.1), _param(spec, "q", 1.0)
    return Coefficient(
        "fitzhugh_nagumo",
        lambda t, xi, s1, s2: s1 * (1.0 - s1) * (s1 - a) - q * s2,
        growth=3.0,
        uses_fast=q != 0.0,
        params={"a": a, "q": q},
    )


# --- b₂ -------------------------------------------------------------------


def _b2_linear(spec: TermSpec) -> Coefficient:
    d = _param(spec, "d", 1.0)
    c = _signal_or(spec, _param(spec, "c", 1.0))
    return Coefficient(
        "linear",
        lambda t, xi, s1, s2: -d * s2 + c(t) * s1,
        growth=1.0,
        lipschitz=abs(d),
        uses_slow=not (c.is_constant and c.offset == 0.0),
        signal=c,
        params={"d": d},
        damping=d,
        remainder=lambda t, xi, s1, s2: c(t) * s1,
    )


def _b2_cubic(spec: TermSpec) -> Coefficient:
    a, d = _param(spec, "a", 1.0), _param(spec, "d", 1.0)
    c = _signal_or(spec, _param(spec, "c", 1.0))
    return Coefficient(
        "cubic",
        lambda t, xi, s1, s2: -a * s2**3 - d * s2 + c(t) * s1,
        growth=3.0,
        uses_slow=not (c.is_constant and c.offset == 0.0),
        signal=c,
        params={"a": a, "d": d},
        damping=d,
        remainder=lambda t, xi, s1, s2: -a * s2**3 + c(t) * s1,
    )


# --- g₁, g₂ ----------------------------------------------------------------


def _g1_constant(spec: TermSpec) -> Coefficient:
    g0 = _param(spec, "g0", 0.0)
    return Coefficient(
        "constant",
        lambda t, xi, s1, s2: np.full_like(np.asarray(xi, dtype=float), g0),
        growth=0.0,
        lipschitz=0.0,
        uses_slow=False,
        uses_fast=False,
        params={"g0": g0},
    )


def _g1_bounded_lipschitz(spec: TermSpec) -> Coefficient:
    g0, g1 = _param(spec, "g0", 0.1), _param(spec, "g1", 0.05)
    return Coefficient(
        "bounded_lipschitz",
        lambda t, xi, s1, s2: g0 + g1 * np.sin(s1),
        growth=0.0,
        lipschitz=abs(g1),
        uses_fast=False,
        params={"g0": g0, "g1": g1},
    )


def _g2_constant(spec: TermSpec) -> Coefficient:
    g0 = _param(spec, "g0", 0.0)
    s = _signal_or(spec, 1.0)
    return Coefficient(
        "constant",
        lambda t, xi, s1, s2: np.full_like(np.asarray(xi, dtype=float), g0 * s(t)),
        growth=0.0,
        lipschitz=0.0,
        uses_slow=False,
        uses_fast=False,
        signal=s,
        params={"g0": g0},
    )


def _g2_bounded_lipschitz(spec: TermSpec) -> Coefficient:
    g0, g1 = _param(spec, "g0", 0.1), _param(spec, "g1", 0.05)
    s = _signal_or(spec, 1.0)
    return Coefficient(
        "bounded_lipschitz",
        lambda t, xi, s1, s2: s(t) * (g0 + g1 * np.sin(s2)),
        growth=0.0,
        lipschitz=abs(g1) * s.bound,
        uses_slow=False,
        signal=s,
        params={"g0": g0, "g1": g1},
    )


REGISTRY: Dict[str, Dict[str, Callable[[TermSpec], Coefficient]]] = {
    "b1": {
        "linear": _b1_linear,
        "cubic": _b1_cubic,
        "fitzhugh_nagumo": _b1_fitzhugh_nagumo,
    },
    "b2": {
        "linear": _b2_linear,
        "cubic": _b2_cubic,
    },
    "g1": {
        "constant": _g1_constant,
        "bounded_lipschitz": _g1_bounded_lipschitz,
    },
    "g2": {
        "constant": _g2_constant,
        "bounded_lipschitz": _g2_bounded_lipschitz,
    },
}


def build_term(role: str, spec: TermSpec) -> Coefficient:
    try:
        builder = REGISTRY[role][spec.kind]
    except KeyError:
        known = ", ".join(sorted(REGISTRY.get(role, {})))
        raise ConfigValidationError(f"{role} 的系数类型 '{spec.kind}' 未注册 (可选: {known})")
    return builder(spec)


class CoefficientSet:
    """
    b₁, b₂, g₁, g₂ 与 γ(t)、l(t)·profile(ξ) 的集合, 以及增长元数据。
    """

    def __init__(
        self,
        b1: Coefficient,
        b2: Coefficient,
        g1: Coefficient,
        g2: Coefficient,
        gamma: APSignal,
        drift: APSignal,
        drift_profile: SpatialProfile = SpatialProfile.CONSTANT,
        radius: Optional[float] = None,
    ):
        self.b1 = b1
        self.b2 = b2
        self.g1 = g1
        self.g2 = g2
        self.gamma = gamma
        self.drift = drift
        self.drift_profile = SpatialProfile(drift_profile)
        self.radius = radius

    @property
    def m1(self) -> float:
        return self.b1.growth

    @property
    def m2(self) -> float:
        return self.b2.growth

    @property
    def theta_growth(self) -> float:
        """B̄ 增长估计中 |x|^{θ} 的指数, 取 b₂ 对慢变量的线性依赖下的 1。"""
        return 1.0 if self.b2.uses_slow else 0.0

    @property
    def lipschitz_g2(self) -> float:
        return self.g2.lipschitz if self.g2.lipschitz is not None else math.inf

    @property
    def drift_is_zero(self) -> bool:
        return self.drift.is_constant and self.drift.offset == 0.0

    def truncated(self, n: float) -> "CoefficientSet":
        """在 |σ₁| = n 处截断 b₁, b₂, g₁ 的慢变量 (一维中径向截断即 clip)。"""
        if n <= 0:
            raise InvalidParameter(f"截断半径必须为正, 实际 {n}")

        def clamp(term: Coefficient) -> Coefficient:
            if not term.uses_slow:
                return term
            func, rest = term.func, term.remainder
            return Coefficient(
                term.name,
                lambda t, xi, s1, s2: func(t, xi, np.clip(s1, -n, n), s2),
                growth=term.growth,
                lipschitz=term.lipschitz,
                uses_slow=True,
                uses_fast=term.uses_fast,
                signal=term.signal,
                params=term.params,
                damping=term.damping,
                remainder=None if rest is None else (lambda t, xi, s1, s2: rest(t, xi, np.clip(s1, -n, n), s2)),
            )

        return CoefficientSet(
            clamp(self.b1), clamp(self.b2), clamp(self.g1), self.g2,
            self.gamma, self.drift, self.drift_profile, radius=float(n),
        )


def build_coefficients(spec: CoefficientSpec) -> CoefficientSet:
    return CoefficientSet(
        b1=build_term("b1", spec.b1),
        b2=build_term("b2", spec.b2),
        g1=build_term("g1", spec.g1),
        g2=build_term("g2", spec.g2),
        gamma=spec.gamma,
        drift=spec.drift,
        drift_profile=spec.drift_profile,
    )


def check_dissipativity(
    coeffs: CoefficientSet,
    t_samples: np.ndarray,
    sigma_grid: np.ndarray,
    slow_grid: Optional[np.ndarray] = None,
    tol: float = 1e-12,
) -> DissipativityReport:
    """
    单调性检查 (b₂(t,ξ,σ₁,σ₂) − b₂(t,ξ,σ₁,ρ₂))(σ₂ − ρ₂) ≤ 0, 在 (t, σ₁, σ₂, ρ₂) 的采样网格上。
    """
    t_samples = np.asarray(t_samples, dtype=float)
    sigma = np.asarray(sigma_grid, dtype=float)
    slow = np.asarray(slow_grid if slow_grid is not None else sigma_grid[:: max(1, sigma.size // 5)], dtype=float)
    s2, r2 = np.meshgrid(sigma, sigma, indexing="ij")
    xi = np.zeros(1)
    worst = -np.inf
    for t in t_samples:
        for s1 in slow:
            full = np.full_like(s2, s1)
            diff = coeffs.b2(t, xi, full, s2) - coeffs.b2(t, xi, full, r2)
            worst = max(worst, float(np.max(diff * (s2 - r2))))
    return DissipativityReport(
        satisfied=bool(worst <= tol),
        worst_pairing=worst,
        samples=int(t_samples.size * slow.size * s2.size),
    )


def _common_period(periods: Tuple[float, ...], max_denominator: int = 64) -> Optional[float]:
    base = periods[0]
    multiple = 1
    for p in periods[1:]:
        ratio = Fraction(p / base).limit_denominator(max_denominator)
        if abs(float(ratio) - p / base) > 1e-9:
            return None
        # p = base·a/b, 故 base 的 lcm(a) 倍同时是各周期的整数倍
        multiple = _lcm(multiple, ratio.numerator)
    return base * multiple


def _lcm(a: int, b: int) -> int:
    return abs(a * b) // math.gcd(a, b)


def check_periodicity(coeffs: CoefficientSet) -> PeriodicityReport:
    """
    γ 与 l 是否以同一周期周期化 (常数视为任意周期)。b₂, g₂ 的时间依赖由三角多项式给出,
    对有界状态集一致几乎周期, 无需单独检查。
    """
    gamma_ok = coeffs.gamma.is_periodic
    drift_ok = coeffs.drift.is_periodic
    periods = tuple(
        s.period for s in (coeffs.gamma, coeffs.drift) if not s.is_constant and s.period is not None
    )
    common: Optional[float]
    if not (gamma_ok and drift_ok):
        common = None
    elif not periods:
        common = 0.0
    else:
        common = _common_period(periods)
    return PeriodicityReport(
        gamma_periodic=gamma_ok,
        drift_periodic=drift_ok,
        common_period=common,
        satisfied=bool(gamma_ok and drift_ok and common is not None),
    )
