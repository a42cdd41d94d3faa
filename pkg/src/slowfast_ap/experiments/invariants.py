"""
`check` 子命令的不变量检查。每项返回 InvariantCheck, 检查内部的异常记为失败而不中断整套检查。
"""

from __future__ import annotations

import logging
from typing import Callable, List, Tuple

import numpy as np

from ..coefficients import build_coefficients, check_dissipativity, check_periodicity
from ..config import ExperimentConfig
from ..constants import ORTHONORMALITY_TOL, NemytskiiKind, NoiseChannel
from ..exceptions import SlowFastException
from ..integrators import SlowFastConfig
from ..measures import EmpiricalMeasure, TestFunctionDictionary, dual_lipschitz_distance
from ..models import CheckReport, InvariantCheck
from ..noise import IncrementSampler, standard_normals
from ..signals import mean_value
from ..spectral import FieldState, evolution_apply, nemytskii_apply, semigroup_apply

logger = logging.getLogger(__name__)

CheckFn = Callable[[ExperimentConfig, SlowFastConfig], Tuple[bool, str]]


def _orthonormality(config, sf):
    errors = [sf.slow_model.orthonormality_error(), sf.fast_model.orthonormality_error()]
    return max(errors) <= ORTHONORMALITY_TOL, f"max |Gram − I| = {max(errors):.2e}"


def _field(model, seed: int) -> FieldState:
    rng = np.random.default_rng(seed)
    return FieldState.from_coeffs(model, rng.standard_normal(model.modes))


def _semigroup_law(config, sf):
    model = sf.slow_model
    u = _field(model, config.seed)
    lhs = semigroup_apply(model, semigroup_apply(model, u, 0.3, config.alpha), 0.2, config.alpha).coeffs
    rhs = semigroup_apply(model, u, 0.5, config.alpha).coeffs
    err = float(np.max(np.abs(lhs - rhs)))
    return err <= 1e-12 * max(1.0, float(np.max(np.abs(rhs)))), f"|S(t)S(s) − S(t+s)| = {err:.2e}"


def _two_parameter_law(config, sf):
    op = sf.fast_op
    v = _field(sf.fast_model, config.seed + 1)
    mid = evolution_apply(op, v, 0.1, 0.4, config.alpha, sf.eps)
    lhs = evolution_apply(op, mid, 0.4, 0.9, config.alpha, sf.eps).coeffs
    rhs = evolution_apply(op, v, 0.1, 0.9, config.alpha, sf.eps).coeffs
    err = float(np.max(np.abs(lhs - rhs)))
    return err <= 1e-10 * max(1.0, float(np.max(np.abs(rhs)))), f"|U(t,r)U(r,s) − U(t,s)| = {err:.2e}"


def _noise_regularity(config, sf):
    ratios = [sf.slow_model.regularity_ratio, sf.fast_model.regularity_ratio]
    return max(ratios) < 1.0, f"β(ρ−2)/ρ = {max(ratios):.4f}"


def _gamma_bounds(config, sf):
    lo, hi = sf.fast_op.gamma_bounds
    return lo > 0, f"γ₀ = {lo:.4g}, γ₁ = {hi:.4g}"


def _dissipativity(config, sf):
    report = check_dissipativity(
        build_coefficients(config.coefficients), np.linspace(0.0, 20.0, 41), np.linspace(-3.0, 3.0, 61),
    )
    return report.satisfied, f"最大配对 {report.worst_pairing:.3g} ({report.samples} 个样本)"


def _periodicity(config, sf):
    report = check_periodicity(build_coefficients(config.coefficients))
    return report.satisfied, f"公共周期 {report.common_period}"


def _mean_value_linearity(config, sf):
    f = config.coefficients.gamma
    g = config.coefficients.b2.signal or config.coefficients.gamma
    combo = f.scaled(2.0).plus(g.scaled(-0.5))
    T = 200.0
    lhs = mean_value(combo, T).value
    rhs = 2.0 * mean_value(f, T).value - 0.5 * mean_value(g, T).value
    err = abs(lhs - rhs)
    return err <= 1e-10, f"|M(2f − g/2) − (2M(f) − M(g)/2)| = {err:.2e}"


def _mean_value_shift(config, sf):
    signal = config.coefficients.b2.signal or config.coefficients.gamma
    T = 2000.0
    a = mean_value(signal, T, t0=0.0)
    b = mean_value(signal, T, t0=17.3)
    diff = abs(a.value - b.value)
    # |∫_{t₀}^{t₀+T} − ∫_0^T| ≤ Σ 4|a|/ω
    bound = sum(4.0 * abs(amp) / w for amp, w, _ in signal.terms) / T
    return diff <= bound + 1e-12, f"|M_0 − M_17.3| = {diff:.2e} (界 {bound:.2e})"


def _nemytskii_locality(config, sf):
    model = sf.slow_model
    coeffs = sf.coeffs
    x = FieldState.from_nodal(model, 0.5 * np.sin(model.nodes))
    y = FieldState.from_nodal(sf.fast_model, 0.3 * np.cos(model.nodes))
    base = nemytskii_apply(coeffs, NemytskiiKind.B1, 0.0, x, y).nodal
    j = model.grid.n_nodes // 2
    bumped = x.nodal.copy()
    bumped[j] += 0.25
    moved = nemytskii_apply(coeffs, NemytskiiKind.B1, 0.0, FieldState.from_nodal(model, bumped), y).nodal
    changed = np.flatnonzero(np.abs(moved - base) > 0)
    ok = changed.size == 0 or (changed.size == 1 and changed[0] == j)
    return ok, f"改变的节点 {changed.tolist()[:5]}"


def _noise_determinism(config, sf):
    lam = sf.fast_model.noise_eigenvalues
    a = IncrementSampler(lam, config.seed, NoiseChannel.FAST, [3, 5], 0.01, chunk=7)
    b = IncrementSampler(lam, config.seed, NoiseChannel.FAST, [5, 3], 0.01, chunk=64)
    same = all(np.array_equal(a.increments(k)[0], b.increments(k)[1]) for k in range(-20, 20))
    whole = standard_normals(config.seed, NoiseChannel.FAST, 3, -10, 20, sf.fast_model.modes)
    pieces = np.concatenate([
        standard_normals(config.seed, NoiseChannel.FAST, 3, -10, 7, sf.fast_model.modes),
        standard_normals(config.seed, NoiseChannel.FAST, 3, -3, 13, sf.fast_model.modes),
    ])
    split = np.array_equal(whole, pieces)
    return same and split, f"批次无关 {same}, 分块无关 {split}"


def _pseudometric(config, sf):
    model = sf.fast_model
    rng = np.random.default_rng(config.seed)
    ensembles = [
        EmpiricalMeasure(model, rng.standard_normal((64, model.modes)) * scale, 0.0, np.zeros(model.modes))
        for scale in (0.5, 1.0, 1.5)
    ]
    dictionary = TestFunctionDictionary.default(model)
    d = lambda a, b: dual_lipschitz_distance(a, b, dictionary).value
    p, q, r = ensembles
    zero = d(p, p) == 0.0
    symmetric = d(p, q) == d(q, p)
    triangle = d(p, r) <= d(p, q) + d(q, r) + 1e-12
    return zero and symmetric and triangle, f"d(μ,μ)=0 {zero}, 对称 {symmetric}, 三角不等式 {triangle}"


CHECKS: List[Tuple[str, CheckFn, bool]] = [
    ("orthonormality", _orthonormality, True),
    ("semigroup_law", _semigroup_law, True),
    ("two_parameter_law", _two_parameter_law, True),
    ("noise_regularity", _noise_regularity, True),
    ("gamma_bounds", _gamma_bounds, True),
    ("dissipativity", _dissipativity, True),
    ("common_periodicity", _periodicity, False),
    ("mean_value_linearity", _mean_value_linearity, True),
    ("mean_value_start_independence", _mean_value_shift, True),
    ("nemytskii_locality", _nemytskii_locality, True),
    ("noise_determinism", _noise_determinism, True),
    ("pseudometric_axioms", _pseudometric, True),
]


def run_invariant_suite(config: ExperimentConfig) -> CheckReport:
    """
    对一个实验配置运行全部不变量检查。

    Returns:
        CheckReport; passed 只看 required 的检查项。
    """
    sf = SlowFastConfig.from_experiment(config)
    checks = []
    for name, fn, required in CHECKS:
        try:
            passed, detail = fn(config, sf)
        except (SlowFastException, ArithmeticError, ValueError) as e:
            passed, detail = False, f"{type(e).__name__}: {e}"
        if not passed:
            logger.warning("检查 %s 未通过: %s", name, detail)
        checks.append(InvariantCheck(name=name, passed=bool(passed), required=required, detail=detail))
    return CheckReport(checks=checks)
