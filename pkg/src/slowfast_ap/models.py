import math
from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field, field_validator, model_validator

from .constants import (
    DEFAULT_LENGTH,
    HMM_CACHE_QUANTUM,
    HMM_N_MICRO,
    MC_BAND_SIGMAS,
    MIN_NODES,
    BoundaryKind,
    DriftMethod,
    SpatialProfile,
)
from .signals import APSignal


# ---------------------------------------------------------------------------
# 配置片段
# ---------------------------------------------------------------------------


class ModelSpec(BaseModel):
    """
    一个空间模型 (A_i, Q_i) 的可序列化描述。

    λ_k = noise_scale·(k+1)^{−noise_decay}, k 为从 0 开始的模序号;
    rho 为 None 表示 ρ = ∞。
    """

    boundary: BoundaryKind = BoundaryKind.DIRICHLET
    modes: int = Field(8, ge=1)
    length: float = Field(DEFAULT_LENGTH, gt=0)
    n_nodes: Optional[int] = Field(None, alias="nNodes")
    rho: Optional[float] = 3.0
    beta: float = Field(0.6, gt=0)
    noise_scale: float = Field(1.0, ge=0, alias="noiseScale")
    noise_decay: float = Field(1.0, ge=0, alias="noiseDecay")
    noise_eigenvalues: Optional[List[float]] = Field(None, alias="noiseEigenvalues")

    model_config = {
        "populate_by_name": True,
    }

    @model_validator(mode="after")
    def _check_hypotheses(self):
        if self.rho is not None and self.rho <= 2:
            raise ValueError(f"ρ 必须大于 2, 实际 {self.rho}")
        ratio = self.beta if self.rho is None else self.beta * (self.rho - 2.0) / self.rho
        if ratio >= 1.0:
            raise ValueError(f"违反 β(ρ−2)/ρ < 1: β={self.beta}, ρ={self.rho}, 比值 {ratio:.4f}")
        if self.n_nodes is not None and self.n_nodes < 2 * self.modes + 1:
            raise ValueError(f"节点数 {self.n_nodes} 小于 2K+1 = {2 * self.modes + 1}")
        if self.noise_eigenvalues is not None:
            if len(self.noise_eigenvalues) != self.modes:
                raise ValueError("noiseEigenvalues 的长度必须等于 modes")
            if any(v < 0 for v in self.noise_eigenvalues):
                raise ValueError("噪声特征值必须非负")
        return self

    @property
    def resolved_nodes(self) -> int:
        return self.n_nodes if self.n_nodes is not None else max(2 * self.modes + 1, MIN_NODES)

    @property
    def rho_value(self) -> float:
        return math.inf if self.rho is None else self.rho


class TermSpec(BaseModel):
    """注册表中的一个系数项: kind 为注册名, params 为数值参数。"""

    kind: str
    params: Dict[str, float] = Field(default_factory=dict)
    signal: Optional[APSignal] = None

    model_config = {
        "populate_by_name": True,
    }


class CoefficientSpec(BaseModel):
    b1: TermSpec
    b2: TermSpec
    g1: TermSpec = Field(default_factory=lambda: TermSpec(kind="constant", params={"g0": 0.0}))
    g2: TermSpec = Field(default_factory=lambda: TermSpec(kind="constant", params={"g0": 0.0}))
    gamma: APSignal = Field(default_factory=lambda: APSignal.constant(1.0))
    drift: APSignal = Field(default_factory=lambda: APSignal.constant(0.0))
    drift_profile: SpatialProfile = Field(SpatialProfile.CONSTANT, alias="driftProfile")

    model_config = {
        "populate_by_name": True,
    }


class FieldSpec(BaseModel):
    """带限初值: 谱系数列表, 不足 K 时补零。"""

    coefficients: List[float] = Field(default_factory=list)

    model_config = {
        "populate_by_name": True,
    }

    @field_validator("coefficients")
    @classmethod
    def _finite(cls, values):
        if any(not math.isfinite(v) for v in values):
            raise ValueError("初值系数必须为有限值")
        return values


class HMMSpec(BaseModel):
    n_micro: int = Field(HMM_N_MICRO, ge=1, alias="nMicro")
    t_micro: Optional[float] = Field(None, gt=0, alias="tMicro")
    burn_in: Optional[float] = Field(None, gt=0, alias="burnIn")
    cache: bool = False
    quantum: float = Field(HMM_CACHE_QUANTUM, gt=0)

    model_config = {
        "populate_by_name": True,
    }


# ---------------------------------------------------------------------------
# 诊断与报告
# ---------------------------------------------------------------------------


class DissipativityReport(BaseModel):
    satisfied: bool
    worst_pairing: float = Field(..., alias="worstPairing")
    samples: int

    model_config = {
        "populate_by_name": True,
    }


class PeriodicityReport(BaseModel):
    """γ 与 l 是否以公共周期周期化 (b₂, g₂ 的信号是三角多项式, 自动一致几乎周期)。"""

    gamma_periodic: bool = Field(..., alias="gammaPeriodic")
    drift_periodic: bool = Field(..., alias="driftPeriodic")
    common_period: Optional[float] = Field(None, alias="commonPeriod")
    satisfied: bool

    model_config = {
        "populate_by_name": True,
    }


class RegularityFit(BaseModel):
    """时间增量正则性: Ê|u(r₁)−u(r₂)|^p ≈ c|r₁−r₂|^{γ̂ p}。"""

    exponent: float
    lower: float
    upper: float
    r_squared: float = Field(..., alias="rSquared")
    p: float
    theta_holder: float = Field(..., alias="thetaHolder")
    initial_holder: float = Field(..., alias="initialHolder")
    lags: List[float]
    moments: List[float]

    model_config = {
        "populate_by_name": True,
    }


class DistanceReport(BaseModel):
    value: float
    profile: List[float]
    standard_errors: List[float] = Field(..., alias="standardErrors")

    model_config = {
        "populate_by_name": True,
    }

    @property
    def mc_band(self) -> float:
        return MC_BAND_SIGMAS * max(self.standard_errors, default=0.0)


class ResidualReport(BaseModel):
    s: float
    t: float
    residuals: List[float]
    bands: List[float]

    model_config = {
        "populate_by_name": True,
    }

    @property
    def within_band(self) -> bool:
        return all(r <= b for r, b in zip(self.residuals, self.bands))


class MixingEstimate(BaseModel):
    delta: Optional[float] = None
    prefactor: Optional[float] = None
    r_squared: float = Field(0.0, alias="rSquared")
    conclusive: bool = False
    lags: List[float] = Field(default_factory=list)
    gaps: List[float] = Field(default_factory=list)
    bands: List[float] = Field(default_factory=list)

    model_config = {
        "populate_by_name": True,
    }


class ShiftEntry(BaseModel):
    shift: float
    discrepancy: float
    mc_band: float = Field(..., alias="mcBand")
    accepted: bool

    model_config = {
        "populate_by_name": True,
    }


class ShiftReport(BaseModel):
    times: List[float]
    tolerance: Optional[float] = None
    common_noise: bool = Field(..., alias="commonNoise")
    entries: List[ShiftEntry]

    model_config = {
        "populate_by_name": True,
    }

    @property
    def accepted_shifts(self) -> List[float]:
        return [e.shift for e in self.entries if e.accepted]


class TightnessReport(BaseModel):
    theta_holder: float = Field(..., alias="thetaHolder")
    quantile_levels: List[float] = Field(..., alias="quantileLevels")
    seminorm_quantiles: List[float] = Field(..., alias="seminormQuantiles")
    norm_quantiles: List[float] = Field(..., alias="normQuantiles")
    max_seminorm: float = Field(..., alias="maxSeminorm")

    model_config = {
        "populate_by_name": True,
    }


class ContinuityReport(BaseModel):
    quotient: float
    standard_error: float = Field(..., alias="standardError")
    distance: float

    model_config = {
        "populate_by_name": True,
    }


class EnvelopeFit(BaseModel):
    """Ê|y|^p ≤ c(1 + |x|^p) 的单常数拟合。"""

    p: float
    constant: float
    ratios: List[float]

    model_config = {
        "populate_by_name": True,
    }


class AveragedDriftEstimate(BaseModel):
    x: List[float]
    estimate: List[float]
    horizon: float
    method: DriftMethod
    error: float
    standard_errors: List[float] = Field(default_factory=list, alias="standardErrors")
    n_paths: int = Field(0, alias="nPaths")

    model_config = {
        "populate_by_name": True,
    }


class LipschitzReport(BaseModel):
    radius: Optional[float] = None
    quotients: List[Optional[float]]
    pairings: List[Optional[float]]
    inconclusive: List[bool]
    excluded: int
    max_quotient: Optional[float] = Field(None, alias="maxQuotient")
    envelope_constant: Optional[float] = Field(None, alias="envelopeConstant")

    model_config = {
        "populate_by_name": True,
    }


class DeviationProfile(BaseModel):
    """Ê|时间平均 − B̄|² 关于 T 的 c/T + floor 拟合。"""

    horizons: List[float]
    deviations: List[float]
    constant: float
    floor: float
    r_squared: float = Field(..., alias="rSquared")

    model_config = {
        "populate_by_name": True,
    }


class DeviationSeries(BaseModel):
    epsilon: float
    window: float
    times: List[float]
    mean_square: List[float] = Field(..., alias="meanSquare")
    standard_errors: List[float] = Field(..., alias="standardErrors")
    sup: float

    model_config = {
        "populate_by_name": True,
    }


class RemainderReport(BaseModel):
    epsilon: float
    times: List[float]
    mean_path: List[float] = Field(..., alias="meanPath")
    sup_values: List[float] = Field(..., alias="supValues")
    mean_sup: float = Field(..., alias="meanSup")

    model_config = {
        "populate_by_name": True,
    }


class WeakFormReport(BaseModel):
    epsilon: float
    dt_macro: float = Field(..., alias="dtMacro")
    max_residual: float = Field(..., alias="maxResidual")
    scale: float

    model_config = {
        "populate_by_name": True,
    }


class ConvergenceCell(BaseModel):
    epsilon: float
    trials: int
    exceedances: int
    proportion: float
    wilson_low: float = Field(..., alias="wilsonLow")
    wilson_high: float = Field(..., alias="wilsonHigh")
    gap_median: float = Field(..., alias="gapMedian")
    gap_q90: float = Field(..., alias="gapQ90")
    blowups: int

    model_config = {
        "populate_by_name": True,
    }


class ConvergenceReport(BaseModel):
    eta: float
    coupling: str
    cells: List[ConvergenceCell]
    monotone: bool

    model_config = {
        "populate_by_name": True,
    }


class InvariantCheck(BaseModel):
    name: str
    passed: bool
    required: bool = True
    detail: str = ""

    model_config = {
        "populate_by_name": True,
    }


class CheckReport(BaseModel):
    checks: List[InvariantCheck]

    model_config = {
        "populate_by_name": True,
    }

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks if c.required)


class RunRecord(BaseModel):
    """
    持久化的实验输出。series 为数值序列, summary 为标量或短列表。
    wall_clock 不参与可复现性比较。
    """

    config_hash: str = Field(..., alias="configHash")
    kind: str
    artifact_version: str = Field(..., alias="artifactVersion")
    seed: int
    streams: Dict[str, List[int]] = Field(default_factory=dict)
    series: Dict[str, List[float]] = Field(default_factory=dict)
    summary: Dict[str, Any] = Field(default_factory=dict)
    wall_clock: float = Field(0.0, alias="wallClock")

    model_config = {
        "populate_by_name": True,
    }

    def payload_equal(self, other: "RunRecord") -> bool:
        return self.model_dump(exclude={"wall_clock"}) == other.model_dump(exclude={"wall_clock"})
