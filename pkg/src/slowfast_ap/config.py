import json
import logging
import math
import sys
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .coefficients import build_coefficients, check_dissipativity, check_periodicity
from .constants import (
    BLOWUP_THRESHOLD,
    DEFAULT_C_DT,
    DEFAULT_ENSEMBLE_SIZE,
    LINEAR_VALIDATION,
    MAX_C_DT,
    NOISE_CHUNK,
    DriftOracleKind,
    ExitCode,
    NoiseCoupling,
    SpatialProfile,
)
from .exceptions import ConfigValidationError, RecordIOError
from .models import CoefficientSpec, FieldSpec, HMMSpec, ModelSpec, TermSpec
from .signals import APSignal
from .utils import canonical_json, sha256_hex

logger = logging.getLogger(__name__)


class Settings(BaseSettings):
    """
    运行时配置, 使用 pydantic-settings 从环境变量 (前缀 SLOWFAST_) 与 .env 加载。
    """

    model_config = SettingsConfigDict(
        env_prefix="SLOWFAST_",
        env_file=".env",
        env_file_encoding="utf-8",
        env_nested_delimiter="__",
        extra="ignore",
    )

    output_dir: Path = Path("runs")
    workers: int = Field(1, ge=1)
    seed: Optional[int] = Field(None, ge=0, lt=2**64)
    log_level: str = "INFO"
    noise_chunk: int = Field(NOISE_CHUNK, ge=1)
    blowup_threshold: float = Field(BLOWUP_THRESHOLD, gt=0)


class ExperimentConfig(BaseModel):
    """
    可序列化的实验描述, 足以重建一次运行。规范 JSON 的 SHA-256 即运行 id。
    """

    name: str = "custom"
    slow_model: ModelSpec = Field(default_factory=ModelSpec, alias="slowModel")
    fast_model: ModelSpec = Field(default_factory=ModelSpec, alias="fastModel")
    coefficients: CoefficientSpec
    alpha: float = Field(1.0, ge=0)
    eps_list: List[float] = Field(default_factory=lambda: [0.5, 0.2, 0.1, 0.05], alias="epsList")
    kappa: float = 1.0
    eta: Optional[float] = Field(None, gt=0)
    eta_scale: float = Field(0.2, gt=0, alias="etaScale")
    trials: int = 50
    seed: int = Field(0, ge=0, lt=2**64)
    horizon: float = Field(1.0, gt=0)
    dt_macro: float = Field(1e-3, gt=0, alias="dtMacro")
    c_dt: float = Field(DEFAULT_C_DT, gt=0, alias="cDt")
    dt_frozen: float = Field(1e-2, gt=0, alias="dtFrozen")
    x0: FieldSpec = Field(default_factory=FieldSpec)
    y0: FieldSpec = Field(default_factory=FieldSpec)
    drift_oracle: DriftOracleKind = Field(DriftOracleKind.HMM, alias="driftOracle")
    hmm: HMMSpec = Field(default_factory=HMMSpec)
    ensemble_size: int = Field(DEFAULT_ENSEMBLE_SIZE, ge=2, alias="ensembleSize")
    burn_in: Optional[float] = Field(None, gt=0, alias="burnIn")
    truncation_radius: Optional[float] = Field(None, gt=0, alias="truncationRadius")
    coupling: NoiseCoupling = NoiseCoupling.COMMON
    store_fast: bool = Field(False, alias="storeFast")
    output_dir: Optional[str] = Field(None, alias="outputDir")

    model_config = {
        "populate_by_name": True,
    }

    @field_validator("eps_list")
    @classmethod
    def _eps_descending(cls, values):
        if not values:
            raise ValueError("epsList 不能为空")
        for e in values:
            if not (0.0 < e <= 1.0):
                raise ValueError(f"ε 必须在 (0, 1] 内, 实际 {e}")
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ValueError("epsList 必须严格递减")
        return values

    @model_validator(mode="after")
    def _check_hypotheses(self):
        if self.kappa <= 0:
            raise ValueError(f"κ 必须为正, 实际 {self.kappa}")
        if self.trials < 1:
            raise ValueError(f"trials 必须 ≥ 1, 实际 {self.trials}")
        if self.c_dt > MAX_C_DT:
            raise ValueError(f"c_dt 必须 ≤ {MAX_C_DT}, 实际 {self.c_dt}")
        if self.slow_model.boundary != self.fast_model.boundary or self.slow_model.length != self.fast_model.length:
            raise ValueError("慢、快模型必须共享边界类型与区间长度")
        if len(self.x0.coefficients) > self.slow_model.modes:
            raise ValueError("x0 的系数多于慢模型的模数")
        if len(self.y0.coefficients) > self.fast_model.modes:
            raise ValueError("y0 的系数多于快模型的模数")

        gamma = self.coefficients.gamma
        if gamma.lower_bound <= 0:
            t = np.linspace(0.0, 2000.0, 400001)
            lo = float(np.min(gamma(t)))
            if lo <= 0:
                raise ValueError(f"γ(t) 违反下界 γ₀ > 0 (采样最小值 {lo:.4g})")

        coeffs = build_coefficients(self.coefficients)
        report = check_dissipativity(
            coeffs,
            t_samples=np.linspace(0.0, 50.0, 26),
            sigma_grid=np.linspace(-5.0, 5.0, 41),
        )
        if not report.satisfied:
            raise ValueError(f"b₂ 不满足耗散性 (最坏配对 {report.worst_pairing:.4g} > 0)")

        if self.drift_oracle == DriftOracleKind.CLOSED_FORM:
            c = self.coefficients
            if not (
                c.b1.kind == "linear"
                and c.b2.kind == "linear"
                and gamma.is_constant
                and c.drift.is_constant
                and c.drift.offset == 0.0
            ):
                raise ValueError("closed_form 漂移只适用于线性 b₁, b₂、常数 γ 且 l ≡ 0 的配置")
        if self.drift_oracle == DriftOracleKind.NEMYTSKII and self.coefficients.b1.kind == "linear":
            if float(self.coefficients.b1.params.get("q", 1.0)) != 0.0:
                raise ValueError("nemytskii 漂移要求 b₁ 与快变量无关")
        return self

    # 规范序列化
    def canonical_json(self) -> str:
        return canonical_json(self.model_dump(mode="json", by_alias=True))

    @property
    def config_hash(self) -> str:
        return sha256_hex(self.canonical_json().encode("utf-8"))

    def with_overrides(self, **changes) -> "ExperimentConfig":
        """返回修改若干字段后重新校验的副本。"""
        data = self.model_dump(by_alias=False)
        data.update(changes)
        return type(self).model_validate(data)

    def periodicity(self):
        return check_periodicity(build_coefficients(self.coefficients))

    # 预设
    @classmethod
    def linear_validation(cls, modes: int = 8, **overrides) -> "ExperimentConfig":
        """
        线性验证配置: b₁ = σ₂, b₂ = −σ₂ + c(t)σ₁, c(t) = 1 + 0.5 sin(2πt/5),
        g₂ = 0.5, γ ≡ 1, l ≡ 0, α = 1。此时 B̄(x)_k = x_k/(α_k + 2)。
        """
        p = LINEAR_VALIDATION
        c = APSignal.sine(p["c1"], 2.0 * math.pi / p["period"], offset=p["c0"])
        base = dict(
            name="linear_validation",
            slow_model=ModelSpec(modes=modes),
            fast_model=ModelSpec(modes=modes),
            coefficients=CoefficientSpec(
                b1=TermSpec(kind="linear", params={"p": 0.0, "q": 1.0, "r": 0.0}),
                b2=TermSpec(kind="linear", params={"d": p["d"]}, signal=c),
                g1=TermSpec(kind="constant", params={"g0": 0.1}),
                g2=TermSpec(kind="constant", params={"g0": p["g0"]}),
                gamma=APSignal.constant(p["gamma0"]),
                drift=APSignal.constant(0.0),
            ),
            alpha=p["alpha"],
            x0=FieldSpec(coefficients=[1.0]),
            drift_oracle=DriftOracleKind.CLOSED_FORM,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def ginzburg_landau(cls, modes: int = 8, **overrides) -> "ExperimentConfig":
        """三次反应项, 快系数拟周期 (频率 1 与 √2)。"""
        c = APSignal(offset=1.0, terms=[(0.3, 1.0, 0.0), (0.3, math.sqrt(2.0), 0.0)])
        base = dict(
            name="ginzburg_landau",
            slow_model=ModelSpec(modes=modes),
            fast_model=ModelSpec(modes=modes),
            coefficients=CoefficientSpec(
                b1=TermSpec(kind="cubic", params={"a": 1.0, "p": 1.0, "q": 0.5}),
                b2=TermSpec(kind="cubic", params={"a": 1.0, "d": 1.0}, signal=c),
                g1=TermSpec(kind="constant", params={"g0": 0.1}),
                g2=TermSpec(kind="bounded_lipschitz", params={"g0": 0.3, "g1": 0.05}),
                gamma=APSignal.cosine(0.3, 1.0, offset=1.0),
                drift=APSignal.constant(0.0),
            ),
            x0=FieldSpec(coefficients=[0.5]),
            drift_oracle=DriftOracleKind.HMM,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def fitzhugh_nagumo(cls, modes: int = 8, **overrides) -> "ExperimentConfig":
        """慢激发变量 + 快恢复变量, 快恢复变量受周期驱动。"""
        c = APSignal.cosine(0.3, 1.0, offset=1.0)
        base = dict(
            name="fitzhugh_nagumo",
            slow_model=ModelSpec(modes=modes),
            fast_model=ModelSpec(modes=modes),
            coefficients=CoefficientSpec(
                b1=TermSpec(kind="fitzhugh_nagumo", params={"a": 0.1, "q": 1.0}),
                b2=TermSpec(kind="linear", params={"d": 1.0}, signal=c),
                g1=TermSpec(kind="constant", params={"g0": 0.05}),
                g2=TermSpec(kind="constant", params={"g0": 0.2}),
                gamma=APSignal.constant(1.0),
                drift=APSignal.constant(0.0),
            ),
            x0=FieldSpec(coefficients=[0.5]),
            drift_oracle=DriftOracleKind.HMM,
        )
        base.update(overrides)
        return cls(**base)

    @classmethod
    def periodic_measure(cls, modes: int = 6, **overrides) -> "ExperimentConfig":
        """γ、l 与 c 同为 2π 周期, 用于检查 t ↦ μᵗˣ 的周期性。"""
        base = dict(
            name="periodic_measure",
            slow_model=ModelSpec(modes=modes),
            fast_model=ModelSpec(modes=modes),
            coefficients=CoefficientSpec(
                b1=TermSpec(kind="linear", params={"p": 0.0, "q": 1.0, "r": 0.0}),
                b2=TermSpec(kind="linear", params={"d": 1.0}, signal=APSignal.cosine(0.5, 1.0, offset=1.0)),
                g2=TermSpec(kind="constant", params={"g0": 0.3}),
                gamma=APSignal.cosine(0.3, 1.0, offset=1.0),
                drift=APSignal.cosine(0.2, 1.0),
                drift_profile=SpatialProfile.SINE,
            ),
            x0=FieldSpec(coefficients=[1.0]),
            drift_oracle=DriftOracleKind.HMM,
        )
        base.update(overrides)
        return cls(**base)


PRESETS = {
    "linear_validation": ExperimentConfig.linear_validation,
    "ginzburg_landau": ExperimentConfig.ginzburg_landau,
    "fitzhugh_nagumo": ExperimentConfig.fitzhugh_nagumo,
    "periodic_measure": ExperimentConfig.periodic_measure,
}


def load_experiment_config(source: Union[str, Path]) -> ExperimentConfig:
    """
    读取实验配置: 预设名或 JSON 文件路径。

    Raises:
        ConfigValidationError: JSON 无法解析或校验失败。
        RecordIOError: 文件无法读取。
    """
    if str(source) in PRESETS:
        return PRESETS[str(source)]()
    path = Path(source)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise RecordIOError(f"无法读取配置文件 {path}: {e}") from e
    try:
        payload = json.loads(text)
        config = ExperimentConfig.model_validate(payload)
    except (json.JSONDecodeError, ValidationError) as e:
        raise ConfigValidationError(f"配置文件 {path} 校验失败:\n{e}") from e
    periodicity = config.periodicity()
    if not periodicity.satisfied:
        logger.warning("γ 与 l 不具有公共周期, 测度族的几乎周期性结论不受保证")
    logger.debug("已加载配置 %s (hash=%s)", config.name, config.config_hash[:12])
    return config


# 创建一个全局可用的运行时配置实例
# 这段代码会在模块被导入时执行
try:
    settings = Settings()
except ValidationError as e:
    print("--- 配置错误 ---", file=sys.stderr)
    print("错误: 运行时配置加载失败。请检查 SLOWFAST_* 环境变量与 .env 文件。", file=sys.stderr)
    print("详细错误信息如下:", file=sys.stderr)
    print(e, file=sys.stderr)
    print("-----------------", file=sys.stderr)
    sys.exit(int(ExitCode.CONFIG))
