import hashlib
import json
from typing import Any, NamedTuple, Tuple

import numpy as np
from scipy import stats

from .exceptions import InsufficientSamples


class LinearFit(NamedTuple):
    slope: float
    intercept: float
    r_squared: float
    slope_stderr: float
    n_points: int

    def slope_interval(self, confidence: float = 0.95) -> Tuple[float, float]:
        """斜率的 t 分布置信区间。"""
        if self.n_points <= 2:
            return (-np.inf, np.inf)
        q = stats.t.ppf(0.5 + confidence / 2.0, self.n_points - 2)
        return (self.slope - q * self.slope_stderr, self.slope + q * self.slope_stderr)


def linear_fit(x: np.ndarray, y: np.ndarray) -> LinearFit:
    """
    最小二乘直线拟合, 基于 scipy.stats.linregress。

    Args:
        x: 自变量。
        y: 因变量。

    Returns:
        斜率、截距、R² 和斜率标准误。
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2:
        raise InsufficientSamples(f"直线拟合至少需要 2 个点, 实际 {x.size}")
    res = stats.linregress(x, y)
    r2 = float(res.rvalue**2) if np.isfinite(res.rvalue) else 0.0
    return LinearFit(
        slope=float(res.slope),
        intercept=float(res.intercept),
        r_squared=r2,
        slope_stderr=float(res.stderr),
        n_points=int(x.size),
    )


def log_linear_fit(x: np.ndarray, y: np.ndarray) -> LinearFit:
    """拟合 log y = a + b x。"""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise InsufficientSamples("对数拟合要求 y > 0")
    return linear_fit(x, np.log(y))


def log_log_fit(x: np.ndarray, y: np.ndarray) -> LinearFit:
    """拟合 log y = a + b log x。"""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if np.any(x <= 0) or np.any(y <= 0):
        raise InsufficientSamples("双对数拟合要求 x, y > 0")
    return linear_fit(np.log(x), np.log(y))


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> Tuple[float, float]:
    """二项比例的 Wilson 置信区间。"""
    if trials <= 0:
        return (0.0, 1.0)
    ci = stats.binomtest(int(successes), int(trials)).proportion_ci(
        confidence_level=confidence, method="wilson"
    )
    return (float(ci.low), float(ci.high))


def canonical_json(payload: Any) -> str:
    """键排序、紧凑分隔符的 JSON 文本, 作为哈希的规范字节序列。"""
    return json.dumps(payload, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def phi1(z: np.ndarray, h: float) -> np.ndarray:
    """
    指数 Euler 的权重 h·(1 − e^{−z})/z, z → 0 时取极限 h。
    """
    z = np.asarray(z, dtype=float)
    safe = np.where(np.abs(z) > 1e-12, z, 1.0)
    return np.where(np.abs(z) > 1e-12, -h * np.expm1(-safe) / safe, h)


def noise_weight(z: np.ndarray) -> np.ndarray:
    """
    随机卷积的精确步进权重 sqrt((1 − e^{−2z})/(2z)), z → 0 时取极限 1。

    乘在方差为 h 的增量上, 使每个模的 OU 过程在网格上精确离散。
    """
    z = np.asarray(z, dtype=float)
    safe = np.where(np.abs(z) > 1e-12, z, 1.0)
    return np.where(np.abs(z) > 1e-12, np.sqrt(-np.expm1(-2.0 * safe) / (2.0 * safe)), 1.0)


def holder_seminorm(nodal: np.ndarray, nodes: np.ndarray, theta: float) -> np.ndarray:
    """
    离散 Hölder 半范数 max_{i<j} |y(ξ_i) − y(ξ_j)| / |ξ_i − ξ_j|^θ。

    Args:
        nodal: 形状 (..., n) 的节点值。
        nodes: 形状 (n,) 的节点坐标。
        theta: Hölder 指数。

    Returns:
        形状 (...) 的半范数。
    """
    nodal = np.asarray(nodal, dtype=float)
    dist = np.abs(nodes[:, None] - nodes[None, :])
    iu = np.triu_indices(nodes.size, k=1)
    denom = dist[iu] ** theta
    diffs = np.abs(nodal[..., :, None] - nodal[..., None, :])[..., iu[0], iu[1]]
    return np.max(diffs / denom, axis=-1)
