import sys
from enum import Enum, IntEnum

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:  # pragma: no cover - backport of the 3.11 stdlib StrEnum
    class StrEnum(str, Enum):
        def __new__(cls, *values):
            value = str(*values)
            member = str.__new__(cls, value)
            member._value_ = value
            return member

        __str__ = str.__str__
        __format__ = str.__format__

        @staticmethod
        def _generate_next_value_(name, start, count, last_values):
            return name.lower()


class BoundaryKind(StrEnum):
    """
    一维区间 (0, L) 上的边界条件类型
    """

    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


class NemytskiiKind(StrEnum):
    """
    复合 (Nemytskii) 算子的种类
    """

    B1 = "B1"
    B2 = "B2"
    G1 = "G1"
    G2 = "G2"


class DriftMethod(StrEnum):
    """
    平均漂移估计的方法标签
    """

    ERGODIC = "ergodic-trajectory"
    MEASURE = "measure-average"
    CLOSED_FORM = "closed-form"


class DriftOracleKind(StrEnum):
    """
    平均方程中 B̄ 的求值方式 (配置键 driftOracle)
    """

    CLOSED_FORM = "closed_form"
    HMM = "hmm"
    NEMYTSKII = "nemytskii"


class NoiseCoupling(StrEnum):
    COMMON = "common"
    INDEPENDENT = "independent"


class SpatialProfile(StrEnum):
    """
    一阶项 l(t, ξ) = l(t)·profile(ξ) 的空间形状
    """

    CONSTANT = "constant"
    SINE = "sine"
    COSINE = "cosine"


class NoiseChannel(IntEnum):
    """
    计数器随机数的通道号, 不同通道的增量相互独立
    """

    SLOW = 1
    FAST = 2
    FRESH = 3
    HMM = 4
    PILOT = 5


class Branch(IntEnum):
    """
    双边 Wiener 过程的分支: t ≥ 0 用 PLUS, t < 0 用 MINUS
    """

    PLUS = 0
    MINUS = 1


class ExitCode(IntEnum):
    OK = 0
    CONFIG = 2
    BLOWUP = 3
    IO = 4


ARTIFACT_VERSION = "0.1.0"

# 数值容差
ORTHONORMALITY_TOL = 1e-10
PERIOD_TOL = 1e-12
BLOWUP_THRESHOLD = 1e6

# 默认离散参数
DEFAULT_LENGTH = 3.141592653589793
MIN_NODES = 64
DEFAULT_C_DT = 0.05
MAX_C_DT = 0.1
NOISE_CHUNK = 256

# 蒙特卡洛
MC_BAND_SIGMAS = 3.0
DEFAULT_ENSEMBLE_SIZE = 2048
MIN_MIXING_R2 = 0.9
MIN_PROFILE_R2 = 0.9

# HMM 微观预算
HMM_N_MICRO = 64
HMM_T_MICRO_FACTOR = 10.0
HMM_CACHE_QUANTUM = 1e-3

# 预热时间 = BURN_IN_FACTOR / δ̂
BURN_IN_FACTOR = 5.0
# 试运行: 成员数与滞后网格 (以回退预热长度为单位)
PILOT_MEMBERS = 64
PILOT_LAGS = (0.1, 0.15, 0.2, 0.25, 0.3)

# 线性化验证配置的参数
LINEAR_VALIDATION = {
    "gamma0": 1.0,
    "alpha": 1.0,
    "c0": 1.0,
    "c1": 0.5,
    "period": 5.0,
    "d": 1.0,
    "g0": 0.5,
}
