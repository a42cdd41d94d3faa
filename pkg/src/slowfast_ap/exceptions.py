from typing import Optional


class SlowFastException(Exception):
    pass


class ConfigValidationError(SlowFastException):
    pass


class HypothesisViolation(ConfigValidationError):
    pass


class InvalidParameter(SlowFastException):
    pass


class InvalidTimeInterval(InvalidParameter):
    pass


class UnsupportedBoundary(InvalidParameter):
    pass


class RepresentationMismatch(SlowFastException):
    pass


class GridMismatch(SlowFastException):
    pass


class NonFiniteSample(SlowFastException):
    pass


class InsufficientSamples(SlowFastException):
    pass


class EmptyFamily(SlowFastException):
    pass


class ScheduleError(InvalidParameter):
    pass


class DriftOracleError(SlowFastException):
    pass


class RecordIOError(SlowFastException):
    pass


class RunRecordCorruption(RecordIOError):
    pass


class BlowUpError(SlowFastException):
    """
    轨道发散 (非有限值或超过上确界范数阈值)。

    记录发散成员的序号、随机流编号和主种子, 以便单独重放。
    """

    def __init__(
        self,
        message: str,
        member: Optional[int] = None,
        stream: Optional[int] = None,
        seed: Optional[int] = None,
        time: Optional[float] = None,
    ):
        super().__init__(message)
        self.member = member
        self.stream = stream
        self.seed = seed
        self.time = time

    def __str__(self) -> str:
        base = super().__str__()
        return f"{base} (member={self.member}, stream={self.stream}, seed={self.seed}, t={self.time})"
