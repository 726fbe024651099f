"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 1 usage, 2 data, 3 numerical.
"""

from __future__ import annotations


class EquiROError(Exception):
    exit_code = 2


# -- usage ---------------------------------------------------------------

class UsageError(EquiROError):
    exit_code = 1


class ConfigError(UsageError):
    def __init__(self, key_path: str, message: str):
        self.key_path = key_path
        super().__init__(f"config key '{key_path}': {message}")


class UnknownPreset(UsageError):
    pass


# -- data ----------------------------------------------------------------

class DataError(EquiROError):
    exit_code = 2


class EmptyFile(DataError):
    pass


class MissingColumn(DataError):
    def __init__(self, column: str, path=None):
        self.column = column
        super().__init__(f"{path or '<input>'}: missing column '{column}'")


class RowError(DataError):
    """Base for errors tied to one data row (1-based, header excluded)."""

    kind = "invalid row"

    def __init__(self, row: int, detail: str = "", path=None):
        self.row = row
        msg = f"{path or '<input>'}: row {row}: {self.kind}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NonFiniteValue(RowError):
    kind = "non-finite value"


class ZeroRange(RowError):
    kind = "zero range (point at sensor origin)"


class MalformedLine(RowError):
    kind = "malformed line"


class UnnormalizedQuaternion(RowError):
    kind = "unnormalized quaternion"


class TimestampMismatch(DataError):
    pass


class SegmentTooLong(DataError):
    def __init__(self, length: float, path_length: float):
        self.length = length
        super().__init__(
            f"no segment of length {length} m fits a path of {path_length:.3f} m")


class EmptyInput(DataError):
    pass


# -- numerical -----------------------------------------------------------

class NumericalError(EquiROError):
    exit_code = 3


class TooFewPoints(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class DegeneratePair(NumericalError):
    pass


class EmptyNeighborhood(NumericalError):
    pass


class DegenerateMatrix(NumericalError):
    pass


class DegenerateGeometry(NumericalError):
    pass


class NonFiniteObjective(NumericalError):
    pass


class DivergenceDetected(NumericalError):
    pass


class ShapeMismatch(NumericalError, ValueError):
    pass


class StageError(EquiROError):
    """An upstream error re-raised with the pipeline stage that produced it."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 3)
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
