"""Exception hierarchy shared by every indexprobe module."""

from __future__ import annotations


class IndexProbeError(Exception):
    """Base class for computation errors (CLI exit code 1)."""


class ConfigError(IndexProbeError):
    """Bad configuration or unreadable input path (CLI exit code 2)."""


class SchemaError(IndexProbeError):
    pass


class ParseError(SchemaError):
    def __init__(self, row: int, column: str, value: object = None):
        self.row = row
        self.column = column
        self.value = value
        super().__init__(f"row {row}, column {column!r}: cannot parse {value!r} as a number")


class DuplicateUnit(IndexProbeError):
    def __init__(self, unit_id: str):
        self.unit_id = unit_id
        super().__init__(f"duplicate unit id {unit_id!r}")


class ScaleError(IndexProbeError):
    pass


class UnresolvableSource(IndexProbeError):
    def __init__(self, source_id: str):
        self.source_id = source_id
        super().__init__(f"source {source_id!r} has no link with positive overlap")


class MissingParent(IndexProbeError):
    def __init__(self, unit_id: str, detail: str = ""):
        self.unit_id = unit_id
        super().__init__(detail or f"no parent value for {unit_id!r}")


class InsufficientData(IndexProbeError):
    pass


class MethodError(IndexProbeError):
    pass


class SpecError(IndexProbeError):
    pass


class DomainError(IndexProbeError):
    def __init__(self, message: str, unit_id: str | None = None):
        self.unit_id = unit_id
        super().__init__(message)


class UnitSetError(IndexProbeError):
    pass


class DegenerateRanking(IndexProbeError):
    pass


class RecordError(IndexProbeError):
    pass
