"""Exception hierarchy shared across the pipeline stages."""

from __future__ import annotations


class AlertPilotError(Exception):
    """Base class for every error raised by this package."""


class InputError(AlertPilotError):
    """Unreadable or malformed user input (alert file, log file, scenario file)."""


class PromQLSyntaxError(InputError):
    def __init__(self, message: str, position: int, expected: str | None = None):
        self.position = position
        self.expected = expected
        detail = f"{message} at position {position}"
        if expected:
            detail += f" (expected {expected})"
        super().__init__(detail)


class UnsupportedConstruct(InputError):
    def __init__(self, construct: str, position: int | None = None):
        self.construct = construct
        self.position = position
        where = "" if position is None else f" at position {position}"
        super().__init__(f"unsupported PromQL construct: {construct}{where}")


class SchemaError(InputError):
    pass


class DslSyntaxError(InputError):
    pass


class UnknownField(AlertPilotError):
    def __init__(self, field: str):
        self.field = field
        super().__init__(f"UnknownField({field!r})")


class LlmError(AlertPilotError):
    pass


class TransportError(LlmError):
    pass


class NoScriptMatch(LlmError):
    pass


class LlmResponseUnparseable(LlmError):
    pass


class ScopingFailed(AlertPilotError):
    """Refinement budget exhausted; carries the last tool for human review."""

    def __init__(self, message: str, tool=None, feedback=None, llm_calls: int = 0):
        self.tool = tool
        self.feedback = feedback
        self.llm_calls = llm_calls
        super().__init__(message)


class EmptyRequest(AlertPilotError):
    pass


class EmptyInput(AlertPilotError):
    pass


class UnknownEvent(AlertPilotError):
    pass


class DimensionMismatch(AlertPilotError):
    pass


class EmptyIndex(AlertPilotError):
    pass


class SeparationUnachievable(AlertPilotError):
    pass
