"""Exception hierarchy shared across the package."""

from __future__ import annotations


class DuetError(Exception):
    """Base class for all errors raised by duet."""


class InvalidInput(DuetError, ValueError):
    """A caller-supplied value violates an operation's precondition."""


class ConfigError(DuetError):
    """Configuration is missing, malformed or fails validation."""


class ToolEnvironmentError(DuetError):
    """An external tool (simulator, engine wrapper) cannot be launched."""


class EngineError(DuetError):
    """The formal engine wrapper failed or produced no results."""

    def __init__(self, message: str, log_excerpt: str = "", duration_ms: int = 0):
        super().__init__(message)
        self.log_excerpt = log_excerpt
        self.duration_ms = duration_ms


class ProtocolError(DuetError):
    """A document or payload does not follow its wire schema."""


class TransportError(DuetError):
    """The completion backend could not be reached after all retries."""


class ScriptExhausted(DuetError):
    """The scripted backend ran out of responses."""


class ReplayDivergence(DuetError):
    """A scripted response's digest guard did not match the live transcript."""

    def __init__(self, turn: int, expected: str, actual: str):
        super().__init__(
            f"replay diverged at turn {turn}: expected last-message digest "
            f"{expected[:12]}, got {actual[:12]}"
        )
        self.turn = turn
        self.expected = expected
        self.actual = actual


class VCDParseError(DuetError):
    """Malformed VCD input."""

    def __init__(self, message: str, line: int | None = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line


class SignalLookupError(DuetError, LookupError):
    """A signal name or selector did not resolve."""


class CitationError(DuetError):
    """Generated text failed the evidence-citation requirement."""
