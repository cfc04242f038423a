# cimo/core/errors.py
from __future__ import annotations


class CimoError(Exception):
    """Base class for all library errors."""


class ValidationError(CimoError):
    """An object violates one of its invariants."""


class GraphParseError(CimoError):
    """Edge-list parse failure; `reason` is one of
    malformed | probability | self_loop | duplicate | node_id."""

    def __init__(self, line: int, reason: str, detail: str = ""):
        self.line = line
        self.reason = reason
        msg = f"line {line}: {reason.replace('_', '-')}"
        super().__init__(f"{msg} ({detail})" if detail else msg)


class ConfigError(CimoError):
    """Invalid configuration, usage or input file."""

    def __init__(self, message: str, field: str | None = None):
        self.field = field
        super().__init__(message)


class FormatVersionError(ConfigError):
    pass


class GuardExceeded(CimoError):
    """An enumeration cap was hit; the instance is too large for exact work."""


class PositivityError(CimoError):
    """A matched replication has a zero or missing propensity."""


class VerificationFailure(CimoError):
    """A verification suite found at least one violated property."""

    def __init__(self, suite: str, violations: list[dict]):
        self.suite = suite
        self.violations = violations
        super().__init__(f"suite '{suite}': {len(violations)} violation(s)")
