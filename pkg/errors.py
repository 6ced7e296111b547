"""
Exception types shared by the debate modules.

Every error derives from `DebateError` plus the closest builtin, so callers
can catch either the project-wide base or the usual `ValueError` family.
"""


class DebateError(Exception):
    """Base class for every error raised by this project."""


# ── attention kernel ─────────────────────────────────────────────────────────

class DimensionError(DebateError, ValueError):
    pass


class NumericDomainError(DebateError, ValueError):
    pass


class RangeValidationError(DebateError, ValueError):
    pass


class DegenerateAdjustmentError(DebateError, ArithmeticError):
    """In-range mass vanished or changed sign during range weighting."""

    def __init__(self, original_sum, new_sum):
        self.original_sum = original_sum
        self.new_sum = new_sum
        super().__init__(
            f"range adjustment is degenerate: original_sum={original_sum!r}, new_sum={new_sum!r}"
        )


# ── decoder / estimators ─────────────────────────────────────────────────────

class CapacityError(DebateError, ValueError):
    pass


class EmptyInputError(DebateError, ValueError):
    pass


class UncertaintyDomainError(DebateError, ValueError):
    pass


# ── backends ─────────────────────────────────────────────────────────────────

class UnsupportedFeatureError(DebateError, RuntimeError):
    pass


class TransportError(DebateError, RuntimeError):
    def __init__(self, message: str, status: int | None = None):
        self.status = status
        super().__init__(f"{message} (status={status})")


class ConfigurationError(DebateError, ValueError):
    pass


# ── debate protocol ──────────────────────────────────────────────────────────

class ConsistencyError(DebateError, RuntimeError):
    pass


class NoConsensusError(DebateError, ValueError):
    pass


class AgentError(DebateError, RuntimeError):
    """A backend call failed; carries which agent and round it happened in."""

    def __init__(self, agent_id: int, round_index: int, cause: Exception):
        self.agent_id = agent_id
        self.round_index = round_index
        self.cause = cause
        super().__init__(f"agent {agent_id} failed in round {round_index}: {cause}")
