"""Exception hierarchy shared across the toolkit.

Two coarse families matter to callers: data problems (bad specs, bad
records, bad files) and configuration/environment problems (missing env
vars, invalid config). The CLI maps the former to exit code 1 and the
latter to exit code 2.
"""

from __future__ import annotations


class NefkitError(Exception):
    """Base class for all toolkit errors."""


class SpecError(NefkitError):
    """A specification document is structurally unusable."""


class SpecSyntaxError(SpecError):
    """Source text failed to parse; carries best-known position."""

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        if line is not None:
            message = f"{message} (line {line}, column {column if column is not None else '?'})"
        super().__init__(message)
        self.line = line
        self.column = column


class UnresolvedReferenceError(SpecError):
    """A $ref target could not be located."""

    def __init__(self, target: str, detail: str = ""):
        msg = f"unresolved reference: {target}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.target = target


class ReferenceCycleError(SpecError):
    """Reference expansion revisited a target already being expanded."""

    def __init__(self, cycle: list[str]):
        super().__init__("reference cycle: " + " -> ".join(cycle))
        self.cycle = cycle


class GatewayError(NefkitError):
    """A provider call failed."""


class AuthConfigError(GatewayError):
    """The API key environment variable is unset or empty."""

    def __init__(self, env_name: str):
        super().__init__(f"API key environment variable {env_name!r} is not set")
        self.env_name = env_name


class AuthRejectedError(GatewayError):
    """The provider rejected our credentials (HTTP 401/403); not retryable."""


class RetriesExhaustedError(GatewayError):
    """Transient failures persisted beyond the configured retry budget."""


class MalformedProviderReply(GatewayError):
    """The provider answered but not in the expected wire shape."""


class PipelineError(NefkitError):
    """A dataset-building stage failed on its data."""


class ScalingAborted(PipelineError):
    """A provider failure interrupted variation scaling; carries partial progress."""

    def __init__(self, seed_index: int, completed: int, cause: Exception):
        super().__init__(
            f"scaling aborted at seed {seed_index}: {cause}; "
            f"{completed} record(s) were completed before the failure"
        )
        self.seed_index = seed_index
        self.completed = completed
        self.cause = cause


class CsvFormatError(PipelineError):
    """An Instruct/Output CSV row or header is malformed."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"{message} (line {line})"
        super().__init__(message)
        self.line = line


class ConfigError(NefkitError):
    """Pipeline configuration is invalid or the environment is unusable."""


class AgentError(NefkitError):
    """API agent planning or execution failed."""


class PlanError(AgentError):
    """A record cannot be turned into an executable plan."""


class ServerUnreachableError(AgentError):
    """The target server could not be reached at the transport level."""
