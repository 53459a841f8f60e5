"""Exception hierarchy shared across the gateway.

Every error raised by this package derives from GateError so callers can
fence off gateway failures from bugs in surrounding code.  HTTP handlers
translate these into status codes at the edge; core modules only raise.
"""

from __future__ import annotations


class GateError(Exception):
    """Base class for all errors raised by this package."""


# --- policy and model ---------------------------------------------------

class UnknownRole(GateError):
    """A user references a role id that the policy does not define."""


class InvalidRegex(GateError):
    """A regex parameter rule does not compile."""


class InvalidSetQuery(GateError):
    """A set-query rule is structurally invalid (bad identifier, bad filter)."""


class PolicyValidationError(GateError):
    """A policy mutation was rejected; carries the individual violations."""

    def __init__(self, violations):
        self.violations = list(violations)
        lines = ", ".join(f"{v.code}({v.subject})" for v in self.violations)
        super().__init__(f"policy rejected: {lines}")


class NoWorkflowAvailable(GateError):
    """No fallback page exists because the user has no usable workflows."""


# --- monitor and oracle -------------------------------------------------

class OracleUnavailable(GateError):
    """The host-state oracle cannot answer; the monitor must fail closed."""


# --- sessions and store -------------------------------------------------

class UnknownSession(GateError):
    """The session id is not present in the store (or already terminated)."""


class LeaseTimeout(GateError):
    """Could not acquire the exclusive session lease in time."""


# --- federation ---------------------------------------------------------

class UnknownServiceProvider(GateError):
    """The IDP has no shared key registered for this service provider."""


class MalformedAssertion(GateError):
    """An assertion token could not be parsed into its canonical fields."""


class UpstreamLoginFailed(GateError):
    """Credential injection against the host application's login page failed."""


class UpstreamUnreachable(GateError):
    """The host application did not answer a forwarded request."""


# --- training -----------------------------------------------------------

class RecordingAlreadyActive(GateError):
    """Only one recording may be live at a time."""


class RecordingNotStopped(GateError):
    """The operation needs a stopped recording (promote, build)."""


class RecordingNotActive(GateError):
    """Steps can only be captured while the recording is live."""


class UnknownRecording(GateError):
    """No recording with this id."""


class EmptyRecording(GateError):
    """A workflow cannot be built from a recording with zero steps."""


class UnknownTransition(GateError):
    """Rule edit addressed a transition or parameter that does not exist."""


class SchemaViolation(GateError):
    """A policy document failed schema checks; carries the element path."""

    def __init__(self, path: str, detail: str):
        self.path = path
        self.detail = detail
        super().__init__(f"{path}: {detail}")


class DanglingReference(GateError):
    """A policy document references an entity it does not define."""
