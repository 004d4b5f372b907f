"""Exception types shared across the runtime.

Every error raised by the package derives from StarflowError so callers can
catch runtime failures in one clause without swallowing programming errors.
"""


class StarflowError(Exception):
    """Base class for all runtime errors."""


# -- session / model ---------------------------------------------------------

class InvalidRoster(StarflowError):
    """Roster violates its invariants (missing/duplicate orchestrator, dup ids)."""


class EmptyQuery(StarflowError):
    """Session query text is empty."""


class NonMonotonicId(StarflowError):
    """Message id does not strictly increase the history sequence."""


class ContentTooLarge(StarflowError):
    """Message content exceeds the configured size cap."""


# -- bus ----------------------------------------------------------------------

class DuplicateRegistration(StarflowError):
    """Agent already holds a mailbox on this bus."""


class UnknownAgent(StarflowError):
    """Agent is not part of the session roster."""


class UnknownRecipient(StarflowError):
    """Recipient has no mailbox on this bus."""


class TopologyViolation(StarflowError):
    """Send rejected because the edge is not permitted by the topology policy."""


class WaitTimeout(StarflowError):
    """wait_for_mention elapsed with an empty mailbox."""


class BusClosed(StarflowError):
    """Bus was closed (session ended) while sending or waiting."""


# -- backends / decisions -----------------------------------------------------

class BackendFailure(StarflowError):
    """Decision backend unreachable or invalid after retries."""


class ScriptGap(StarflowError):
    """Scripted policy has no rule for the observation; a test bug, surfaced loudly."""


class MalformedDecision(StarflowError):
    """Backend output could not be parsed into a directive."""


# -- orchestrator -------------------------------------------------------------

class AlreadySubmitted(StarflowError):
    """A submission record already exists for this session."""


class InvalidSubmission(StarflowError):
    """Submission record violates its invariants (consensus without confirmer)."""


# -- agents / tools -----------------------------------------------------------

class UnknownTool(StarflowError):
    """Tool name is not in the invoking role's toolset."""


class UnknownRole(StarflowError):
    """Role has no registered toolkit."""


# -- planner protocol ---------------------------------------------------------

class NoTasksBlock(StarflowError):
    """Text contains no <tasks> block."""


class MalformedBlock(StarflowError):
    """<tasks> block is unclosed, empty, or nested."""


# -- workflow -----------------------------------------------------------------

class ReplansExhausted(StarflowError):
    """Replan counter reached its maximum."""


# -- trace --------------------------------------------------------------------

class SinkClosed(StarflowError):
    """Trace sink no longer accepts events."""


class IncompleteTrace(StarflowError):
    """Trace has no terminal submit/budget_forced event."""


class EmptyInput(StarflowError):
    """Analysis called with no traces."""


# -- scenarios ----------------------------------------------------------------

class SchemaError(StarflowError):
    """Scenario file failed schema validation; message carries field/line info."""


class InvalidParams(StarflowError):
    """Synthetic scenario parameters out of range."""
