"""Core session model: roster, messages, history, token accounting.

A session is one query answered by a roster of agents. All inter-agent
traffic is recorded as Message values in an append-only History; the query
enters the history as a synthetic message from the reserved "user" sender,
and the final answer leaves it as a message back to "user", so the history
is a complete record of the session's inputs and outputs.
"""

import itertools
import math
import threading
import time
from dataclasses import dataclass
from enum import Enum

from .errors import ContentTooLarge, EmptyQuery, InvalidRoster, NonMonotonicId

# Reserved sender id for query intake / answer delivery; never part of a roster.
USER_SENDER = "user"

# Messages larger than this are rejected at send time (utf-8 bytes).
MAX_CONTENT_BYTES = 64 * 1024

DEFAULT_BUDGET_S = 30 * 60.0


class Role(str, Enum):
    ORCHESTRATOR = "orchestrator"
    PLANNER = "planner"
    WEB = "web"
    DOCUMENT = "document"
    REASONING_CODING = "reasoning-coding"
    CUSTOM = "custom"


class MessageKind(str, Enum):
    INQUIRY = "inquiry"
    INSTRUCTION = "instruction"
    RESPONSE = "response"
    DECOMPOSITION = "decomposition"
    ANSWER_PROPOSAL = "answer-proposal"


# Kinds only the orchestrator (or the reserved user intake) may send.
DIRECTIVE_KINDS = frozenset({MessageKind.INQUIRY, MessageKind.INSTRUCTION})


def estimate_tokens(text: str) -> int:
    """Deterministic fallback token count: ceil(len/4); 0 iff text is empty."""
    return math.ceil(len(text) / 4)


@dataclass(frozen=True)
class TokenUsage:
    prompt_tokens: int = 0
    completion_tokens: int = 0
    source: str = "estimated"  # "reported" | "estimated"

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("token counts must be non-negative")
        if self.source not in ("reported", "estimated"):
            raise ValueError(f"unknown usage source: {self.source!r}")

    @property
    def total(self) -> int:
        return self.prompt_tokens + self.completion_tokens

    def __add__(self, other: "TokenUsage") -> "TokenUsage":
        # A sum is only "reported" when every part was.
        source = "reported" if self.source == other.source == "reported" else "estimated"
        if self.total == 0:
            source = other.source
        elif other.total == 0:
            source = self.source
        return TokenUsage(
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            source,
        )


@dataclass(frozen=True)
class AgentEntry:
    name: str
    role: Role


@dataclass(frozen=True)
class AgentRoster:
    """Ordered agent entries with exactly one orchestrator."""

    entries: tuple[AgentEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        if len(self.entries) < 2:
            raise InvalidRoster("roster needs the orchestrator plus at least one worker")
        names = [e.name for e in self.entries]
        if len(set(names)) != len(names):
            raise InvalidRoster(f"duplicate agent ids: {names}")
        for name in names:
            if not name:
                raise InvalidRoster("agent id must be non-empty")
            if name == USER_SENDER:
                raise InvalidRoster(f"agent id {USER_SENDER!r} is reserved")
        orchestrators = [e for e in self.entries if e.role is Role.ORCHESTRATOR]
        if len(orchestrators) != 1:
            raise InvalidRoster(f"roster must have exactly one orchestrator, got {len(orchestrators)}")

    @property
    def orchestrator(self) -> str:
        return next(e.name for e in self.entries if e.role is Role.ORCHESTRATOR)

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(e.name for e in self.entries)

    def role_of(self, name: str) -> Role | None:
        for e in self.entries:
            if e.name == name:
                return e.role
        return None

    def first_with_role(self, role: Role) -> str | None:
        for e in self.entries:
            if e.role is role:
                return e.name
        return None

    def workers(self) -> tuple[AgentEntry, ...]:
        return tuple(e for e in self.entries if e.role is not Role.ORCHESTRATOR)


def standard_roster() -> AgentRoster:
    """The default five-agent roster used by packaged scenarios."""
    return AgentRoster(entries=(
        AgentEntry("information_flow_orchestrator", Role.ORCHESTRATOR),
        AgentEntry("planner_agent", Role.PLANNER),
        AgentEntry("web_agent", Role.WEB),
        AgentEntry("document_processing_agent", Role.DOCUMENT),
        AgentEntry("reasoning_coding_agent", Role.REASONING_CODING),
    ))


@dataclass(frozen=True)
class Message:
    """One directed natural-language communication between two agents."""

    id: int
    sender: str
    recipient: str
    content: str
    kind: MessageKind
    turn: int
    token_estimate: int = -1

    def __post_init__(self):
        if self.sender == self.recipient:
            raise ValueError("sender and recipient must differ")
        if self.turn < 0:
            raise ValueError("turn must be >= 0")
        if self.token_estimate < 0:
            object.__setattr__(self, "token_estimate", estimate_tokens(self.content))

    def to_payload(self) -> dict:
        """Serialization used by the JSONL trace schema (field names are frozen)."""
        return {
            "id": self.id,
            "sender": self.sender,
            "recipient": self.recipient,
            "content": self.content,
            "kind": self.kind.value,
            "turn": self.turn,
            "token_estimate": self.token_estimate,
        }


def check_content_size(content: str) -> None:
    if len(content.encode("utf-8")) > MAX_CONTENT_BYTES:
        raise ContentTooLarge(f"content is {len(content.encode('utf-8'))} bytes, cap is {MAX_CONTENT_BYTES}")


class History:
    """Append-only, id-ordered message sequence with per-agent views."""

    def __init__(self):
        self._messages: list[Message] = []

    def append(self, msg: Message) -> None:
        if self._messages and msg.id <= self._messages[-1].id:
            raise NonMonotonicId(f"message id {msg.id} not above last id {self._messages[-1].id}")
        self._messages.append(msg)

    @property
    def messages(self) -> tuple[Message, ...]:
        return tuple(self._messages)

    def __len__(self) -> int:
        return len(self._messages)

    def view_for(self, agent: str) -> tuple[Message, ...]:
        """Messages the agent sent or received, in history order."""
        return tuple(m for m in self._messages if agent in (m.sender, m.recipient))

    def last(self) -> Message | None:
        return self._messages[-1] if self._messages else None


def append_message(history: History, msg: Message) -> History:
    """Append one message; prior prefix is never touched."""
    history.append(msg)
    return history


@dataclass(frozen=True)
class SubmissionRecord:
    answer: str
    submitted_at: float
    reason: str  # "consensus" | "budget_exhausted"
    confirmed_by: str | None = None

    def __post_init__(self):
        if self.reason not in ("consensus", "budget_exhausted"):
            raise ValueError(f"unknown submission reason: {self.reason!r}")


class DirectiveAction(str, Enum):
    INQUIRY = "inquiry"
    INSTRUCTION = "instruction"
    SUBMIT = "submit"


@dataclass(frozen=True)
class Directive:
    """One orchestrator decision: message an agent, or submit the answer."""

    action: DirectiveAction
    target: str | None
    content: str

    def __post_init__(self):
        if (self.action is DirectiveAction.SUBMIT) != (self.target is None):
            raise ValueError("submit directives take no target; others require one")
        if not self.content:
            raise ValueError("directive content must be non-empty")

    @property
    def message_kind(self) -> MessageKind:
        if self.action is DirectiveAction.INQUIRY:
            return MessageKind.INQUIRY
        if self.action is DirectiveAction.INSTRUCTION:
            return MessageKind.INSTRUCTION
        raise ValueError("submit directives carry no message kind")


class Session:
    """One query run: roster, history, budget clock, write-once submission."""

    _ids = itertools.count(1)

    def __init__(self, session_id: str, query: str, roster: AgentRoster,
                 budget_s: float = DEFAULT_BUDGET_S,
                 clock=time.monotonic):
        self.id = session_id
        self.query = query
        self.roster = roster
        self.budget_s = budget_s
        self.clock = clock
        self.started_at = clock()
        self.history = History()
        self.submission: SubmissionRecord | None = None
        self._usage_lock = threading.Lock()
        self._usage: dict[str, TokenUsage] = {}
        self._next_id = 1

    # Message ids are allocated here so the intake message, bus traffic and
    # the final answer message share one strictly increasing sequence.
    def allocate_message_id(self) -> int:
        mid = self._next_id
        self._next_id += 1
        return mid

    def elapsed(self) -> float:
        return self.clock() - self.started_at

    def add_usage(self, agent: str, usage: TokenUsage) -> None:
        with self._usage_lock:
            self._usage[agent] = self._usage.get(agent, TokenUsage()) + usage

    def usage_by_agent(self) -> dict[str, TokenUsage]:
        with self._usage_lock:
            return dict(self._usage)


def new_session(query: str, roster: AgentRoster,
                budget_s: float = DEFAULT_BUDGET_S,
                session_id: str | None = None,
                clock=time.monotonic) -> Session:
    """Create a session and deliver the query to the orchestrator at turn 0."""
    if not query:
        raise EmptyQuery("session query must be non-empty")
    check_content_size(query)
    if session_id is None:
        session_id = f"session-{next(Session._ids)}"
    session = Session(session_id, query, roster, budget_s, clock)
    intake = Message(
        id=session.allocate_message_id(),
        sender=USER_SENDER,
        recipient=roster.orchestrator,
        content=query,
        kind=MessageKind.INSTRUCTION,
        turn=0,
    )
    append_message(session.history, intake)
    return session
