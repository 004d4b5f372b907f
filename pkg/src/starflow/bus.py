"""In-process message bus: blocking mention delivery over a star topology.

The bus is the concurrency boundary of the runtime. Sends may arrive from
any thread; each agent blocks on its own mailbox via wait_for_mention. A
single condition variable protects ids, history, mailboxes and the trace
sink so accepted messages are delivered exactly once and per-pair FIFO
order equals send-acceptance order.
"""

import threading
import time
from collections import deque
from dataclasses import dataclass

from .errors import (
    BusClosed,
    DuplicateRegistration,
    TopologyViolation,
    UnknownAgent,
    UnknownRecipient,
    WaitTimeout,
)
from .model import (
    DIRECTIVE_KINDS,
    USER_SENDER,
    Message,
    MessageKind,
    Session,
    check_content_size,
)
from .trace import TraceSink

DEFAULT_WAIT_TIMEOUT_S = 120.0


@dataclass(frozen=True)
class TopologyPolicy:
    """Which directed edges the bus accepts."""

    orchestrator: str
    mode: str = "star"  # "star" | "unrestricted"

    def __post_init__(self):
        if self.mode not in ("star", "unrestricted"):
            raise ValueError(f"unknown topology mode: {self.mode!r}")

    def permits(self, sender: str, recipient: str) -> bool:
        if self.mode == "unrestricted":
            return True
        if sender == USER_SENDER:
            return recipient == self.orchestrator
        return sender == self.orchestrator or recipient == self.orchestrator


def validate_edge(policy: TopologyPolicy, sender: str, recipient: str) -> bool:
    """Pure predicate: may `sender` message `recipient` under this policy?"""
    return policy.permits(sender, recipient)


@dataclass(frozen=True)
class AgentHandle:
    bus: "MessageBus"
    agent: str

    def wait_for_mention(self, timeout: float = DEFAULT_WAIT_TIMEOUT_S) -> Message:
        return self.bus.wait_for_mention(self.agent, timeout)


class MessageBus:
    def __init__(self, session: Session, policy: TopologyPolicy | None = None,
                 sink: TraceSink | None = None):
        self.session = session
        self.policy = policy or TopologyPolicy(orchestrator=session.roster.orchestrator)
        self.sink = sink
        self._cond = threading.Condition()
        self._mailboxes: dict[str, deque[Message]] = {}
        self._closed = False

    # -- registration ---------------------------------------------------------

    def register_agent(self, agent: str) -> AgentHandle:
        if agent not in self.session.roster.names:
            raise UnknownAgent(f"{agent!r} is not in the session roster")
        with self._cond:
            if agent in self._mailboxes:
                raise DuplicateRegistration(f"{agent!r} already registered")
            self._mailboxes[agent] = deque()
        return AgentHandle(self, agent)

    def registered(self, agent: str) -> bool:
        with self._cond:
            return agent in self._mailboxes

    # -- sending --------------------------------------------------------------

    def send_messages(self, sender: str, recipient: str, content: str,
                      kind: MessageKind, turn: int = 0) -> int:
        """Accept or reject one message. Returns the assigned message id.

        Rejections raise and leave history and mailboxes untouched; both
        outcomes are visible in the trace ("send" / "send_rejected").
        """
        kind = MessageKind(kind)
        with self._cond:
            try:
                if self._closed:
                    raise BusClosed("bus closed for new sends")
                if sender != USER_SENDER and sender not in self._mailboxes:
                    raise UnknownAgent(f"sender {sender!r} not registered")
                if recipient not in self._mailboxes:
                    raise UnknownRecipient(f"recipient {recipient!r} not registered")
                check_content_size(content)
                if not self.policy.permits(sender, recipient):
                    raise TopologyViolation(
                        f"{sender} -> {recipient} not permitted in {self.policy.mode} mode")
                if kind in DIRECTIVE_KINDS and sender not in (
                        self.policy.orchestrator, USER_SENDER):
                    raise TopologyViolation(
                        f"kind {kind.value!r} reserved for the orchestrator")
                msg = Message(
                    id=self.session.allocate_message_id(),
                    sender=sender,
                    recipient=recipient,
                    content=content,
                    kind=kind,
                    turn=turn,
                )
            except Exception as exc:
                self._emit("send_rejected", {
                    "sender": sender,
                    "recipient": recipient,
                    "kind": kind.value,
                    "reason": type(exc).__name__,
                    "detail": str(exc),
                })
                raise
            self.session.history.append(msg)
            self._mailboxes[recipient].append(msg)
            payload = msg.to_payload()
            payload["sender_role"] = self._role_of(sender)
            payload["recipient_role"] = self._role_of(recipient)
            self._emit("send", payload)
            self._cond.notify_all()
            return msg.id

    def _role_of(self, agent: str) -> str:
        if agent == USER_SENDER:
            return "user"
        role = self.session.roster.role_of(agent)
        return role.value if role else "unknown"

    def _emit(self, kind: str, payload: dict) -> None:
        if self.sink is not None and not self.sink.closed:
            self.sink.emit(kind, payload)

    # -- receiving ------------------------------------------------------------

    def wait_for_mention(self, agent: str, timeout: float = DEFAULT_WAIT_TIMEOUT_S) -> Message:
        """Block until the oldest queued mention for `agent` is available.

        Queued messages are drained even after close, so every accepted send
        is returned exactly once; BusClosed is raised only on an empty box.
        """
        deadline = time.monotonic() + timeout
        with self._cond:
            if agent not in self._mailboxes:
                raise UnknownAgent(f"{agent!r} not registered")
            while True:
                box = self._mailboxes[agent]
                if box:
                    msg = box.popleft()
                    self._emit("deliver", {"id": msg.id, "recipient": agent})
                    return msg
                if self._closed:
                    raise BusClosed("bus closed while waiting")
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    raise WaitTimeout(f"no mention for {agent!r} within {timeout}s")
                self._cond.wait(remaining)

    # -- lifecycle ------------------------------------------------------------

    def close(self) -> None:
        with self._cond:
            self._closed = True
            self._cond.notify_all()

    @property
    def closed(self) -> bool:
        with self._cond:
            return self._closed
