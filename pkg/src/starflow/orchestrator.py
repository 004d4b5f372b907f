"""The information-flow orchestrator loop.

One sequential controller: decide a directive from the full history, dispatch
it over the bus, wait for exactly one mention, re-decide. The loop ends when
a submit directive passes the consensus check or the time budget runs out,
at which point the write-once submission record is stored, the final answer
is appended to the history as a message back to "user", and the bus closes.
"""

import re
import time
from dataclasses import dataclass
from enum import Enum

from .bus import MessageBus
from .errors import (
    AlreadySubmitted,
    BusClosed,
    ContentTooLarge,
    InvalidSubmission,
    MalformedDecision,
    TopologyViolation,
    UnknownRecipient,
    WaitTimeout,
)
from .model import (
    USER_SENDER,
    Directive,
    DirectiveAction,
    Message,
    MessageKind,
    Role,
    Session,
    SubmissionRecord,
    TokenUsage,
)
from .trace import TraceSink

UNRESOLVED_ANSWER = "UNRESOLVED"

# Responses that count as agreement even when they do not repeat the candidate.
_AFFIRMATIVE_RE = re.compile(r"^\s*(confirmed|yes|agreed|correct)\b", re.I)


@dataclass(frozen=True)
class PromptProfile:
    role_name: str
    prompt_text: str

    def __post_init__(self):
        if not self.prompt_text:
            raise ValueError("prompt text must be non-empty")


class BudgetStatus(Enum):
    WITHIN_BUDGET = "within_budget"
    MUST_SUBMIT = "must_submit"


@dataclass
class OrchestratorConfig:
    wait_timeout_s: float = 120.0
    segment_budget: int = 64
    decide_reprompts: int = 2


def enforce_budget(session: Session, clock=None) -> BudgetStatus:
    """Pure with respect to the clock reading: must submit once elapsed >= budget."""
    now = clock() if clock is not None else session.clock()
    elapsed = now - session.started_at
    if elapsed >= session.budget_s:
        return BudgetStatus.MUST_SUBMIT
    return BudgetStatus.WITHIN_BUDGET


def best_so_far(session: Session) -> str:
    """Most recent answer proposal in the history, or the fixed placeholder."""
    for msg in reversed(session.history.messages):
        if msg.kind is MessageKind.ANSWER_PROPOSAL:
            return msg.content.split("```report")[0].strip() or UNRESOLVED_ANSWER
    return UNRESOLVED_ANSWER


def submit_answer(session: Session, answer: str, reason: str,
                  confirmed_by: str | None = None,
                  bus: MessageBus | None = None,
                  sink: TraceSink | None = None,
                  turn: int = 0) -> SubmissionRecord:
    """Store the write-once submission, mirror it into history, close the bus."""
    if session.submission is not None:
        raise AlreadySubmitted("session already has a submission")
    if reason == "consensus" and not confirmed_by:
        raise InvalidSubmission("consensus submissions must name the confirming agent")
    record = SubmissionRecord(
        answer=answer,
        submitted_at=time.monotonic(),
        reason=reason,
        confirmed_by=confirmed_by,
    )
    session.submission = record
    final = Message(
        id=session.allocate_message_id(),
        sender=session.roster.orchestrator,
        recipient=USER_SENDER,
        content=answer,
        kind=MessageKind.INSTRUCTION,
        turn=turn,
    )
    session.history.append(final)
    if sink is not None and not sink.closed:
        sink.emit("submit", {
            "agent": session.roster.orchestrator,
            "answer": answer,
            "reason": reason,
            "confirmed_by": confirmed_by or "",
            "message_id": final.id,
            "turn": turn,
        })
    if bus is not None:
        bus.close()
    return record


def decide_next(backend, view: tuple[Message, ...], query: str,
                prompt: PromptProfile,
                config: OrchestratorConfig | None = None) -> tuple[Directive, TokenUsage]:
    """Generate and parse one directive; bounded re-prompting on bad output."""
    from .backends import FORMAT_REMINDER, complete, parse_directive, render_context

    config = config or OrchestratorConfig()
    context = render_context(prompt.prompt_text, view, prompt.role_name,
                             config.segment_budget)
    usage = TokenUsage()
    last_error: MalformedDecision | None = None
    for attempt in range(config.decide_reprompts + 1):
        completion = complete(backend, context)
        usage = usage + completion.usage
        try:
            directive = parse_directive(completion.text)
            return directive, usage
        except MalformedDecision as exc:
            last_error = exc
            context = context + [("user", FORMAT_REMINDER)]
    raise MalformedDecision(
        f"unparseable after {config.decide_reprompts} re-prompts: {last_error}")


def _normalize(text: str) -> str:
    return " ".join(text.split()).casefold()


def find_confirmation(session: Session, candidate: str) -> str | None:
    """Agent that affirmed the candidate answer after receiving it, if any.

    Consensus requires that the orchestrator sent the candidate to some agent
    and got an affirmative reply: either the candidate echoed back, or an
    explicit agreement marker.
    """
    orchestrator = session.roster.orchestrator
    needle = _normalize(candidate)
    if not needle:
        return None
    sent_to: dict[str, int] = {}
    best: str | None = None
    for msg in session.history.messages:
        if msg.sender == orchestrator and msg.recipient != USER_SENDER:
            if needle in _normalize(msg.content):
                sent_to[msg.recipient] = msg.id
        elif msg.recipient == orchestrator and msg.sender in sent_to:
            body = msg.content.split("```report")[0]
            if needle in _normalize(body) or _AFFIRMATIVE_RE.match(body):
                best = msg.sender
    return best


def _fallback_target(session: Session) -> str:
    planner = session.roster.first_with_role(Role.PLANNER)
    if planner:
        return planner
    return session.roster.workers()[0].name


def orchestrate(session: Session, backend, bus: MessageBus,
                prompt: PromptProfile,
                sink: TraceSink | None = None,
                config: OrchestratorConfig | None = None) -> SubmissionRecord:
    """Run the decide/dispatch/observe loop to a submission record."""
    config = config or OrchestratorConfig()
    orchestrator = session.roster.orchestrator
    turn = 0

    def forced_submit() -> SubmissionRecord:
        if sink is not None and not sink.closed:
            sink.emit("budget_forced", {"turn": turn, "budget_s": session.budget_s})
        return submit_answer(session, best_so_far(session), "budget_exhausted",
                             bus=bus, sink=sink, turn=turn)

    while True:
        if enforce_budget(session) is BudgetStatus.MUST_SUBMIT:
            return forced_submit()

        try:
            directive, usage = decide_next(backend, session.history.messages,
                                           session.query, prompt, config)
        except MalformedDecision:
            directive = Directive(DirectiveAction.INQUIRY, _fallback_target(session),
                                  "status?")
            usage = TokenUsage()
        session.add_usage(orchestrator, usage)
        if sink is not None and not sink.closed:
            sink.emit("decide", {
                "agent": orchestrator,
                "turn": turn,
                "action": directive.action.value,
                "target": directive.target or "",
                "content": directive.content,
            }, tokens=usage.total)

        if directive.action is DirectiveAction.SUBMIT:
            confirmed_by = find_confirmation(session, directive.content)
            if confirmed_by is not None:
                return submit_answer(session, directive.content, "consensus",
                                     confirmed_by, bus=bus, sink=sink, turn=turn)
            # No consensus on record yet: push the candidate out for
            # confirmation instead of submitting blind.
            directive = Directive(
                DirectiveAction.INQUIRY,
                _last_responder(session) or _fallback_target(session),
                f"confirm final answer: {directive.content}",
            )

        try:
            msg_id = bus.send_messages(orchestrator, directive.target,
                                       directive.content, directive.message_kind,
                                       turn=turn)
            if sink is not None and not sink.closed:
                sink.emit("dispatch", {
                    "agent": orchestrator,
                    "turn": turn,
                    "target": directive.target,
                    "kind": directive.message_kind.value,
                    "message_id": msg_id,
                })
        except (TopologyViolation, UnknownRecipient, ContentTooLarge):
            # Rejected sends are observations, not crashes; the bus already
            # traced the rejection.
            turn += 1
            continue
        except BusClosed:
            return forced_submit()

        remaining = session.budget_s - session.elapsed()
        wait_s = max(min(config.wait_timeout_s, remaining), 0.001)
        try:
            observed = bus.wait_for_mention(orchestrator, timeout=wait_s)
            if sink is not None and not sink.closed:
                sink.emit("observe", {
                    "agent": orchestrator,
                    "turn": turn,
                    "message_id": observed.id,
                    "sender": observed.sender,
                    "timeout": "",
                })
        except WaitTimeout:
            if sink is not None and not sink.closed:
                sink.emit("observe", {
                    "agent": orchestrator,
                    "turn": turn,
                    "message_id": 0,
                    "sender": "",
                    "timeout": "yes",
                })
        except BusClosed:
            return forced_submit()
        turn += 1


def _last_responder(session: Session) -> str | None:
    orchestrator = session.roster.orchestrator
    for msg in reversed(session.history.messages):
        if msg.recipient == orchestrator and msg.sender != USER_SENDER:
            return msg.sender
    return None
