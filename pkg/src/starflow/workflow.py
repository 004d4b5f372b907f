"""Workflow decision-tree engine: the rule-based comparison arm.

Decompose, execute subtasks in order with per-subtask success states, and
re-decompose the whole task on failure (bounded replans, discarding results
already in hand). Success is judged from the worker's self-reported status,
and a partial report deliberately counts as success: that blind spot is the
documented failure mode this arm exists to reproduce, not a bug to fix.
"""

from dataclasses import dataclass, field

from .agents import all_tool_names, parse_report
from .bus import MessageBus
from .errors import (
    BusClosed,
    MalformedBlock,
    NoTasksBlock,
    ReplansExhausted,
    WaitTimeout,
)
from .model import Message, MessageKind, Role, Session, SubmissionRecord
from .orchestrator import BudgetStatus, enforce_budget, submit_answer
from .planner import SubtaskList, Subtask, lint_subtasks, parse_tasks
from .trace import TraceSink

DEFAULT_MAX_REPLANS = 3

# Subtask text keyword -> executing role. First match wins, web by default.
ROUTING_TABLE: tuple[tuple[tuple[str, ...], Role], ...] = (
    (("compute", "code", "excel", "calculate"), Role.REASONING_CODING),
    (("file", "document", "audio", "image"), Role.DOCUMENT),
    (("search", "web", "browse"), Role.WEB),
)


def route_subtask(text: str, roster) -> str:
    lowered = text.lower()
    for keywords, role in ROUTING_TABLE:
        if any(word in lowered for word in keywords):
            agent = roster.first_with_role(role)
            if agent:
                return agent
    return roster.first_with_role(Role.WEB) or roster.workers()[0].name


@dataclass
class SubtaskState:
    subtask: Subtask
    status: str = "pending"  # pending -> running -> success | failure
    result: str | None = None
    attempt: int = 0

    _TRANSITIONS = {"pending": {"running"}, "running": {"success", "failure"}}

    def advance(self, status: str) -> None:
        allowed = self._TRANSITIONS.get(self.status, set())
        if status not in allowed:
            raise ValueError(f"illegal transition {self.status} -> {status}")
        self.status = status


@dataclass
class ReplanCounter:
    attempts: int = 0
    max_replans: int = DEFAULT_MAX_REPLANS

    def increment(self) -> None:
        if self.attempts >= self.max_replans:
            raise ReplansExhausted(f"replan limit {self.max_replans} reached")
        self.attempts += 1


@dataclass
class WorkflowConfig:
    wait_timeout_s: float = 120.0
    max_replans: int = DEFAULT_MAX_REPLANS


@dataclass
class _Run:
    session: Session
    bus: MessageBus
    sink: TraceSink | None
    config: WorkflowConfig
    turn: int = 0
    trajectory: list[str] = field(default_factory=list)

    def emit(self, kind: str, payload: dict, tokens: int = 0) -> None:
        if self.sink is not None and not self.sink.closed:
            self.sink.emit(kind, payload, tokens)

    def exchange(self, target: str, content: str) -> Message | None:
        """Dispatch one instruction and wait for its response; None on timeout."""
        controller = self.session.roster.orchestrator
        msg_id = self.bus.send_messages(controller, target, content,
                                        MessageKind.INSTRUCTION, turn=self.turn)
        self.emit("dispatch", {
            "agent": controller, "turn": self.turn, "target": target,
            "kind": "instruction", "message_id": msg_id,
        })
        remaining = self.session.budget_s - self.session.elapsed()
        wait_s = max(min(self.config.wait_timeout_s, remaining), 0.001)
        try:
            observed = self.bus.wait_for_mention(controller, timeout=wait_s)
            self.emit("observe", {
                "agent": controller, "turn": self.turn,
                "message_id": observed.id, "sender": observed.sender, "timeout": "",
            })
        except WaitTimeout:
            self.emit("observe", {
                "agent": controller, "turn": self.turn,
                "message_id": 0, "sender": "", "timeout": "yes",
            })
            observed = None
        self.turn += 1
        return observed


def replan(run: _Run, planner: str, counter: ReplanCounter) -> SubtaskList:
    """Re-invoke the planner with the attempted trajectory appended."""
    counter.increment()
    run.emit("decide", {
        "agent": run.session.roster.orchestrator,
        "step": "replan", "attempt": counter.attempts,
    })
    return _plan(run, planner, counter.attempts + 1)


def _plan(run: _Run, planner: str, attempt: int) -> SubtaskList:
    request = f"attempt {attempt}\nDecompose the task into subtasks: {run.session.query}"
    if run.trajectory:
        request += "\nPrevious trajectories:\n" + "\n".join(run.trajectory)
    response = run.exchange(planner, request)
    if response is None:
        raise WaitTimeout("planner did not respond to decomposition request")
    tasks = parse_tasks(response.content)
    violations = lint_subtasks(tasks, run.session.roster.names, all_tool_names())
    for v in violations:
        run.emit("warning", {
            "source": "plan_linter",
            "message": f"subtask {v.subtask_index} names {v.kind} {v.name!r}",
        })
    return tasks


def run_workflow(session: Session, bus: MessageBus,
                 sink: TraceSink | None = None,
                 config: WorkflowConfig | None = None) -> SubmissionRecord:
    """Execute the decision tree to a submission record."""
    config = config or WorkflowConfig()
    run = _Run(session, bus, sink, config)
    planner = session.roster.first_with_role(Role.PLANNER)
    if planner is None:
        raise ValueError("workflow mode requires a planner in the roster")
    counter = ReplanCounter(max_replans=config.max_replans)

    def forced_submit(results: list[SubtaskState]) -> SubmissionRecord:
        run.emit("budget_forced", {"turn": run.turn, "budget_s": session.budget_s})
        completed = [s.result for s in results if s.status == "success" and s.result]
        answer = " / ".join(completed) if completed else "UNRESOLVED"
        return submit_answer(session, answer, "budget_exhausted",
                             bus=bus, sink=sink, turn=run.turn)

    states: list[SubtaskState] = []
    try:
        if enforce_budget(session) is BudgetStatus.MUST_SUBMIT:
            return forced_submit(states)
        run.emit("decide", {"agent": session.roster.orchestrator,
                            "step": "plan", "attempt": counter.attempts + 1})
        tasks = _plan(run, planner, counter.attempts + 1)

        while True:
            # Each (re)plan starts from scratch: prior results are discarded.
            states = [SubtaskState(subtask=s, attempt=counter.attempts + 1)
                      for s in tasks.items]
            failed_state: SubtaskState | None = None
            for state in states:
                if enforce_budget(session) is BudgetStatus.MUST_SUBMIT:
                    return forced_submit(states)
                target = route_subtask(state.subtask.text, session.roster)
                run.emit("decide", {
                    "agent": session.roster.orchestrator, "step": "route",
                    "subtask_index": state.subtask.index, "target": target,
                })
                state.advance("running")
                prior = [f"result of subtask {s.subtask.index}: {s.result}"
                         for s in states if s.status == "success" and s.result]
                content = f"attempt {state.attempt}\nSubtask: {state.subtask.text}"
                if prior:
                    content += "\nContext from completed subtasks:\n" + "\n".join(prior)
                response = run.exchange(target, content)
                if response is None:
                    reported = "failed"
                    body = "(no response before timeout)"
                else:
                    report = parse_report(response.content)
                    reported = report.status if report else "complete"
                    body = report.body if report else response.content
                # The decision tree's judgment rule: only an explicit "failed"
                # fails the subtask; partial results pass straight through.
                judged = "failure" if reported == "failed" else "success"
                run.emit("decide", {
                    "agent": session.roster.orchestrator, "step": "judge",
                    "subtask_index": state.subtask.index,
                    "reported_status": reported, "judged": judged,
                })
                if judged == "failure":
                    state.advance("failure")
                    run.trajectory.append(
                        f"attempt {state.attempt}: subtask {state.subtask.index} "
                        f"({state.subtask.text}) failed: {body[:200]}")
                    failed_state = state
                    break
                state.result = body
                state.advance("success")

            if failed_state is None:
                break
            try:
                tasks = replan(run, planner, counter)
            except ReplansExhausted:
                return forced_submit(states)

        # Plan completed: ask the planner to compress results into the answer.
        run.emit("decide", {"agent": session.roster.orchestrator, "step": "assemble"})
        results = "\n".join(
            f"result of subtask {s.subtask.index}: {s.result}" for s in states)
        response = run.exchange(
            planner,
            f"Based on these results, give the one-line final answer for: "
            f"{session.query}\n{results}")
        if response is None:
            return forced_submit(states)
        report = parse_report(response.content)
        answer = (report.body if report else response.content).strip()
        return submit_answer(session, answer, "consensus", confirmed_by=planner,
                             bus=bus, sink=sink, turn=run.turn)
    except (NoTasksBlock, MalformedBlock) as exc:
        run.emit("warning", {"source": "workflow", "message": str(exc)})
        return forced_submit(states)
    except (WaitTimeout, BusClosed):
        return forced_submit(states)
