"""Worker runtime: role toolkits, stub tools, report trailers, worker loop.

Workers block on mentions, optionally invoke one or more tools, and respond
to the orchestrator only. Every domain tool is a deterministic stub: a
fixture lookup keyed on (tool, args) or, for execute_code, an arithmetic
evaluator. Structured results travel in a fenced ```report trailer after
the natural-language body so the trace analyzers never parse free prose.
"""

import ast
import operator
import re
from dataclasses import dataclass, field

from .bus import AgentHandle, MessageBus
from .errors import BusClosed, UnknownRole, UnknownTool, WaitTimeout
from .model import Message, MessageKind, Role, Session
from .planner import has_tasks_block
from .trace import TraceSink

# Role -> domain tool names. The orchestrator's single auxiliary tool is the
# answer submission; the planner coordinates with language alone.
DEFAULT_TOOLKITS: dict[Role, frozenset[str]] = {
    Role.WEB: frozenset({
        "search_google",
        "search_wiki_revisions",
        "search_wiki",
        "search_archived_webpage",
        "browse_url",
        "extract_document_content",
        "ask_question_about_video",
    }),
    Role.DOCUMENT: frozenset({
        "extract_document_content",
        "ask_question_about_image",
        "ask_question_about_audio",
        "ask_question_about_video",
        "execute_code",
    }),
    Role.REASONING_CODING: frozenset({
        "execute_code",
        "extract_excel_content",
        "extract_document_content",
    }),
    Role.PLANNER: frozenset(),
    Role.ORCHESTRATOR: frozenset({"submit_answer"}),
}


@dataclass(frozen=True)
class ToolSet:
    role: Role
    tools: frozenset[str]


def lookup_toolkit(role: Role) -> ToolSet:
    """Default toolkit for a role."""
    try:
        return ToolSet(role=role, tools=DEFAULT_TOOLKITS[Role(role)])
    except (KeyError, ValueError):
        raise UnknownRole(f"no toolkit registered for role {role!r}")


def all_tool_names() -> frozenset[str]:
    names: set[str] = set()
    for tools in DEFAULT_TOOLKITS.values():
        names |= tools
    return frozenset(names)


@dataclass(frozen=True)
class ToolResult:
    tool: str
    output: str
    ok: bool


# -- tool stubs ----------------------------------------------------------------

_BIN_OPS = {
    ast.Add: operator.add,
    ast.Sub: operator.sub,
    ast.Mult: operator.mul,
    ast.Div: operator.truediv,
    ast.FloorDiv: operator.floordiv,
    ast.Mod: operator.mod,
    ast.Pow: operator.pow,
}


def _eval_arithmetic(expr: str):
    """Numbers and + - * / // % ** only; anything else is rejected."""

    def walk(node):
        if isinstance(node, ast.Expression):
            return walk(node.body)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)):
            return node.value
        if isinstance(node, ast.BinOp) and type(node.op) in _BIN_OPS:
            return _BIN_OPS[type(node.op)](walk(node.left), walk(node.right))
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            value = walk(node.operand)
            return -value if isinstance(node.op, ast.USub) else value
        raise ValueError(f"unsupported expression element: {ast.dump(node)[:60]}")

    return walk(ast.parse(expr.strip(), mode="eval"))


def _format_number(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def invoke_tool(toolset: ToolSet, name: str, args: str,
                fixtures: dict[str, dict[str, str]] | None = None) -> ToolResult:
    """Dispatch one stub tool call.

    Unknown names raise; failures inside a known tool come back as
    ok=False results so worker loops never crash on tooling.
    """
    if name not in toolset.tools:
        raise UnknownTool(f"{name!r} not in the {toolset.role.value} toolkit")
    if name == "execute_code":
        try:
            return ToolResult(name, _format_number(_eval_arithmetic(args)), True)
        except (ValueError, SyntaxError, ZeroDivisionError, TypeError) as exc:
            return ToolResult(name, f"execution failed: {exc}", False)
    table = (fixtures or {}).get(name, {})
    key = " ".join(args.split())
    if key in table:
        return ToolResult(name, table[key], True)
    return ToolResult(name, f"no fixture for {name}({key!r})", False)


# -- structured report trailer ---------------------------------------------------

REPORT_STATUSES = ("complete", "partial", "failed")

_REPORT_RE = re.compile(r"```report\n(.*?)```", re.S)


@dataclass(frozen=True)
class WorkerReport:
    status: str
    body: str
    notes: str | None = None
    items: tuple[str, ...] = ()
    proposal: bool = False

    def __post_init__(self):
        if self.status not in REPORT_STATUSES:
            raise ValueError(f"unknown report status: {self.status!r}")
        if self.status == "partial" and not self.notes:
            raise ValueError("partial reports must say what is missing or proxied")


def render_report(report: WorkerReport) -> str:
    """Body first, machine-readable trailer last."""
    lines = [f"status: {report.status}"]
    if report.notes:
        lines.append(f"notes: {report.notes}")
    if report.items:
        lines.append("items: " + "; ".join(report.items))
    if report.proposal:
        lines.append("proposal: yes")
    return f"{report.body}\n\n```report\n" + "\n".join(lines) + "\n```"


def parse_report(content: str) -> WorkerReport | None:
    """Read the last ```report trailer out of a response, if any."""
    matches = _REPORT_RE.findall(content)
    if not matches:
        return None
    fields: dict[str, str] = {}
    for line in matches[-1].splitlines():
        if ":" in line:
            key, value = line.split(":", 1)
            fields[key.strip()] = value.strip()
    status = fields.get("status")
    if status not in REPORT_STATUSES:
        return None
    body = content[: content.rfind("```report")].rstrip()
    items = tuple(part.strip() for part in fields.get("items", "").split(";") if part.strip())
    notes = fields.get("notes") or None
    if status == "partial" and not notes:
        notes = "(unspecified)"
    return WorkerReport(
        status=status,
        body=body,
        notes=notes,
        items=items,
        proposal=fields.get("proposal", "").lower() in ("yes", "true", "1"),
    )


# -- tool-request grammar (backend -> runtime) -----------------------------------

_TOOL_RE = re.compile(r"^tool\s*:\s*(\S+)\s*\nargs\s*:\s*(.*)$", re.S)


def parse_tool_request(text: str) -> tuple[str, str] | None:
    m = _TOOL_RE.match(text.strip())
    if not m:
        return None
    return m.group(1), m.group(2).strip()


STALL_MARKER = "<<stall>>"

MAX_TOOL_CALLS_PER_MENTION = 3


# -- worker loop -----------------------------------------------------------------

@dataclass
class WorkerConfig:
    wait_timeout_s: float = 120.0
    segment_budget: int = 64
    global_history: bool = False
    fixtures: dict[str, dict[str, str]] = field(default_factory=dict)


def run_worker(agent: str, backend, bus: MessageBus, toolset: ToolSet,
               session: Session, sink: TraceSink | None = None,
               prompt_text: str = "", config: WorkerConfig | None = None) -> None:
    """Serve mentions until the bus closes.

    Each mention gets exactly one response, always to the orchestrator; tool
    failures fold into the response instead of crashing the loop.
    """
    config = config or WorkerConfig()
    orchestrator = session.roster.orchestrator
    handle = AgentHandle(bus, agent)
    while True:
        try:
            mention = handle.wait_for_mention(timeout=config.wait_timeout_s)
        except WaitTimeout:
            continue
        except BusClosed:
            return
        response_text, tokens = _answer_mention(agent, backend, toolset, session,
                                                sink, prompt_text, config)
        if response_text is None:
            continue  # scripted stall: swallow the mention
        kind = _response_kind(response_text)
        try:
            msg_id = bus.send_messages(agent, orchestrator, response_text,
                                       kind, turn=mention.turn)
        except BusClosed:
            return
        if sink is not None and not sink.closed:
            report = parse_report(response_text)
            sink.emit("respond", {
                "agent": agent,
                "message_id": msg_id,
                "turn": mention.turn,
                "status": report.status if report else "",
            }, tokens=tokens)


def _response_kind(text: str) -> MessageKind:
    report = parse_report(text)
    if report is not None and report.proposal:
        return MessageKind.ANSWER_PROPOSAL
    if has_tasks_block(text):
        return MessageKind.DECOMPOSITION
    return MessageKind.RESPONSE


def _answer_mention(agent, backend, toolset, session, sink, prompt_text,
                    config) -> tuple[str | None, int]:
    from .backends import complete, render_context  # deferred: backends imports model only

    def build_context(extra: list[tuple[str, str]]):
        view = (session.history.messages if config.global_history
                else session.history.view_for(agent))
        return render_context(prompt_text, view, agent, config.segment_budget) + extra

    tokens = 0
    extra: list[tuple[str, str]] = []
    for _ in range(MAX_TOOL_CALLS_PER_MENTION + 1):
        completion = complete(backend, build_context(extra))
        session.add_usage(agent, completion.usage)
        tokens += completion.usage.total
        text = completion.text
        if text.strip() == STALL_MARKER:
            return None, tokens
        request = parse_tool_request(text)
        if request is None:
            return text, tokens
        name, args = request
        if sink is not None and not sink.closed:
            sink.emit("tool_invoke", {"agent": agent, "tool": name, "args": args})
        try:
            result = invoke_tool(toolset, name, args, config.fixtures)
        except UnknownTool:
            report = WorkerReport(status="failed",
                                  body=f"cannot run {name}: tool unavailable",
                                  notes=f"tool unavailable: {name}")
            return render_report(report), tokens
        if sink is not None and not sink.closed:
            sink.emit("tool_result", {
                "agent": agent, "tool": name,
                "ok": result.ok, "output": result.output,
            })
        extra.append(("user", f"tool result for {name}:\n{result.output}"))
    return (extra[-1][1] if extra else "no response"), tokens
