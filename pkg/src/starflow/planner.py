"""Task-decomposition tag format: parser, canonical serializer, and linter.

The planner emits a numbered list of subtasks inside <tasks> tags with one
<task> child per subtask. Only the first well-formed block in a text is
honored; the linter flags subtask texts that name roster agents or tools
(plans must leave agent/tool choice to the executor).
"""

import re
from dataclasses import dataclass

from .errors import MalformedBlock, NoTasksBlock

# Tag sequences that would break round-tripping if embedded in a task text.
_RESERVED = ("<tasks>", "</tasks>", "<task>", "</task>")

_TASK_RE = re.compile(r"<task>(.*?)</task>", re.S)


@dataclass(frozen=True)
class Subtask:
    index: int
    text: str

    def __post_init__(self):
        if self.index < 1:
            raise ValueError("subtask index must be >= 1")
        if not self.text:
            raise ValueError("subtask text must be non-empty")


@dataclass(frozen=True)
class SubtaskList:
    items: tuple[Subtask, ...]

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))
        if not self.items:
            raise ValueError("subtask list must be non-empty")
        for i, item in enumerate(self.items, start=1):
            if item.index != i:
                raise ValueError(f"subtask indices must be 1..N contiguous, got {item.index} at {i}")

    @property
    def texts(self) -> tuple[str, ...]:
        return tuple(item.text for item in self.items)

    def __len__(self) -> int:
        return len(self.items)


def subtasks(*texts: str) -> SubtaskList:
    return SubtaskList(items=tuple(Subtask(i, t) for i, t in enumerate(texts, start=1)))


def parse_tasks(text: str) -> SubtaskList:
    """Extract the first well-formed <tasks> block; surrounding prose is ignored."""
    open_pos = text.find("<tasks>")
    if open_pos < 0:
        raise NoTasksBlock("no <tasks> block found")
    body_start = open_pos + len("<tasks>")
    close_pos = text.find("</tasks>", body_start)
    if close_pos < 0:
        raise MalformedBlock("unclosed <tasks> block")
    body = text[body_start:close_pos]
    if "<tasks>" in body:
        raise MalformedBlock("nested <tasks> blocks")

    # Stray prose between children is tolerated (models number their lists);
    # an opening <task> that never closes is not.
    items: list[Subtask] = []
    cursor = 0
    for m in _TASK_RE.finditer(body):
        inner = m.group(1)
        if "<task>" in inner:
            raise MalformedBlock("nested <task> tags")
        task_text = inner.strip()
        if not task_text:
            raise MalformedBlock("empty <task> entry")
        items.append(Subtask(len(items) + 1, task_text))
        cursor = m.end()
    if "<task>" in body[cursor:]:
        raise MalformedBlock("unclosed <task> tag")
    if not items:
        raise MalformedBlock("empty <tasks> block")
    return SubtaskList(items=tuple(items))


def has_tasks_block(text: str) -> bool:
    try:
        parse_tasks(text)
        return True
    except (NoTasksBlock, MalformedBlock):
        return False


def render_tasks(tasks: SubtaskList) -> str:
    """Canonical serialization; parse_tasks(render_tasks(x)) == x."""
    for item in tasks.items:
        if item.text != item.text.strip():
            raise ValueError(f"task text has outer whitespace: {item.text!r}")
        for tag in _RESERVED:
            if tag in item.text:
                raise ValueError(f"task text contains reserved tag {tag}: {item.text!r}")
    inner = "".join(f"<task>{item.text}</task>" for item in tasks.items)
    return f"<tasks>{inner}</tasks>"


@dataclass(frozen=True)
class Violation:
    subtask_index: int
    kind: str  # "agent" | "tool"
    name: str


def lint_subtasks(tasks: SubtaskList, agent_names, tool_names) -> list[Violation]:
    """Flag subtasks that name a roster agent or a registered tool.

    Case-insensitive whole-word matches only, so prose like "search the web"
    never trips on an agent id like "web_agent".
    """
    checks = [(name, "agent") for name in agent_names] + \
             [(name, "tool") for name in tool_names]
    violations: list[Violation] = []
    for item in tasks.items:
        for name, kind in checks:
            if re.search(rf"\b{re.escape(name)}\b", item.text, re.I):
                violations.append(Violation(item.index, kind, name))
    return violations
