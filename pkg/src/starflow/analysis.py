"""Trace analysis: coordination-pattern classification, edge-case strategy
detection, and token-consumption CDF reporting.

Detection is rule-based over message structure, the fenced ```report
trailers, and directive metadata (kind, target, turn) — never over free
prose. Traces whose responses lack trailers are classified best-effort and
the resulting instances carry a low_confidence flag.
"""

from dataclasses import dataclass, field

from .agents import WorkerReport, parse_report
from .errors import EmptyInput, IncompleteTrace
from .planner import has_tasks_block
from .trace import TERMINAL_KINDS, TraceEvent, require_terminal

PATTERN_NAMES = (
    "direct_dispatch",
    "planner_mediated",
    "instruction_refinement",
    "agent_substitution",
)

STRATEGY_NAMES = (
    "criteria_tightening",
    "semantic_audit",
    "alignment_escalation",
)


@dataclass(frozen=True)
class PatternInstance:
    pattern: str
    evidence: tuple[int, ...]
    low_confidence: bool = False

    def __post_init__(self):
        if self.pattern not in PATTERN_NAMES:
            raise ValueError(f"unknown pattern: {self.pattern!r}")
        if not self.evidence or list(self.evidence) != sorted(self.evidence):
            raise ValueError("evidence must be non-empty and ordered")


@dataclass(frozen=True)
class StrategyInstance:
    strategy: str
    evidence: tuple[int, ...]
    detail: dict = field(default_factory=dict)
    low_confidence: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGY_NAMES:
            raise ValueError(f"unknown strategy: {self.strategy!r}")
        if not self.evidence or list(self.evidence) != sorted(self.evidence):
            raise ValueError("evidence must be non-empty and ordered")


@dataclass(frozen=True)
class _Send:
    seq: int
    sender: str
    recipient: str
    sender_role: str
    recipient_role: str
    kind: str
    turn: int
    content: str
    report: WorkerReport | None

    @property
    def is_decomposition(self) -> bool:
        return self.kind == "decomposition" or has_tasks_block(self.content)


def _sends(events: list[TraceEvent]) -> list[_Send]:
    out = []
    for e in events:
        if e.kind != "send":
            continue
        p = e.payload
        out.append(_Send(
            seq=e.seq,
            sender=p.get("sender", ""),
            recipient=p.get("recipient", ""),
            sender_role=p.get("sender_role", ""),
            recipient_role=p.get("recipient_role", ""),
            kind=p.get("kind", ""),
            turn=p.get("turn", 0),
            content=p.get("content", ""),
            report=parse_report(p.get("content", "")),
        ))
    return out


def _check_a2a(events: list[TraceEvent]) -> None:
    require_terminal(events)
    modes = {e.mode for e in events}
    if modes != {"a2a"}:
        raise ValueError(f"pattern analysis expects an a2a-mode trace, got {sorted(modes)}")


def _orchestrator_of(sends: list[_Send]) -> str:
    for s in sends:
        if s.sender == "user":
            return s.recipient
    for s in sends:
        if s.sender_role == "orchestrator":
            return s.sender
    return ""


def classify_patterns(events: list[TraceEvent]) -> list[PatternInstance]:
    """Detect the four coordination patterns in one complete a2a trace."""
    _check_a2a(events)
    sends = _sends(events)
    orch = _orchestrator_of(sends)
    instances: list[PatternInstance] = []

    decomps = [s for s in sends
               if s.sender_role == "planner" and s.recipient == orch and s.is_decomposition]
    first_decomp_seq = decomps[0].seq if decomps else None

    worker_instructions = [
        s for s in sends
        if s.sender == orch and s.kind == "instruction"
        and s.recipient_role not in ("planner", "user")
    ]

    # direct_dispatch: the task goes straight to a worker, no decomposition first.
    if worker_instructions:
        first = worker_instructions[0]
        if first_decomp_seq is None or first.seq < first_decomp_seq:
            instances.append(PatternInstance("direct_dispatch", (first.seq,)))

    # planner_mediated: a consult followed by a parseable decomposition.
    for p in decomps:
        consults = [s for s in sends
                    if s.sender == orch and s.recipient == p.sender and s.seq < p.seq]
        evidence = (consults[-1].seq, p.seq) if consults else (p.seq,)
        instances.append(PatternInstance("planner_mediated", evidence))

    responses = [s for s in sends if s.recipient == orch and s.sender != "user"]
    orch_outgoing = [s for s in sends if s.sender == orch and s.recipient != "user"]

    def planner_exchange_between(lo: int, hi: int) -> bool:
        return any(
            lo < s.seq < hi and ("planner" in (s.sender_role, s.recipient_role))
            for s in sends)

    def response_between(worker: str, lo: int, hi: int) -> _Send | None:
        for s in responses:
            if s.sender == worker and lo < s.seq < hi:
                return s
        return None

    # instruction_refinement: same target, new wording, after a non-complete report.
    by_target: dict[str, list[_Send]] = {}
    for s in worker_instructions:
        by_target.setdefault(s.recipient, []).append(s)
    for target, dispatched in by_target.items():
        for i1, i2 in zip(dispatched, dispatched[1:]):
            if i1.content == i2.content:
                continue
            if planner_exchange_between(i1.seq, i2.seq):
                continue
            r = response_between(target, i1.seq, i2.seq)
            if r is None:
                continue
            status = r.report.status if r.report else None
            if status == "complete":
                continue
            instances.append(PatternInstance(
                "instruction_refinement", (i1.seq, r.seq, i2.seq),
                low_confidence=status is None))

    # agent_substitution: a failure answered by re-assigning a different worker.
    for r in responses:
        if r.report is None or r.report.status != "failed":
            continue
        d_r = next((s for s in reversed(worker_instructions)
                    if s.recipient == r.sender and s.seq < r.seq), None)
        if d_r is None:
            continue
        follow = next((s for s in orch_outgoing if s.seq > r.seq), None)
        if follow is None or follow.kind != "instruction":
            continue
        if follow.recipient == r.sender or follow.recipient_role == "planner":
            continue
        if planner_exchange_between(d_r.seq, follow.seq):
            continue
        instances.append(PatternInstance(
            "agent_substitution", (d_r.seq, r.seq, follow.seq)))

    instances.sort(key=lambda i: i.evidence)
    return _dedupe(instances)


def detect_edge_handling(events: list[TraceEvent]) -> list[StrategyInstance]:
    """Detect the three edge-case handling strategies in one a2a trace."""
    _check_a2a(events)
    sends = _sends(events)
    orch = _orchestrator_of(sends)
    instances: list[StrategyInstance] = []

    responses = [s for s in sends if s.recipient == orch and s.sender != "user"]
    orch_outgoing = [s for s in sends if s.sender == orch and s.recipient != "user"]
    submits = [e for e in events if e.kind == "submit"]

    def directive_of(r: _Send) -> _Send | None:
        cands = [s for s in orch_outgoing if s.recipient == r.sender and s.seq < r.seq]
        return cands[-1] if cands else None

    for r in responses:
        if r.report is None:
            continue
        follow = next((s for s in orch_outgoing if s.seq > r.seq), None)

        # criteria_tightening: a partial report answered by a reworded
        # demand to the same worker.
        if r.report.status == "partial" and follow is not None \
                and follow.recipient == r.sender:
            d = directive_of(r)
            if d is None or follow.content != d.content:
                instances.append(StrategyInstance(
                    "criteria_tightening", (r.seq, follow.seq),
                    detail={"notes": r.report.notes or ""}))

        # alignment_escalation: a flagged proxy/mismatch note escalated to
        # the planner as the very next exchange.
        if r.report.status == "complete" and r.report.notes and follow is not None \
                and follow.recipient_role == "planner":
            instances.append(StrategyInstance(
                "alignment_escalation", (r.seq, follow.seq),
                detail={"notes": r.report.notes}))

        # semantic_audit: itemized results partially propagated onward.
        if len(r.report.items) >= 2:
            outputs: list[tuple[int, str]] = [
                (s.seq, s.content) for s in orch_outgoing if s.seq > r.seq]
            outputs += [(e.seq, e.payload.get("answer", "")) for e in submits
                        if e.seq > r.seq]
            outputs.sort()
            for seq, text in outputs:
                kept = tuple(item for item in r.report.items if item in text)
                if not kept:
                    continue
                if len(kept) < len(r.report.items):
                    pruned = tuple(i for i in r.report.items if i not in kept)
                    instances.append(StrategyInstance(
                        "semantic_audit", (r.seq, seq),
                        detail={"kept": list(kept), "pruned": list(pruned)}))
                break

    instances.sort(key=lambda i: i.evidence)
    return _dedupe(instances)


def _dedupe(instances):
    seen = set()
    out = []
    for inst in instances:
        key = (getattr(inst, "pattern", None) or inst.strategy, inst.evidence)
        if key not in seen:
            seen.add(key)
            out.append(inst)
    return out


# -- token CDF -------------------------------------------------------------------

def token_cdf(traces: list[list[TraceEvent]]) -> dict[str, list[tuple[int, float]]]:
    """Per-mode empirical CDF over session token totals.

    Each point is (total, cumulative fraction); the curve is non-decreasing
    and ends at 1.0.
    """
    if not traces:
        raise EmptyInput("token_cdf needs at least one trace")
    totals: dict[str, list[int]] = {}
    for events in traces:
        require_terminal(events)
        mode = events[0].mode if events else "a2a"
        totals.setdefault(mode, []).append(sum(e.tokens for e in events))
    out: dict[str, list[tuple[int, float]]] = {}
    for mode, values in totals.items():
        values.sort()
        n = len(values)
        points: list[tuple[int, float]] = []
        for i, v in enumerate(values, start=1):
            if points and points[-1][0] == v:
                points[-1] = (v, i / n)
            else:
                points.append((v, i / n))
        out[mode] = points
    return out


# -- report rendering --------------------------------------------------------------

def pattern_names(instances: list[PatternInstance]) -> list[str]:
    return sorted({i.pattern for i in instances})


def strategy_names(instances: list[StrategyInstance]) -> list[str]:
    return sorted({i.strategy for i in instances})


def render_instances_text(patterns: list[PatternInstance],
                          strategies: list[StrategyInstance]) -> str:
    lines = ["kind        name                    evidence"]
    for p in patterns:
        flag = " (low confidence)" if p.low_confidence else ""
        lines.append(f"pattern     {p.pattern:<22}  {','.join(map(str, p.evidence))}{flag}")
    for s in strategies:
        extra = ""
        if s.detail.get("pruned"):
            extra = "  pruned=" + "|".join(s.detail["pruned"])
        lines.append(f"strategy    {s.strategy:<22}  {','.join(map(str, s.evidence))}{extra}")
    if len(lines) == 1:
        lines.append("(none)")
    return "\n".join(lines)


def render_instances_csv(patterns: list[PatternInstance],
                         strategies: list[StrategyInstance]) -> str:
    rows = ["kind,name,evidence,low_confidence,detail"]
    for p in patterns:
        rows.append(f"pattern,{p.pattern},{';'.join(map(str, p.evidence))},"
                    f"{str(p.low_confidence).lower()},")
    for s in strategies:
        detail = "|".join(s.detail.get("pruned", []))
        rows.append(f"strategy,{s.strategy},{';'.join(map(str, s.evidence))},"
                    f"{str(s.low_confidence).lower()},{detail}")
    return "\n".join(rows) + "\n"


def render_cdf_text(cdf: dict[str, list[tuple[int, float]]]) -> str:
    lines = ["mode        tokens  cumulative_fraction"]
    for mode in sorted(cdf):
        for total, fraction in cdf[mode]:
            lines.append(f"{mode:<10}  {total:>6}  {fraction:.4f}")
    return "\n".join(lines)


def render_cdf_csv(cdf: dict[str, list[tuple[int, float]]]) -> str:
    rows = ["mode,tokens,cumulative_fraction"]
    for mode in sorted(cdf):
        for total, fraction in cdf[mode]:
            rows.append(f"{mode},{total},{fraction:.6f}")
    return "\n".join(rows) + "\n"
