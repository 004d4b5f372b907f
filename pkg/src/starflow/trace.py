"""Execution trace events and the JSONL sink.

One event per line, flushed on write. The schema is frozen (golden-file
tested): field order is seq, session, mode, kind, payload, tokens. Scripted
runs carry logical sequence numbers only, never wall-clock values, so a
re-run of the same scenario produces a byte-identical file.
"""

import io
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .errors import IncompleteTrace, SinkClosed

EVENT_KINDS = frozenset({
    "send", "send_rejected", "deliver", "decide", "dispatch", "observe",
    "tool_invoke", "tool_result", "respond", "submit", "budget_forced",
    "warning",
})

TERMINAL_KINDS = frozenset({"submit", "budget_forced"})


@dataclass(frozen=True)
class TraceEvent:
    seq: int
    session: str
    mode: str  # "a2a" | "workflow"
    kind: str
    payload: dict = field(default_factory=dict)
    tokens: int = 0

    def __post_init__(self):
        if self.kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind: {self.kind!r}")
        if self.mode not in ("a2a", "workflow"):
            raise ValueError(f"unknown mode: {self.mode!r}")
        if self.tokens < 0:
            raise ValueError("tokens must be >= 0")

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "session": self.session,
                "mode": self.mode,
                "kind": self.kind,
                "payload": self.payload,
                "tokens": self.tokens,
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "TraceEvent":
        raw = json.loads(line)
        return cls(
            seq=raw["seq"],
            session=raw["session"],
            mode=raw["mode"],
            kind=raw["kind"],
            payload=raw.get("payload", {}),
            tokens=raw.get("tokens", 0),
        )


class TraceSink:
    """Single-writer, flush-on-write JSONL sink for one session."""

    def __init__(self, path: str | Path | None, session_id: str, mode: str):
        self.session_id = session_id
        self.mode = mode
        self._lock = threading.Lock()
        self._seq = 0
        self._closed = False
        self._events: list[TraceEvent] = []
        self._fh: io.TextIOBase | None = None
        if path is not None:
            self.path = Path(path)
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._fh = open(self.path, "w", encoding="utf-8")
        else:
            self.path = None

    def emit(self, kind: str, payload: dict | None = None, tokens: int = 0) -> TraceEvent:
        """Allocate the next seq and record the event."""
        with self._lock:
            event = TraceEvent(
                seq=self._seq + 1,
                session=self.session_id,
                mode=self.mode,
                kind=kind,
                payload=payload or {},
                tokens=tokens,
            )
            self._record_locked(event)
            return event

    def record_event(self, event: TraceEvent) -> None:
        """Append a pre-built event; its seq must be fresh (strictly increasing)."""
        with self._lock:
            self._record_locked(event)

    def _record_locked(self, event: TraceEvent) -> None:
        if self._closed:
            raise SinkClosed("trace sink is closed")
        if event.seq <= self._seq:
            raise ValueError(f"stale event seq {event.seq}; last was {self._seq}")
        self._seq = event.seq
        self._events.append(event)
        if self._fh is not None:
            self._fh.write(event.to_json() + "\n")
            self._fh.flush()

    @property
    def events(self) -> tuple[TraceEvent, ...]:
        with self._lock:
            return tuple(self._events)

    @property
    def closed(self) -> bool:
        return self._closed

    def close(self) -> None:
        with self._lock:
            if self._closed:
                return
            self._closed = True
            if self._fh is not None:
                self._fh.close()
                self._fh = None


def record_event(sink: TraceSink, event: TraceEvent) -> None:
    sink.record_event(event)


def load_trace(path: str | Path) -> list[TraceEvent]:
    """Read a JSONL trace file back into events."""
    events = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                events.append(TraceEvent.from_json(line))
    return events


def dump_trace(events: list[TraceEvent]) -> str:
    return "".join(e.to_json() + "\n" for e in events)


def require_terminal(events: list[TraceEvent]) -> None:
    if not any(e.kind in TERMINAL_KINDS for e in events):
        raise IncompleteTrace("trace has no submit/budget_forced terminal event")


def trace_usage(events: list[TraceEvent]) -> dict[str, int]:
    """Token totals per agent as recorded on decide/respond events."""
    totals: dict[str, int] = {}
    for e in events:
        if e.tokens:
            agent = e.payload.get("agent", "?")
            totals[agent] = totals.get(agent, 0) + e.tokens
    return totals


def trace_total_tokens(events: list[TraceEvent]) -> int:
    return sum(e.tokens for e in events)
