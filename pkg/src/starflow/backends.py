"""Decision backends: scripted policy tables and a remote chat-completion client.

A backend turns an ordered list of role-tagged text segments (the first is
the role prompt, the last is the newest observation) into one completion.
Scripted backends are pure lookup tables keyed on the last observation and
drive every test; the remote backend speaks a standard chat-completion HTTP
API with bounded retries and is only used for live runs.
"""

import os
import re
import time
from dataclasses import dataclass, field
from typing import Callable

import requests

from .errors import BackendFailure, MalformedDecision, ScriptGap
from .model import (
    Directive,
    DirectiveAction,
    Message,
    Session,
    TokenUsage,
    estimate_tokens,
)

Segment = tuple[str, str]  # (chat role, text)

FORMAT_REMINDER = (
    "Reply with exactly one block of lines:\n"
    "action: inquiry|instruction|submit\n"
    "target: <agent id, omit for submit>\n"
    "content: <text>"
)


@dataclass(frozen=True)
class Completion:
    text: str
    usage: TokenUsage


def _estimated_usage(context: list[Segment], response: str) -> TokenUsage:
    prompt_text = "".join(text for _, text in context)
    return TokenUsage(
        prompt_tokens=estimate_tokens(prompt_text),
        completion_tokens=estimate_tokens(response),
        source="estimated",
    )


@dataclass(frozen=True)
class PolicyRule:
    """First-match rule: regex over the last observation -> response text.

    String responses go through match.expand, so they may reference capture
    groups (\\1, \\g<name>). Callable responses receive (match, observation).
    """

    pattern: str
    response: str | Callable[[re.Match, str], str]

    def render(self, match: re.Match, observation: str) -> str:
        if callable(self.response):
            return self.response(match, observation)
        return match.expand(self.response)


class ScriptedBackend:
    """Deterministic table lookup on the last observation; pure."""

    kind = "scripted"

    def __init__(self, rules: list[PolicyRule], name: str = "scripted"):
        self.rules = list(rules)
        self.name = name

    def complete(self, context: list[Segment]) -> Completion:
        if not context:
            raise BackendFailure("empty context")
        observation = context[-1][1]
        for rule in self.rules:
            match = re.search(rule.pattern, observation, re.S)
            if match:
                text = rule.render(match, observation)
                return Completion(text=text, usage=_estimated_usage(context, text))
        raise ScriptGap(
            f"policy {self.name!r} has no rule for observation: {observation[:120]!r}")


class RemoteBackend:
    """Chat-completion HTTP client; temperature pinned to 0, 3 retries."""

    kind = "remote"

    def __init__(self, endpoint: str, model: str, credential_env: str | None = None,
                 max_retries: int = 3, backoff_base_s: float = 0.5,
                 request_timeout_s: float = 60.0):
        self.endpoint = endpoint
        self.model = model
        self.credential_env = credential_env
        self.max_retries = max_retries
        self.backoff_base_s = backoff_base_s
        self.request_timeout_s = request_timeout_s

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        if self.credential_env:
            token = os.environ.get(self.credential_env)
            if token:
                headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, context: list[Segment]) -> Completion:
        payload = {
            "model": self.model,
            "temperature": 0.0,
            "messages": [{"role": role, "content": text} for role, text in context],
        }
        last_error: Exception | None = None
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff_base_s * (2 ** (attempt - 1)))
            try:
                resp = requests.post(self.endpoint, json=payload,
                                     headers=self._headers(),
                                     timeout=self.request_timeout_s)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code in (429,) or resp.status_code >= 500:
                last_error = BackendFailure(f"HTTP {resp.status_code}")
                continue
            if resp.status_code != 200:
                raise BackendFailure(f"HTTP {resp.status_code}: {resp.text[:200]}")
            return self._parse(resp.json(), context)
        raise BackendFailure(f"remote backend failed after {self.max_retries} retries: {last_error}")

    def _parse(self, raw: dict, context: list[Segment]) -> Completion:
        try:
            text = raw["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise BackendFailure(f"malformed completion response: {exc}")
        usage = raw.get("usage")
        if isinstance(usage, dict) and "prompt_tokens" in usage:
            token_usage = TokenUsage(
                prompt_tokens=int(usage.get("prompt_tokens", 0)),
                completion_tokens=int(usage.get("completion_tokens", 0)),
                source="reported",
            )
        else:
            token_usage = _estimated_usage(context, text)
        return Completion(text=text, usage=token_usage)


def complete(backend, context: list[Segment]) -> Completion:
    """Run one generation step on any backend."""
    return backend.complete(context)


# -- directive grammar ---------------------------------------------------------

_FENCE_RE = re.compile(r"```[a-zA-Z]*\n(.*?)```", re.S)
_KEY_RE = re.compile(r"^(action|target|content)\s*:\s*(.*)$")


def parse_directive(text: str) -> Directive:
    """Parse backend output into a directive.

    Accepts a fenced block with "action:"/"target:"/"content:" lines, or the
    same lines bare. Content runs from its key to the end of the block.
    """
    block = text
    fence = _FENCE_RE.search(text)
    if fence:
        block = fence.group(1)
    action: str | None = None
    target: str | None = None
    content_lines: list[str] | None = None
    for line in block.splitlines():
        if content_lines is not None:
            content_lines.append(line)
            continue
        m = _KEY_RE.match(line.strip())
        if not m:
            continue
        key, value = m.group(1), m.group(2)
        if key == "action":
            action = value.strip().lower()
        elif key == "target":
            target = value.strip() or None
        elif key == "content":
            content_lines = [value]
    if action is None or content_lines is None:
        raise MalformedDecision(f"no action/content lines in: {text[:120]!r}")
    content = "\n".join(content_lines).strip()
    if not content:
        raise MalformedDecision("directive content is empty")
    try:
        action_value = DirectiveAction(action)
    except ValueError:
        raise MalformedDecision(f"unknown action: {action!r}")
    if target is not None and target.lower() == "none":
        target = None
    try:
        return Directive(action=action_value, target=target, content=content)
    except ValueError as exc:
        raise MalformedDecision(str(exc))


# -- context assembly ----------------------------------------------------------

def render_context(prompt_text: str, view: tuple[Message, ...], agent: str,
                   segment_budget: int = 64) -> list[Segment]:
    """Role prompt first, then the agent's history view as chat segments.

    Messages the agent sent render as assistant turns, everything else as
    user turns; texts are the raw message contents so scripted policies can
    match them directly. Oldest segments beyond the budget are dropped.
    """
    segments: list[Segment] = [("system", prompt_text)]
    tail = view[-(segment_budget - 1):] if segment_budget > 1 else view[-1:]
    for msg in tail:
        role = "assistant" if msg.sender == agent else "user"
        segments.append((role, msg.content))
    return segments


# -- usage reporting -----------------------------------------------------------

@dataclass(frozen=True)
class UsageReport:
    per_agent: dict[str, TokenUsage] = field(default_factory=dict)

    @property
    def overall(self) -> TokenUsage:
        total = TokenUsage()
        for usage in self.per_agent.values():
            total = total + usage
        return total


def session_usage(session: Session) -> UsageReport:
    """Token totals per agent and overall, summed over recorded completions."""
    return UsageReport(per_agent=session.usage_by_agent())
