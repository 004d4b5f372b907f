"""Packaged role prompts, loaded verbatim from resource files."""

from importlib import resources

from .model import Role

_PROMPT_FILES = {
    Role.ORCHESTRATOR: "orchestrator.txt",
    Role.PLANNER: "planner.txt",
    Role.WEB: "web.txt",
    Role.DOCUMENT: "document.txt",
    Role.REASONING_CODING: "reasoning_coding.txt",
}


def load_prompt(role: Role) -> str:
    """Default prompt text for a role, byte-for-byte as packaged."""
    try:
        filename = _PROMPT_FILES[role]
    except KeyError:
        raise KeyError(f"no packaged prompt for role {role!r}; supply one via config")
    return resources.files("starflow.prompts").joinpath(filename).read_text(encoding="utf-8")


def prompt_path(role: Role):
    return resources.files("starflow.prompts").joinpath(_PROMPT_FILES[role])
