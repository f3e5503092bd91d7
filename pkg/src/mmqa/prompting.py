"""Loader for versioned prompt resource files.

Prompt text is data, not code: each ``prompts/*.txt`` resource carries a
``#:`` comment header (stripped before use), a ``SYSTEM:`` section and a
``USER:`` section. User sections are ``string.Template`` bodies so literal
braces in the prompts survive substitution.
"""

from __future__ import annotations

import string
from dataclasses import dataclass
from importlib import resources


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system: str
    user: string.Template

    def render_user(self, **slots: str) -> str:
        return self.user.substitute(**slots)


def _read_resource(name: str) -> str:
    return resources.files("mmqa.prompts").joinpath(name).read_text(encoding="utf-8")


def load_prompt(name: str) -> PromptTemplate:
    raw = _read_resource(name)
    lines = [line for line in raw.splitlines() if not line.startswith("#:")]
    text = "\n".join(lines)
    try:
        _, after_system = text.split("SYSTEM:\n", 1)
        system, user = after_system.split("\nUSER:\n", 1)
    except ValueError:
        raise ValueError(f"prompt resource {name!r} must contain SYSTEM: and USER: sections") from None
    return PromptTemplate(name=name, system=system.strip("\n"), user=string.Template(user))
