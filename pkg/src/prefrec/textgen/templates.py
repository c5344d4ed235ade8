"""Prompt templates with ``{name}`` slots, and the bundled default sets."""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from ..errors import ConfigError, TemplateError, ValidationError

SLOT_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

STAGES = ("partial_summary", "final_summary", "summary", "rec_info")


def find_slots(body: str) -> frozenset[str]:
    return frozenset(SLOT_RE.findall(body))


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str
    required_vars: frozenset[str]

    def __post_init__(self):
        if find_slots(self.body) != frozenset(self.required_vars):
            raise ValidationError(
                f"template {self.name!r}: required_vars {sorted(self.required_vars)} "
                f"do not match slots {sorted(find_slots(self.body))}"
            )

    @classmethod
    def from_body(cls, name: str, body: str) -> "PromptTemplate":
        return cls(name, body, find_slots(body))


def render_prompt(template: PromptTemplate, variables: dict) -> str:
    """Substitute every slot in one pass.

    Values are inserted verbatim, so braces inside them are never treated as
    slots.
    """
    for slot in sorted(template.required_vars):
        if slot not in variables:
            raise TemplateError(slot)
    return SLOT_RE.sub(lambda m: str(variables[m.group(1)]), template.body)


@dataclass(frozen=True)
class TemplateSet:
    corpus: str
    partial_summary: PromptTemplate
    final_summary: PromptTemplate
    summary: PromptTemplate
    rec_info: PromptTemplate

    @classmethod
    def load(cls, corpus: str = "tabidachi", override_dir=None) -> "TemplateSet":
        """Load the bundled set for ``corpus``; files in ``override_dir`` win."""
        bundled = resources.files("prefrec") / "templates" / corpus
        if not bundled.is_dir() and override_dir is None:
            raise ConfigError(f"no bundled templates for corpus {corpus!r}")
        found = {}
        for stage in STAGES:
            body = None
            if override_dir is not None:
                p = Path(override_dir) / f"{stage}.txt"
                if p.is_file():
                    body = p.read_text(encoding="utf-8")
            if body is None:
                res = bundled / f"{stage}.txt"
                if not res.is_file():
                    res = resources.files("prefrec") / "templates" / "tabidachi" / f"{stage}.txt"
                body = res.read_text(encoding="utf-8")
            found[stage] = PromptTemplate.from_body(f"{corpus}/{stage}", body)
        return cls(corpus=corpus, **found)
