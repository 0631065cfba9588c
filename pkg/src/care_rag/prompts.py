"""Prompt templates with named ``{placeholder}`` slots.

Default bodies ship as text files inside the package; a template directory
can override any subset of them by providing files with the same names.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping

from .errors import ConfigError

_SLOT = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")

REQUIRED_PLACEHOLDERS: dict[str, frozenset[str]] = {
    "init": frozenset({"question"}),
    "iter": frozenset({"question", "previous_parameter_answers"}),
    "ref": frozenset({"question", "context_evidences"}),
    "conflict": frozenset({"question", "consolidated_parameter_response", "context_aware_evidence_summary"}),
    "synth": frozenset(
        {"question", "consolidated_parameter_response", "context_aware_evidence_summary", "delta_c", "r_c"}
    ),
    "vanilla": frozenset({"question", "context_evidences"}),
    "repair_classify": frozenset({"question", "gold_answers", "context", "reference_date"}),
    "repair_generate": frozenset(
        {"question", "gold_answers", "context", "reference_date", "category", "rationale"}
    ),
}
PIPELINE_TEMPLATES = ("init", "iter", "ref", "conflict", "synth")


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    body: str

    def __post_init__(self):
        required = REQUIRED_PLACEHOLDERS.get(self.template_id)
        if required is None:
            raise ConfigError(f"unknown template id {self.template_id!r}")
        found = self.placeholders
        if found != required:
            missing, extra = sorted(required - found), sorted(found - required)
            raise ConfigError(
                f"template {self.template_id!r} placeholders mismatch (missing={missing}, unexpected={extra})"
            )

    @property
    def placeholders(self) -> frozenset[str]:
        return frozenset(_SLOT.findall(self.body))

    def render(self, **values: object) -> str:
        missing = self.placeholders - values.keys()
        if missing:
            raise ConfigError(f"template {self.template_id!r} missing values for {sorted(missing)}")
        # Single pass, so braces inside substituted values are never re-expanded.
        out = _SLOT.sub(lambda m: str(values[m.group(1)]), self.body)
        return out.strip()


def default_template(template_id: str) -> PromptTemplate:
    body = resources.files("care_rag").joinpath("templates", f"{template_id}.txt").read_text(encoding="utf-8")
    return PromptTemplate(template_id, body)


TemplateSet = Mapping[str, PromptTemplate]


def load_templates(template_dir: str | os.PathLike | None = None) -> dict[str, PromptTemplate]:
    """Defaults for every template id, overridden by ``{id}.txt`` files in ``template_dir``."""
    templates = {tid: default_template(tid) for tid in REQUIRED_PLACEHOLDERS}
    if template_dir is None:
        return templates
    root = Path(template_dir)
    if not root.is_dir():
        raise ConfigError(f"template directory not found: {root}")
    for tid in REQUIRED_PLACEHOLDERS:
        path = root / f"{tid}.txt"
        if path.is_file():
            templates[tid] = PromptTemplate(tid, path.read_text(encoding="utf-8"))
    return templates


def numbered(items: list[str]) -> str:
    return "\n".join(f"{i}. {item}" for i, item in enumerate(items, 1))


def bulleted(items: list[str]) -> str:
    return "\n".join(f"- {item}" for item in items)
