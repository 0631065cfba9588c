"""Strict parsers for the structured parts of model completions."""

from __future__ import annotations

import re
from dataclasses import dataclass

from .errors import ParseError

# Accepts "Conflict: 1", "conflict:0", and the "Conflict Flag (delta_c): 1" form.
_CONFLICT_RE = re.compile(r"conflict(?:\s+flag)?(?:\s*\([^)\n]*\))?\s*\**\s*:\s*\**\s*([01])(?!\d)", re.I)
_EDGE_JUNK = " \t\r\n*-.,;:"

NO_RATIONALE = "(no rationale given)"


def parse_conflict(raw: str) -> tuple[int, str]:
    """Return ``(flag, rationale)`` from a detector completion.

    The first line carrying a conflict flag decides it; the rationale is every
    other piece of text, trimmed. Raises :class:`ParseError` when no flag line
    exists.
    """
    lines = raw.splitlines()
    for idx, line in enumerate(lines):
        m = _CONFLICT_RE.search(line)
        if m is None:
            continue
        flag = int(m.group(1))
        rest_of_line = (line[: m.start()] + " " + line[m.end():]).strip(_EDGE_JUNK)
        pieces = [*lines[:idx], rest_of_line, *lines[idx + 1:]]
        rationale = "\n".join(p for p in pieces if p.strip()).strip()
        return flag, rationale or NO_RATIONALE
    raise ParseError("no 'Conflict: 0|1' line in detector output", raw)


_SYNTH_LABELS = {
    "final answer": "final_answer",
    "reasoning for final answer": "reasoning",
    "ambiguity/uncertainty assessment": "uncertainty",
}
_SYNTH_RE = re.compile(
    r"^[ \t]*(?:[-*•][ \t]*)?(?:\*\*)?"
    r"(final answer|reasoning for final answer|ambiguity/uncertainty assessment)"
    r"(?:\*\*)?[ \t]*:(?:\*\*)?[ \t]*",
    re.I | re.M,
)


@dataclass
class SynthesisOutput:
    final_answer: str
    reasoning: str
    uncertainty: str
    warnings: list[str]


def parse_synthesis(raw: str) -> SynthesisOutput:
    sections: dict[str, str] = {}
    matches = list(_SYNTH_RE.finditer(raw))
    for i, m in enumerate(matches):
        key = _SYNTH_LABELS[m.group(1).lower()]
        end = matches[i + 1].start() if i + 1 < len(matches) else len(raw)
        sections.setdefault(key, raw[m.end():end].strip())
    warnings = []
    final = sections.get("final_answer")
    if not final:
        warnings.append("synthesis output lacks a 'Final Answer:' section; using full completion")
        final = raw.strip()
    return SynthesisOutput(
        final_answer=final,
        reasoning=sections.get("reasoning", ""),
        uncertainty=sections.get("uncertainty", ""),
        warnings=warnings,
    )


_FLAG_RE = re.compile(r"^\s*(?:[-*]\s*)?\**flag\**\s*:\s*\**\s*([01])(?!\d)", re.I | re.M)
_CATEGORY_RE = re.compile(r"^\s*(?:[-*]\s*)?\**category\**\s*:\s*\**\s*(mismatch|outdated|both|none)\b", re.I | re.M)
_RATIONALE_RE = re.compile(r"^\s*(?:[-*]\s*)?\**rationale\**\s*:\s*(.*)", re.I | re.M | re.S)
_REPAIRED_ANSWER_RE = re.compile(r"^\s*(?:[-*]\s*)?\**repaired answer\**\s*:[ \t]*(.*)$", re.I | re.M)
_REPAIRED_QUESTION_RE = re.compile(r"^\s*(?:[-*]\s*)?\**repaired question\**\s*:[ \t]*(.*)$", re.I | re.M)


def parse_repair_classification(raw: str) -> tuple[int, str, str]:
    """Return ``(gamma, category, rationale)``; gamma 0 always maps to category ``none``."""
    flag = _FLAG_RE.search(raw)
    if flag is None:
        raise ParseError("no 'Flag: 0|1' line in repair classifier output", raw)
    gamma = int(flag.group(1))
    cat = _CATEGORY_RE.search(raw)
    category = cat.group(1).lower() if cat else None
    if gamma == 1 and category in (None, "none"):
        raise ParseError("flagged instance lacks a flaw category", raw)
    if gamma == 0:
        category = "none"
    rat = _RATIONALE_RE.search(raw)
    rationale = rat.group(1).strip() if rat else ""
    return gamma, category, rationale


_NO_CHANGE = {"", "(no change)", "no change", "none", "n/a"}


def parse_repair_generation(raw: str) -> tuple[str, str | None]:
    """Return ``(repaired_answer, repaired_question_or_None)``."""
    ans = _REPAIRED_ANSWER_RE.search(raw)
    if ans is None or not ans.group(1).strip():
        raise ParseError("no 'Repaired Answer:' line in repair output", raw)
    question = None
    q = _REPAIRED_QUESTION_RE.search(raw)
    if q is not None:
        text = q.group(1).strip()
        if text.lower() not in _NO_CHANGE and not text.lower().startswith("(no change"):
            question = text
    return ans.group(1).strip(), question
