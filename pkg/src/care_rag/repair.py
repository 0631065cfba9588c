"""QA repair: flag flawed gold answers, classify the flaw, and add a corrected answer.

Repair never removes a gold answer. The corrected answer is appended to the
instance's answer set, so any prediction that matched before still matches.
"""

from __future__ import annotations

import datetime as _dt
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Any

from .backend import Backend, BackendCallLog
from .data import QAInstance, dumps_line, read_jsonl
from .errors import CareRagError, ParseError, RepairError
from .parsing import parse_repair_classification, parse_repair_generation
from .prompts import bulleted, load_templates
from .retrieval import Retriever

CATEGORIES = ("mismatch", "outdated", "both", "none")
NO_CONTEXT = "(none)"


@dataclass
class RepairRecord:
    id: str
    gamma: int
    category: str
    original_answers: list[str]
    rationale: str = ""
    repaired_answers: list[str] | None = None
    repaired_question: str | None = None
    detector_raw: str = ""
    repair_raw: str | None = None

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise RepairError(f"unknown flaw category {self.category!r}")
        if (self.gamma == 0) != (self.category == "none"):
            raise RepairError(f"gamma={self.gamma} inconsistent with category {self.category!r}")
        if self.gamma == 0 and (self.repaired_answers is not None or self.repaired_question is not None):
            raise RepairError("clean instance cannot carry repaired fields")

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "status": "repaired" if self.gamma else "clean",
            "gamma": self.gamma,
            "category": self.category,
            "original_answers": self.original_answers,
            "repaired_answers": self.repaired_answers,
            "repaired_question": self.repaired_question,
            "rationale": self.rationale,
            "detector_raw": self.detector_raw,
            "repair_raw": self.repair_raw,
        }


@dataclass
class NoiseReport:
    dataset: str = ""
    total: int = 0
    repairs: int = 0
    mismatch_count: int = 0
    outdated_count: int = 0
    both_count: int = 0
    errors: int = 0
    error_ids: list[str] = field(default_factory=list)

    def _pct(self, n: int) -> float:
        return 100.0 * n / self.repairs if self.repairs else 0.0

    @property
    def mismatch_pct(self) -> float:
        """Share of repairs with a mismatch flaw, counting ``both`` records."""
        return self._pct(self.mismatch_count + self.both_count)

    @property
    def outdated_pct(self) -> float:
        return self._pct(self.outdated_count + self.both_count)

    def add(self, record: RepairRecord) -> None:
        self.total += 1
        if record.gamma:
            self.repairs += 1
            if record.category == "mismatch":
                self.mismatch_count += 1
            elif record.category == "outdated":
                self.outdated_count += 1
            elif record.category == "both":
                self.both_count += 1

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "total": self.total,
            "repairs": self.repairs,
            "mismatch_pct": self.mismatch_pct,
            "outdated_pct": self.outdated_pct,
            "mismatch_count": self.mismatch_count,
            "outdated_count": self.outdated_count,
            "both_count": self.both_count,
            "errors": self.errors,
            "error_ids": self.error_ids,
        }


def _context_text(context) -> str:
    if not context:
        return NO_CONTEXT
    if isinstance(context, str):
        return context
    lines = [getattr(getattr(c, "doc", None), "text", None) or str(c) for c in context]
    return bulleted(lines)


def _reference_date(reference_date: str | None) -> str:
    return reference_date or _dt.date.today().isoformat()


def _classify(q, gold_answers, context, backend, *, strict, reference_date, templates, call_log):
    tpl = templates or load_templates()
    prompt = tpl["repair_classify"].render(
        question=q,
        gold_answers=bulleted(list(gold_answers)),
        context=_context_text(context),
        reference_date=_reference_date(reference_date),
    )
    raw = backend.complete(backend.request(prompt, "repair_classify"), call_log=call_log).text
    try:
        gamma, category, rationale = parse_repair_classification(raw)
    except ParseError as exc:
        if strict:
            raise RepairError(f"unparseable repair classification: {exc}") from exc
        return 0, "none", "<parse failure>", raw
    return gamma, category, rationale, raw


def classify_flaw(q: str, gold_answers, context=None, backend: Backend | None = None, *, strict: bool = True,
                  reference_date: str | None = None, templates=None,
                  call_log: BackendCallLog | None = None) -> tuple[int, str, str]:
    """Return ``(gamma, category, rationale)`` for one question/gold-answer pair."""
    if not gold_answers:
        raise RepairError("gold_answers must be non-empty")
    if backend is None:
        raise RepairError("a backend is required")
    gamma, category, rationale, _ = _classify(
        q, gold_answers, context, backend, strict=strict, reference_date=reference_date,
        templates=templates, call_log=call_log)
    return gamma, category, rationale


def _union(original: list[str], extra: list[str]) -> list[str]:
    out = list(original)
    for a in extra:
        if a not in out:
            out.append(a)
    return out


def repair_instance(instance: QAInstance, backend: Backend, *, verdict: tuple | None = None, context=None,
                    strict: bool = True, reference_date: str | None = None, templates=None,
                    call_log: BackendCallLog | None = None) -> QAInstance:
    """Generate a corrected answer for a flagged instance and attach a :class:`RepairRecord`.

    ``verdict`` is the ``(gamma, category, rationale[, raw])`` from a prior
    classification; without it the instance is classified first. Raises
    :class:`RepairError` if the instance is not flagged.
    """
    tpl = templates or load_templates()
    current = instance.repaired_answers or instance.gold_answers
    if verdict is None:
        verdict = _classify(instance.question, current, context, backend, strict=strict,
                            reference_date=reference_date, templates=tpl, call_log=call_log)
    gamma, category, rationale = verdict[:3]
    detector_raw = verdict[3] if len(verdict) > 3 else ""
    if gamma != 1:
        raise RepairError(f"instance {instance.id!r} is not flagged for repair (gamma={gamma})")
    prompt = tpl["repair_generate"].render(
        question=instance.question,
        gold_answers=bulleted(list(current)),
        context=_context_text(context),
        reference_date=_reference_date(reference_date),
        category=category,
        rationale=rationale or "(none given)",
    )
    raw = backend.complete(backend.request(prompt, "repair_generate"), call_log=call_log).text
    try:
        answer, question = parse_repair_generation(raw)
    except ParseError as exc:
        raise RepairError(f"instance {instance.id!r}: {exc}") from exc
    repaired = _union(current, [answer])
    record = RepairRecord(
        id=instance.id,
        gamma=1,
        category=category,
        original_answers=list(instance.gold_answers),
        rationale=rationale,
        repaired_answers=repaired,
        repaired_question=question,
        detector_raw=detector_raw,
        repair_raw=raw,
    )
    out = replace(instance, repaired_answers=repaired, extra=dict(instance.extra))
    if question is not None:
        out.repaired_question = question
    out.repair_meta = record
    return out


def _process(instance: QAInstance, backend, retriever, k, strict, reference_date, templates):
    """Return ``(output_instance, audit_row, record_or_None)``; never raises on backend faults."""
    try:
        context = retriever.retrieve(instance.question, k) if retriever is not None else None
        current = instance.repaired_answers or instance.gold_answers
        verdict = _classify(instance.question, current, context, backend, strict=strict,
                            reference_date=reference_date, templates=templates, call_log=None)
        if verdict[0] == 0:
            record = RepairRecord(instance.id, 0, "none", list(instance.gold_answers), verdict[2],
                                  detector_raw=verdict[3])
            return instance, record.to_dict(), record
        repaired = repair_instance(instance, backend, verdict=verdict, context=context, strict=strict,
                                   reference_date=reference_date, templates=templates)
        return repaired, repaired.repair_meta.to_dict(), repaired.repair_meta
    except CareRagError as exc:
        flagged = replace(instance, extra={**instance.extra, "repair_error": str(exc)})
        return flagged, {"id": instance.id, "status": "error", "error": str(exc)}, None


def sample_indices(total: int, sample_limit: int | None, seed: int) -> list[int]:
    if sample_limit is None or sample_limit >= total:
        return list(range(total))
    if sample_limit < 0:
        raise RepairError("sample_limit must be >= 0")
    return sorted(random.Random(seed).sample(range(total), sample_limit))


def repair_dataset(in_path: str | os.PathLike, out_path: str | os.PathLike, backend: Backend,
                   sample_limit: int | None = None, *, seed: int = 0, strict: bool = True,
                   reference_date: str | None = None, retriever: Retriever | None = None, k: int = 5,
                   concurrency: int = 8, templates=None) -> NoiseReport:
    """Repair a JSONL dataset; writes ``out_path`` and ``{out_path}.audit.jsonl``."""
    instances = [QAInstance.from_dict(obj) for obj in read_jsonl(in_path)]
    chosen = [instances[i] for i in sample_indices(len(instances), sample_limit, seed)]
    tpl = templates or load_templates()
    reference_date = _reference_date(reference_date)

    def work(inst):
        return _process(inst, backend, retriever, k, strict, reference_date, tpl)

    if concurrency > 1 and len(chosen) > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(work, chosen))
    else:
        results = [work(i) for i in chosen]

    report = NoiseReport(dataset=os.path.basename(str(in_path)))
    with open(out_path, "w", encoding="utf-8") as out, \
            open(f"{out_path}.audit.jsonl", "w", encoding="utf-8") as audit:
        for inst, row, record in results:
            out.write(dumps_line(inst.to_dict()) + "\n")
            audit.write(dumps_line(row) + "\n")
            if record is None:
                report.total += 1
                report.errors += 1
                report.error_ids.append(inst.id)
            else:
                report.add(record)
    return report
