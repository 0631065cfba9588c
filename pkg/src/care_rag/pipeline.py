"""Conflict-aware RAG inference: four sequential stages per question.

Stage I elicits ``n`` answers from the model's own knowledge, each new
prompt showing the answers so far, then merges them. Stage II retrieves
passages and has the model distill them into grounded evidence. Stage III
asks a (possibly separate) detector model whether the two evidence sources
contradict each other. Stage IV synthesizes the final answer from all
of the above.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Any, NamedTuple

from .backend import Backend, BackendCallLog, CompletionRequest
from .config import RunConfig
from .data import QAInstance
from .errors import CareRagError, ConfigError, ParseError, StageError
from .metrics import normalize_answer
from .parsing import parse_conflict, parse_synthesis
from .prompts import PromptTemplate, bulleted, load_templates, numbered
from .retrieval import RetrievedPassage, Retriever

TRACE_VERSION = 1
NO_RETRIEVED_EVIDENCE = "NO RETRIEVED EVIDENCE"
NO_PARAMETER_EVIDENCE = "(no parameter evidence)"
DETECTION_DISABLED = "(conflict detection disabled)"
PARSE_FAILURE = "<parse failure>"
CONFLICT_NOTE = "CONFLICT NOTE: "
VOLATILE_KEYS = frozenset({"timestamp", "timings", "latency_ms", "started_at", "finished_at"})


@dataclass(frozen=True)
class ParameterEvidence:
    answers: list[str]
    merged: list[str]
    consolidated_text: str
    sentinel: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"answers": self.answers, "merged": self.merged, "consolidated_text": self.consolidated_text}


EMPTY_PARAMETER_EVIDENCE = ParameterEvidence([], [], NO_PARAMETER_EVIDENCE, sentinel=True)


@dataclass(frozen=True)
class ContextEvidence:
    text: str
    source_passages: list[str] = field(default_factory=list)
    augmented_note: str | None = None
    sentinel: bool = False

    @property
    def rendered(self) -> str:
        """What downstream prompts see: the evidence followed by any conflict note."""
        if self.augmented_note is None:
            return self.text
        return f"{self.text}\n\n{self.augmented_note}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "text": self.text,
            "source_passages": self.source_passages,
            "augmented_note": self.augmented_note,
            "sentinel": self.sentinel,
        }


EMPTY_CONTEXT_EVIDENCE = ContextEvidence(NO_RETRIEVED_EVIDENCE, [], None, sentinel=True)


@dataclass(frozen=True)
class ConflictReport:
    flag: int
    rationale: str
    raw_output: str
    parse_status: str = "clean"

    def to_dict(self) -> dict[str, Any]:
        return {
            "flag": self.flag,
            "rationale": self.rationale,
            "raw_output": self.raw_output,
            "parse_status": self.parse_status,
        }


class Backends(NamedTuple):
    generator: Backend
    detector: Backend | None = None

    @property
    def conflict(self) -> Backend:
        return self.detector if self.detector is not None else self.generator


class _Recorder:
    """Collects per-stage prompts/completions and the instance's call-log slice."""

    def __init__(self, config: RunConfig | None):
        self.config = config
        self.call_log = BackendCallLog()
        self.stages: dict[str, dict[str, Any]] = {}
        self.current: str | None = None

    def open(self, stage: str) -> None:
        self.current = stage
        self.stages[stage] = {"status": "ok", "calls": []}

    def skip(self, stage: str, reason: str) -> None:
        self.stages[stage] = {"status": "skipped", "reason": reason, "calls": None}

    def call(self, backend: Backend, prompt: str, purpose: str, *, use_cache: bool = True) -> str:
        params = self.config.params_for(purpose) if self.config is not None else None
        request = backend.request(prompt, purpose, params)
        result = backend.complete(request, call_log=self.call_log, use_cache=use_cache)
        if self.current is not None:
            self.stages[self.current]["calls"].append(
                {"purpose": purpose, "prompt": prompt, "completion": result.text, "from_cache": result.from_cache}
            )
        return result.text


def _complete(backend: Backend, prompt: str, purpose: str, recorder: _Recorder | None) -> str:
    if recorder is not None:
        return recorder.call(backend, prompt, purpose)
    return backend.complete(backend.request(prompt, purpose)).text


def _templates(templates) -> dict[str, PromptTemplate]:
    return templates if templates is not None else load_templates()


def merge_parameter_evidence(answers: list[str]) -> tuple[list[str], str]:
    """Order-preserving dedup under answer normalization, plus a 'Perspective i:' rendering."""
    if not answers:
        raise ConfigError("merge needs at least one answer")
    merged: list[str] = []
    seen: set[str] = set()
    for answer in answers:
        text = answer.strip()
        if not text:
            continue
        key = normalize_answer(text)
        if key in seen:
            continue
        seen.add(key)
        merged.append(text)
    if not merged:
        raise ConfigError("all parameter answers are empty")
    consolidated = "\n".join(f"Perspective {i}: {text}" for i, text in enumerate(merged, 1))
    return merged, consolidated


def elicit_parameter_evidence(q: str, n: int, backend: Backend, *, templates=None,
                              recorder: _Recorder | None = None) -> ParameterEvidence:
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    tpl = _templates(templates)
    answers: list[str] = []
    try:
        answers.append(_complete(backend, tpl["init"].render(question=q), "init", recorder).strip())
        for _ in range(1, n):
            prompt = tpl["iter"].render(question=q, previous_parameter_answers=numbered(answers))
            answers.append(_complete(backend, prompt, "iter", recorder).strip())
        merged, consolidated = merge_parameter_evidence(answers)
    except CareRagError as exc:
        raise StageError("stage1", str(exc), partial=list(answers)) from exc
    return ParameterEvidence(answers, merged, consolidated)


def _passage_line(p: RetrievedPassage) -> str:
    return f"{p.doc.title}: {p.doc.text}" if p.doc.title else p.doc.text


def refine_context(q: str, passages: list[RetrievedPassage], backend: Backend, *, templates=None,
                   recorder: _Recorder | None = None) -> ContextEvidence:
    if not passages:
        return EMPTY_CONTEXT_EVIDENCE
    tpl = _templates(templates)
    ordered = sorted(passages, key=lambda p: p.rank)
    prompt = tpl["ref"].render(question=q, context_evidences=bulleted([_passage_line(p) for p in ordered]))
    try:
        text = _complete(backend, prompt, "refine", recorder).strip()
    except CareRagError as exc:
        raise StageError("stage2", str(exc)) from exc
    if not text:
        raise StageError("stage2", "refinement returned empty text")
    return ContextEvidence(text, [p.doc.doc_id for p in ordered])


def detect_conflict(q: str, ep: ParameterEvidence, ec: ContextEvidence, detector_backend: Backend, *,
                    strict: bool = True, templates=None, recorder: _Recorder | None = None) -> ConflictReport:
    tpl = _templates(templates)
    prompt = tpl["conflict"].render(
        question=q,
        consolidated_parameter_response=ep.consolidated_text,
        context_aware_evidence_summary=ec.rendered,
    )
    attempts = 2 if strict else 1
    raw = ""
    for attempt in range(attempts):
        try:
            if recorder is not None:
                raw = recorder.call(detector_backend, prompt, "conflict", use_cache=attempt == 0)
            else:
                req = detector_backend.request(prompt, "conflict")
                raw = detector_backend.complete(req, use_cache=attempt == 0).text
        except CareRagError as exc:
            raise StageError("stage3", str(exc)) from exc
        try:
            flag, rationale = parse_conflict(raw)
        except ParseError:
            continue
        return ConflictReport(flag, rationale, raw, "clean")
    if strict:
        raise StageError("stage3", "detector output has no conflict flag",
                         partial=ConflictReport(0, PARSE_FAILURE, raw, "error"))
    return ConflictReport(0, PARSE_FAILURE, raw, "lenient_default")


def augment_context(ec: ContextEvidence, rationale: str) -> ContextEvidence:
    note = CONFLICT_NOTE + (rationale.strip() or "(unspecified)")
    return replace(ec, augmented_note=note)


def synthesize(q: str, ep: ParameterEvidence, ec: ContextEvidence, report: ConflictReport, backend: Backend, *,
               templates=None, recorder: _Recorder | None = None):
    """Return ``(final_answer, reasoning, uncertainty, raw, warnings)``."""
    tpl = _templates(templates)
    prompt = tpl["synth"].render(
        question=q,
        consolidated_parameter_response=ep.consolidated_text,
        context_aware_evidence_summary=ec.rendered,
        delta_c=report.flag,
        r_c=report.rationale,
    )
    try:
        raw = _complete(backend, prompt, "synth", recorder)
    except CareRagError as exc:
        raise StageError("stage4", str(exc)) from exc
    out = parse_synthesis(raw)
    return out.final_answer, out.reasoning, out.uncertainty, raw, out.warnings


@dataclass
class PipelineTrace:
    instance_id: str
    question: str
    config_id: str
    preset: str
    stages_enabled: dict[str, bool]
    parameter_evidence: ParameterEvidence | None = None
    retrieved: list[RetrievedPassage] | None = None
    context_evidence: ContextEvidence | None = None
    conflict: ConflictReport | None = None
    final_answer: str | None = None
    reasoning: str = ""
    uncertainty: str = ""
    stages: dict[str, dict[str, Any]] = field(default_factory=dict)
    call_log: list[dict[str, Any]] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    error: dict[str, Any] | None = None
    started_at: float = 0.0
    finished_at: float = 0.0

    @property
    def failed(self) -> bool:
        return self.error is not None

    def to_dict(self) -> dict[str, Any]:
        return {
            "trace_version": TRACE_VERSION,
            "id": self.instance_id,
            "question": self.question,
            "config_id": self.config_id,
            "preset": self.preset,
            "stages_enabled": self.stages_enabled,
            "parameter_evidence": self.parameter_evidence.to_dict() if self.parameter_evidence else None,
            "retrieved": [p.to_dict() for p in self.retrieved] if self.retrieved is not None else None,
            "context_evidence": self.context_evidence.to_dict() if self.context_evidence else None,
            "conflict": self.conflict.to_dict() if self.conflict else None,
            "final_answer": self.final_answer,
            "answer_fields": {
                "final_answer": self.final_answer,
                "reasoning": self.reasoning,
                "uncertainty": self.uncertainty,
            },
            "stages": self.stages,
            "call_log": self.call_log,
            "timings": self.timings,
            "warnings": self.warnings,
            "error": self.error,
            "started_at": self.started_at,
            "finished_at": self.finished_at,
        }


def strip_volatile(obj: Any) -> Any:
    """Drop timestamp/latency fields so two replays can be compared byte-for-byte."""
    if isinstance(obj, dict):
        return {k: strip_volatile(v) for k, v in obj.items() if k not in VOLATILE_KEYS}
    if isinstance(obj, list):
        return [strip_volatile(v) for v in obj]
    return obj


def run_pipeline(instance: QAInstance, config: RunConfig, backends: Backends | Backend,
                 retriever: Retriever | None, *, templates=None) -> PipelineTrace:
    if isinstance(backends, Backend):
        backends = Backends(backends)
    tpl = templates if templates is not None else load_templates(config.templates_dir)
    st = config.stages
    trace = PipelineTrace(
        instance_id=instance.id,
        question=instance.question,
        config_id=config.config_id,
        preset=config.preset,
        stages_enabled={"stage1": st.stage1, "stage2": st.stage2, "stage3": st.stage3},
        started_at=time.time(),
    )
    rec = _Recorder(config)
    q = instance.question
    gen = backends.generator

    def timed(name, fn):
        t0 = time.perf_counter()
        try:
            return fn()
        finally:
            trace.timings[name] = time.perf_counter() - t0

    try:
        if config.preset == "no_rag":
            _run_no_rag(trace, rec, q, gen, tpl, timed)
        elif config.preset == "vanilla_rag":
            _run_vanilla(trace, rec, q, config, gen, retriever, tpl, timed)
        else:
            _run_care(trace, rec, q, config, backends, retriever, tpl, timed)
    except StageError as exc:
        if rec.current in rec.stages:
            rec.stages[rec.current]["status"] = "error"
        trace.error = {"stage": exc.stage, "message": str(exc)}
        if isinstance(exc.partial, list):
            trace.error["partial_answers"] = exc.partial
        elif isinstance(exc.partial, ConflictReport):
            trace.conflict = exc.partial
    except CareRagError as exc:
        if rec.current in rec.stages:
            rec.stages[rec.current]["status"] = "error"
        trace.error = {"stage": rec.current, "message": str(exc)}
    trace.stages = rec.stages
    trace.call_log = rec.call_log.to_list()
    trace.finished_at = time.time()
    return trace


def _run_no_rag(trace, rec, q, gen, tpl, timed):
    rec.open("stage1")
    ep = timed("stage1", lambda: elicit_parameter_evidence(q, 1, gen, templates=tpl, recorder=rec))
    trace.parameter_evidence = ep
    for name in ("retrieval", "stage2", "stage3", "stage4"):
        rec.skip(name, "preset no_rag")
    trace.final_answer = ep.answers[0]


def _retrieve(trace, rec, q, k, retriever, timed):
    rec.open("retrieval")
    if retriever is None:
        passages = []
    else:
        try:
            passages = timed("retrieval", lambda: retriever.retrieve(q, k))
        except CareRagError as exc:
            raise StageError("retrieval", str(exc)) from exc
    rec.stages["retrieval"]["calls"] = None
    trace.retrieved = passages
    return passages


def _run_vanilla(trace, rec, q, config, gen, retriever, tpl, timed):
    rec.skip("stage1", "preset vanilla_rag")
    passages = _retrieve(trace, rec, q, config.k, retriever, timed) if config.stages.stage2 else []
    if not config.stages.stage2:
        rec.skip("retrieval", "stage2 disabled")
    rec.skip("stage2", "preset vanilla_rag")
    rec.skip("stage3", "preset vanilla_rag")
    lines = [_passage_line(p) for p in passages] or [NO_RETRIEVED_EVIDENCE]
    prompt = tpl["vanilla"].render(question=q, context_evidences=bulleted(lines))
    rec.open("stage4")
    try:
        raw = timed("stage4", lambda: rec.call(gen, prompt, "synth"))
    except CareRagError as exc:
        raise StageError("stage4", str(exc)) from exc
    trace.final_answer = raw.strip()


def _run_care(trace, rec, q, config, backends, retriever, tpl, timed):
    st = config.stages
    gen = backends.generator
    if st.stage1:
        rec.open("stage1")
        ep = timed("stage1", lambda: elicit_parameter_evidence(q, config.n, gen, templates=tpl, recorder=rec))
        trace.parameter_evidence = ep
    else:
        rec.skip("stage1", "stage1 disabled")
        ep = EMPTY_PARAMETER_EVIDENCE

    if st.stage2:
        passages = _retrieve(trace, rec, q, config.k, retriever, timed)
        rec.open("stage2")
        ec = timed("stage2", lambda: refine_context(q, passages, gen, templates=tpl, recorder=rec))
        if not passages:
            rec.stages["stage2"] = {"status": "skipped", "reason": "no passages retrieved", "calls": None}
        trace.context_evidence = ec
    else:
        rec.skip("retrieval", "stage2 disabled")
        rec.skip("stage2", "stage2 disabled")
        ec = EMPTY_CONTEXT_EVIDENCE

    if st.stage3:
        rec.open("stage3")
        report = timed("stage3", lambda: detect_conflict(
            q, ep, ec, backends.conflict, strict=config.strict, templates=tpl, recorder=rec))
        if report.parse_status != "clean":
            trace.warnings.append("conflict flag unparseable; defaulted to 0")
    else:
        rec.skip("stage3", "stage3 disabled")
        report = ConflictReport(0, DETECTION_DISABLED, "", "clean")
    trace.conflict = report

    if report.flag == 1:
        ec = augment_context(ec, report.rationale)
        # Recorded even over the sentinel so the note is visible whenever the flag is set.
        trace.context_evidence = ec

    rec.open("stage4")
    final, reasoning, uncertainty, _raw, warnings = timed(
        "stage4", lambda: synthesize(q, ep, ec, report, gen, templates=tpl, recorder=rec))
    trace.final_answer = final
    trace.reasoning = reasoning
    trace.uncertainty = uncertainty
    trace.warnings.extend(warnings)
