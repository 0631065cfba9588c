"""Run-level EM/F1 aggregation and parameter sweeps (retrieval depth, perspective count, ablations)."""

from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable

from .config import RunConfig, Stages
from .data import QAInstance, dumps_line
from .errors import ConfigError
from .metrics import exact_match, f1
from .pipeline import Backends, PipelineTrace
from .retrieval import Retriever
from .runner import run_batch, write_traces

CSV_COLUMNS = ("param", "value", "em", "f1", "n", "failed")


@dataclass
class InstanceScore:
    id: str
    prediction: str | None
    em: int
    f1: float
    failed: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {"id": self.id, "prediction": self.prediction, "em": self.em, "f1": self.f1, "failed": self.failed}


@dataclass
class EvalResult:
    dataset: str
    config: str
    n: int
    failed: int
    em: float
    f1: float
    rows: list[InstanceScore] = field(default_factory=list)

    def summary(self) -> dict[str, Any]:
        return {"dataset": self.dataset, "config": self.config, "em": self.em, "f1": self.f1,
                "n": self.n, "failed": self.failed}

    def write(self, out_dir: str | os.PathLike) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval_summary.json", "w", encoding="utf-8") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        with open(out / "eval_instances.jsonl", "w", encoding="utf-8") as fh:
            for row in self.rows:
                fh.write(dumps_line(row.to_dict()) + "\n")


def _trace_fields(trace) -> tuple[str, str | None, bool, str]:
    if isinstance(trace, PipelineTrace):
        return trace.instance_id, trace.final_answer, trace.failed, trace.config_id
    return trace["id"], trace.get("final_answer"), trace.get("error") is not None, trace.get("config_id", "")


def evaluate_run(traces: Iterable[PipelineTrace | dict], dataset: list[QAInstance], use_repaired: bool = False,
                 *, dataset_id: str = "", config_id: str | None = None) -> EvalResult:
    """Score traces against the dataset; failed traces are counted but excluded from the means."""
    by_id = {inst.id: inst for inst in dataset}
    rows: list[InstanceScore] = []
    seen_config = None
    for trace in traces:
        iid, prediction, failed, cid = _trace_fields(trace)
        seen_config = seen_config or cid
        inst = by_id.get(iid)
        if inst is None:
            raise ConfigError(f"trace id {iid!r} not found in dataset")
        if failed or prediction is None:
            rows.append(InstanceScore(iid, prediction, 0, 0.0, failed=True))
            continue
        answers = inst.reference_answers(use_repaired)
        rows.append(InstanceScore(iid, prediction, exact_match(prediction, answers), f1(prediction, answers)))
    scored = [r for r in rows if not r.failed]
    em = 100.0 * sum(r.em for r in scored) / len(scored) if scored else 0.0
    f1_mean = 100.0 * sum(r.f1 for r in scored) / len(scored) if scored else 0.0
    return EvalResult(
        dataset=dataset_id,
        config=config_id if config_id is not None else (seen_config or ""),
        n=len(rows),
        failed=len(rows) - len(scored),
        em=em,
        f1=f1_mean,
        rows=rows,
    )


ABLATIONS: dict[str, dict[str, Any]] = {
    "full": {"preset": "care_rag", "stages": Stages()},
    "no_stage1": {"preset": "care_rag", "stages": Stages(stage1=False)},
    "no_stage2": {"preset": "care_rag", "stages": Stages(stage2=False)},
    "no_stage3": {"preset": "care_rag", "stages": Stages(stage3=False)},
    "no_rag": {"preset": "no_rag", "stages": Stages()},
    "vanilla_rag": {"preset": "vanilla_rag", "stages": Stages()},
}
SWEEP_PARAMS = ("k", "n", "ablation")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    base: RunConfig

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMS:
            raise ConfigError(f"sweep parameter must be one of {SWEEP_PARAMS}, got {self.parameter!r}")
        if not self.values:
            raise ConfigError("sweep values must be non-empty")
        for v in self.values:
            self.config_for(v)

    def config_for(self, value) -> RunConfig:
        if self.parameter == "ablation":
            if value not in ABLATIONS:
                raise ConfigError(f"unknown ablation setting {value!r}; choose from {sorted(ABLATIONS)}")
            return replace(self.base, **ABLATIONS[value])
        return replace(self.base, **{self.parameter: value})

    @classmethod
    def from_dict(cls, data: dict[str, Any], base: RunConfig) -> SweepSpec:
        try:
            return cls(data["parameter"], tuple(data["values"]), base)
        except KeyError as exc:
            raise ConfigError(f"sweep spec lacks {exc}") from None


@dataclass
class SweepRow:
    param: str
    value: Any
    result: EvalResult | None
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out = {"param": self.param, "value": self.value, "error": self.error}
        out.update(self.result.summary() if self.result else {"em": None, "f1": None, "n": 0, "failed": 0})
        return out


def run_sweep(spec: SweepSpec, dataset: list[QAInstance], backends: Backends, retriever: Retriever | None, *,
              use_repaired: bool = True, dataset_id: str = "", out_dir: str | os.PathLike | None = None
              ) -> list[SweepRow]:
    """One full evaluation per sweep value, all through the same backends (and thus the same cache)."""
    rows: list[SweepRow] = []
    trace_dir = Path(out_dir) / "traces" if out_dir is not None else None
    if trace_dir is not None:
        trace_dir.mkdir(parents=True, exist_ok=True)
    for value in spec.values:
        try:
            config = spec.config_for(value)
            traces = run_batch(dataset, config, backends, retriever)
            if trace_dir is not None:
                write_traces(trace_dir / f"{spec.parameter}={value}.jsonl", traces)
            label = f"{spec.parameter}={value}" if spec.parameter != "ablation" else str(value)
            result = evaluate_run(traces, dataset, use_repaired, dataset_id=dataset_id, config_id=label)
            rows.append(SweepRow(spec.parameter, value, result))
        except Exception as exc:  # one bad value must not abort the sweep
            rows.append(SweepRow(spec.parameter, value, None, error=f"{type(exc).__name__}: {exc}"))
    if out_dir is not None:
        write_sweep(rows, out_dir)
    return rows


def write_sweep(rows: list[SweepRow], out_dir: str | os.PathLike) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "sweep_results.json", "w", encoding="utf-8") as fh:
        json.dump([r.to_dict() for r in rows], fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(out / "sweep.csv", "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in rows:
            d = r.to_dict()
            writer.writerow([d["param"], d["value"], d["em"], d["f1"], d["n"], d["failed"]])
