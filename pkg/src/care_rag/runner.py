"""Batch execution: build backends and retrievers from a RunConfig, run many instances, write artifacts."""

from __future__ import annotations

import json
import os
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

from . import __version__
from .backend import backend_from_settings
from .cache import DiskCache
from .config import RunConfig
from .data import QAInstance, dumps_line, file_digest
from .pipeline import Backends, PipelineTrace, run_pipeline
from .prompts import load_templates
from .retrieval import BM25Index, LocalRetriever, RemoteRetriever, Retriever, build_index, read_corpus

MANIFEST_VERSION = 1
MANIFEST_FILE = "manifest.json"
TRACES_FILE = "traces.jsonl"


def build_backends(config: RunConfig) -> Backends:
    cache = DiskCache(config.cache_dir) if config.cache_enabled else None
    gen = backend_from_settings(config.backend, cache=cache, concurrency=config.concurrency)
    det = None
    if config.detector is not None:
        det = backend_from_settings(config.detector, cache=cache, concurrency=config.concurrency)
    return Backends(gen, det)


def build_retriever(config: RunConfig) -> Retriever | None:
    r = config.retriever
    if r.kind == "none":
        return None
    if r.kind == "remote":
        return RemoteRetriever(r.endpoint)
    if r.index_dir and (Path(r.index_dir) / "index.json").is_file():
        return LocalRetriever(BM25Index.load(r.index_dir))
    if r.corpus:
        return LocalRetriever(build_index(read_corpus(r.corpus)))
    return LocalRetriever(BM25Index.load(r.index_dir))


def run_batch(instances: Iterable[QAInstance], config: RunConfig, backends: Backends,
              retriever: Retriever | None) -> list[PipelineTrace]:
    """Run every instance; output order follows input order regardless of completion order."""
    templates = load_templates(config.templates_dir)
    instances = list(instances)
    if config.concurrency == 1 or len(instances) <= 1:
        return [run_pipeline(i, config, backends, retriever, templates=templates) for i in instances]
    with ThreadPoolExecutor(max_workers=config.concurrency) as pool:
        return list(pool.map(lambda i: run_pipeline(i, config, backends, retriever, templates=templates), instances))


def write_traces(path: str | os.PathLike, traces: Iterable[PipelineTrace]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for t in traces:
            fh.write(dumps_line(t.to_dict()) + "\n")
            n += 1
    return n


def _corpus_digest(config: RunConfig) -> str | None:
    r = config.retriever
    if r.kind != "local":
        return None
    if r.corpus and os.path.isfile(r.corpus):
        return file_digest(r.corpus)
    if r.index_dir and os.path.isfile(os.path.join(r.index_dir, "index.json")):
        return file_digest(os.path.join(r.index_dir, "index.json"))
    return None


@dataclass
class Manifest:
    command: str
    config: RunConfig
    dataset_path: str | None = None
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex)
    started_at: str = field(default_factory=lambda: _now())
    finished_at: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)

    def finish(self) -> None:
        self.finished_at = _now()

    def to_dict(self) -> dict[str, Any]:
        return {
            "manifest_version": MANIFEST_VERSION,
            "run_id": self.run_id,
            "command": self.command,
            "tool_version": __version__,
            "config": self.config.to_dict(),
            "dataset": {
                "path": os.path.abspath(self.dataset_path) if self.dataset_path else None,
                "sha256": file_digest(self.dataset_path) if self.dataset_path else None,
            },
            "corpus_sha256": _corpus_digest(self.config),
            "started_at": self.started_at,
            "finished_at": self.finished_at,
            **self.extra,
        }

    def write(self, path: str | os.PathLike) -> Path:
        path = Path(path)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True, ensure_ascii=False)
            fh.write("\n")
        return path


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())
