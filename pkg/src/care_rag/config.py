"""Run configuration: a JSON document validated into :class:`RunConfig`."""

from __future__ import annotations

import copy
import json
import os
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any

from .backend import API_KEY_ENV, PURPOSE_TAGS, SamplingParams
from .errors import ConfigError

PRESETS = ("care_rag", "no_rag", "vanilla_rag")


@dataclass(frozen=True)
class BackendSettings:
    kind: str = "scripted"
    base_url: str | None = None
    model_id: str | None = None
    api_key_env: str = API_KEY_ENV
    api_key: str | None = None
    transcript: str | None = None
    max_retries: int = 2
    timeout: float = 60.0

    def validate(self, name: str) -> None:
        if self.kind == "scripted":
            if not self.transcript:
                raise ConfigError(f"{name}.transcript is required for a scripted backend")
        elif self.kind == "http":
            if not self.base_url or not self.model_id:
                raise ConfigError(f"{name}.base_url and {name}.model_id are required for an http backend")
        else:
            raise ConfigError(f"{name}.kind must be 'scripted' or 'http', got {self.kind!r}")
        if self.max_retries < 0:
            raise ConfigError(f"{name}.max_retries must be >= 0")


@dataclass(frozen=True)
class RetrieverSettings:
    kind: str = "local"
    index_dir: str | None = None
    corpus: str | None = None
    endpoint: str | None = None

    def validate(self) -> None:
        if self.kind == "local":
            if not (self.index_dir or self.corpus):
                raise ConfigError("retriever.index_dir or retriever.corpus is required for a local retriever")
        elif self.kind == "remote":
            if not self.endpoint:
                raise ConfigError("retriever.endpoint is required for a remote retriever")
        elif self.kind != "none":
            raise ConfigError(f"retriever.kind must be local, remote or none, got {self.kind!r}")


@dataclass(frozen=True)
class Stages:
    stage1: bool = True
    stage2: bool = True
    stage3: bool = True


@dataclass(frozen=True)
class RunConfig:
    backend: BackendSettings = field(default_factory=BackendSettings)
    detector: BackendSettings | None = None
    retriever: RetrieverSettings = field(default_factory=lambda: RetrieverSettings(kind="none"))
    sampling: SamplingParams = field(default_factory=SamplingParams)
    sampling_overrides: dict[str, SamplingParams] = field(default_factory=dict)
    n: int = 3
    k: int = 5
    stages: Stages = field(default_factory=Stages)
    preset: str = "care_rag"
    templates_dir: str | None = None
    cache_enabled: bool = False
    cache_dir: str = ".care_rag_cache"
    concurrency: int = 8
    strict: bool = True
    seed: int = 0
    reference_date: str | None = None

    def __post_init__(self):
        for name in ("n", "k", "concurrency"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise ConfigError(f"{name} must be an integer >= 1, got {value!r}")
        if self.preset not in PRESETS:
            raise ConfigError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        unknown = set(self.sampling_overrides) - set(PURPOSE_TAGS)
        if unknown:
            raise ConfigError(f"sampling overrides for unknown purpose tags {sorted(unknown)}")
        self.backend.validate("backend")
        if self.detector is not None:
            self.detector.validate("detector")
        self.retriever.validate()
        # Presets pin the stage toggles they are defined by.
        if self.preset == "no_rag":
            object.__setattr__(self, "stages", replace(self.stages, stage2=False, stage3=False))
            object.__setattr__(self, "n", 1)
        elif self.preset == "vanilla_rag":
            object.__setattr__(self, "stages", replace(self.stages, stage1=False, stage3=False))

    def params_for(self, purpose_tag: str) -> SamplingParams:
        return self.sampling_overrides.get(purpose_tag, self.sampling)

    @property
    def config_id(self) -> str:
        if self.preset != "care_rag":
            return self.preset
        off = [name for name in ("stage1", "stage2", "stage3") if not getattr(self.stages, name)]
        return "care_rag" if not off else "care_rag-no_" + "_".join(off)

    def with_changes(self, **changes) -> RunConfig:
        return replace(self, **changes)

    def to_dict(self, *, redact_secrets: bool = True) -> dict[str, Any]:
        out = asdict(self)
        out["sampling_overrides"] = {k: v.to_dict() for k, v in self.sampling_overrides.items()}
        if redact_secrets:
            for name in ("backend", "detector"):
                if out.get(name) and out[name].get("api_key"):
                    out[name]["api_key"] = None
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any], base_dir: str | os.PathLike | None = None) -> RunConfig:
        data = copy.deepcopy(data)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        base = Path(base_dir) if base_dir is not None else None

        def resolve(p):
            if p is None or base is None or Path(p).is_absolute():
                return p
            return str((base / p).resolve())

        def backend_settings(obj, name):
            if obj is None:
                return None
            if not isinstance(obj, dict):
                raise ConfigError(f"{name} must be an object")
            try:
                settings = BackendSettings(**obj)
            except TypeError as exc:
                raise ConfigError(f"{name}: {exc}") from None
            return replace(settings, transcript=resolve(settings.transcript))

        kwargs: dict[str, Any] = {}
        if "backend" in data:
            kwargs["backend"] = backend_settings(data["backend"], "backend")
        if "detector" in data:
            kwargs["detector"] = backend_settings(data["detector"], "detector")
        if "retriever" in data:
            try:
                r = RetrieverSettings(**data["retriever"])
            except TypeError as exc:
                raise ConfigError(f"retriever: {exc}") from None
            kwargs["retriever"] = replace(r, index_dir=resolve(r.index_dir), corpus=resolve(r.corpus))
        if "sampling" in data:
            kwargs["sampling"] = SamplingParams.from_dict(data["sampling"])
        if "sampling_overrides" in data:
            basep = kwargs.get("sampling", SamplingParams())
            kwargs["sampling_overrides"] = {
                tag: SamplingParams.from_dict(p, base=basep) for tag, p in data["sampling_overrides"].items()
            }
        if "stages" in data:
            try:
                kwargs["stages"] = Stages(**data["stages"])
            except TypeError as exc:
                raise ConfigError(f"stages: {exc}") from None
        for name in ("n", "k", "preset", "cache_enabled", "concurrency", "strict", "seed", "reference_date"):
            if name in data:
                kwargs[name] = data[name]
        if "templates_dir" in data:
            kwargs["templates_dir"] = resolve(data["templates_dir"])
        if "cache_dir" in data:
            kwargs["cache_dir"] = resolve(data["cache_dir"])
        return cls(**kwargs)


def load_config(path: str | os.PathLike) -> RunConfig:
    """Load a config file, or the ``config`` snapshot embedded in a run manifest."""
    path = Path(path)
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    if "manifest_version" in data:
        data = data["config"]
    return RunConfig.from_dict(data, base_dir=path.parent)
