"""QA instances and JSON Lines helpers."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator

from .errors import ConfigError


@dataclass
class QAInstance:
    id: str
    question: str
    gold_answers: list[str]
    repaired_answers: list[str] | None = None
    repaired_question: str | None = None
    extra: dict[str, Any] = field(default_factory=dict)
    repair_meta: Any = field(default=None, compare=False)

    def __post_init__(self):
        if not self.gold_answers:
            raise ConfigError(f"instance {self.id!r} has no gold answers")
        if self.repaired_answers is not None and not self.repaired_answers:
            raise ConfigError(f"instance {self.id!r} has an empty repaired answer set")

    def reference_answers(self, use_repaired: bool) -> list[str]:
        if use_repaired and self.repaired_answers:
            return self.repaired_answers
        return self.gold_answers

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> QAInstance:
        try:
            iid, question, answers = obj["id"], obj["question"], obj["answers"]
        except KeyError as exc:
            raise ConfigError(f"dataset record lacks field {exc}: {obj!r}") from None
        if isinstance(answers, str):
            answers = [answers]
        known = {"id", "question", "answers", "repaired_answers", "repaired_question"}
        return cls(
            id=str(iid),
            question=question,
            gold_answers=list(answers),
            repaired_answers=list(obj["repaired_answers"]) if obj.get("repaired_answers") is not None else None,
            repaired_question=obj.get("repaired_question"),
            extra={k: v for k, v in obj.items() if k not in known},
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"id": self.id, "question": self.question, "answers": list(self.gold_answers)}
        if self.repaired_answers is not None:
            out["repaired_answers"] = list(self.repaired_answers)
        if self.repaired_question is not None:
            out["repaired_question"] = self.repaired_question
        out.update(self.extra)
        return out


def read_jsonl(path: str | os.PathLike) -> Iterator[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def write_jsonl(path: str | os.PathLike, rows: Iterable[dict[str, Any]]) -> int:
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(dumps_line(row))
            fh.write("\n")
            n += 1
    return n


def dumps_line(obj: Any) -> str:
    return json.dumps(obj, ensure_ascii=False, sort_keys=True)


def load_dataset(path: str | os.PathLike) -> list[QAInstance]:
    instances = [QAInstance.from_dict(obj) for obj in read_jsonl(path)]
    ids = [i.id for i in instances]
    if len(set(ids)) != len(ids):
        dup = next(i for i in ids if ids.count(i) > 1)
        raise ConfigError(f"duplicate instance id {dup!r} in {path}")
    return instances


def file_digest(path: str | os.PathLike) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()
