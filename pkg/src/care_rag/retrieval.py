"""Corpus ingestion, a BM25 inverted index and a remote retriever client."""

from __future__ import annotations

import json
import math
import os
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Iterable, Iterator, Protocol

import httpx

from .errors import ConfigError, IngestionError, ProtocolError, TransportError

K1 = 1.2
B = 0.75
INDEX_FILE = "index.json"
INDEX_VERSION = 1

_TOKEN_RE = re.compile(r"[^\W_]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on anything that is not a letter or digit."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class CorpusDocument:
    doc_id: str
    text: str
    title: str | None = None

    @classmethod
    def from_dict(cls, obj: dict[str, Any]) -> CorpusDocument:
        try:
            doc_id, text = obj["doc_id"], obj["text"]
        except (KeyError, TypeError) as exc:
            raise IngestionError(f"corpus record lacks field {exc}: {obj!r}") from None
        if not isinstance(doc_id, str) or not doc_id:
            raise IngestionError(f"doc_id must be a non-empty string: {obj!r}")
        if not isinstance(text, str) or not text.strip():
            raise IngestionError(f"document {doc_id!r} has empty text")
        title = obj.get("title")
        return cls(doc_id=doc_id, text=text, title=title if title else None)

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"doc_id": self.doc_id}
        if self.title is not None:
            out["title"] = self.title
        out["text"] = self.text
        return out


@dataclass(frozen=True)
class RetrievedPassage:
    doc: CorpusDocument
    score: float
    rank: int

    def to_dict(self) -> dict[str, Any]:
        return {**self.doc.to_dict(), "score": self.score, "rank": self.rank}


@dataclass(frozen=True)
class IndexStats:
    doc_count: int
    total_tokens: int
    avg_len: float
    vocab_size: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "doc_count": self.doc_count,
            "total_tokens": self.total_tokens,
            "avg_len": self.avg_len,
            "vocab_size": self.vocab_size,
        }


def read_corpus(path: str | os.PathLike) -> Iterator[CorpusDocument]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise IngestionError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None
            yield CorpusDocument.from_dict(obj)


class BM25Index:
    """Immutable inverted index scored with Okapi BM25 (k1=1.2, b=0.75)."""

    def __init__(self, docs: list[CorpusDocument], term_freqs: list[dict[str, int]], k1: float = K1, b: float = B):
        self.docs = docs
        self.k1 = k1
        self.b = b
        self._tf = term_freqs
        self._len = [sum(tf.values()) for tf in term_freqs]
        self._postings: dict[str, list[int]] = {}
        for i, tf in enumerate(term_freqs):
            for term in tf:
                self._postings.setdefault(term, []).append(i)
        total = sum(self._len)
        self.stats = IndexStats(
            doc_count=len(docs),
            total_tokens=total,
            avg_len=total / len(docs),
            vocab_size=len(self._postings),
        )
        n = len(docs)
        self._idf = {t: math.log((n - len(p) + 0.5) / (len(p) + 0.5) + 1.0) for t, p in self._postings.items()}

    def idf(self, term: str) -> float:
        return self._idf.get(term, 0.0)

    def score(self, query_terms: list[str], i: int) -> float:
        tf, dl = self._tf[i], self._len[i]
        norm = self.k1 * (1.0 - self.b + self.b * dl / self.stats.avg_len)
        total = 0.0
        for term in query_terms:
            f = tf.get(term, 0)
            if f:
                total += self._idf[term] * (f * (self.k1 + 1.0)) / (f + norm)
        return total

    def retrieve(self, query: str, k: int = 5) -> list[RetrievedPassage]:
        if k < 1:
            raise ConfigError(f"k must be >= 1, got {k}")
        terms = list(dict.fromkeys(tokenize(query)))
        candidates = sorted({i for t in terms for i in self._postings.get(t, ())})
        scored = [(self.score(terms, i), i) for i in candidates]
        scored = [(s, i) for s, i in scored if s > 0.0]
        scored.sort(key=lambda si: (-si[0], self.docs[si[1]].doc_id))
        return [RetrievedPassage(self.docs[i], s, rank) for rank, (s, i) in enumerate(scored[:k], 1)]

    def save(self, index_dir: str | os.PathLike) -> Path:
        out = Path(index_dir)
        out.mkdir(parents=True, exist_ok=True)
        payload = {
            "version": INDEX_VERSION,
            "k1": self.k1,
            "b": self.b,
            "stats": self.stats.to_dict(),
            "docs": [d.to_dict() for d in self.docs],
            "term_freqs": self._tf,
        }
        path = out / INDEX_FILE
        tmp = path.with_suffix(".tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, ensure_ascii=False)
        os.replace(tmp, path)
        return path

    @classmethod
    def load(cls, index_dir: str | os.PathLike) -> BM25Index:
        path = Path(index_dir) / INDEX_FILE
        with open(path, encoding="utf-8") as fh:
            payload = json.load(fh)
        if payload.get("version") != INDEX_VERSION:
            raise IngestionError(f"unsupported index version in {path}")
        docs = [CorpusDocument.from_dict(d) for d in payload["docs"]]
        return cls(docs, payload["term_freqs"], k1=payload["k1"], b=payload["b"])


def build_index(corpus: Iterable[CorpusDocument | dict]) -> BM25Index:
    docs: list[CorpusDocument] = []
    tfs: list[dict[str, int]] = []
    seen: set[str] = set()
    for doc in corpus:
        if isinstance(doc, dict):
            doc = CorpusDocument.from_dict(doc)
        if doc.doc_id in seen:
            raise IngestionError(f"duplicate doc_id {doc.doc_id!r}")
        seen.add(doc.doc_id)
        docs.append(doc)
        # Titles are indexed along with the body.
        text = f"{doc.title} {doc.text}" if doc.title else doc.text
        tfs.append(dict(Counter(tokenize(text))))
    if not docs:
        raise IngestionError("corpus is empty")
    return BM25Index(docs, tfs)


def retrieve(index: BM25Index, query: str, k: int = 5) -> list[RetrievedPassage]:
    return index.retrieve(query, k)


def parse_remote_hits(payload: Any, k: int) -> list[RetrievedPassage]:
    if not isinstance(payload, list):
        raise ProtocolError("remote retriever must return a JSON array")
    hits = []
    for item in payload:
        if not isinstance(item, dict):
            raise ProtocolError(f"hit is not an object: {item!r}")
        for name in ("doc_id", "text", "score"):
            if name not in item:
                raise ProtocolError(f"hit lacks {name!r} field: {item!r}")
        score = item["score"]
        if isinstance(score, bool) or not isinstance(score, (int, float)):
            raise ProtocolError(f"hit score is not a number: {item!r}")
        try:
            doc = CorpusDocument.from_dict(item)
        except IngestionError as exc:
            raise ProtocolError(str(exc)) from None
        hits.append((float(score), doc))
    hits.sort(key=lambda sd: (-sd[0], sd[1].doc_id))
    return [RetrievedPassage(doc, score, rank) for rank, (score, doc) in enumerate(hits[:k], 1)]


def retrieve_remote(endpoint: str, query: str, k: int = 5, *, client: httpx.Client | None = None,
                    timeout: float = 30.0) -> list[RetrievedPassage]:
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    own = client is None
    client = client or httpx.Client(timeout=timeout)
    try:
        resp = client.get(endpoint, params={"q": query, "k": k})
    except httpx.TransportError as exc:
        raise TransportError(f"retriever at {endpoint} unreachable: {exc}") from exc
    finally:
        if own:
            client.close()
    if not 200 <= resp.status_code < 300:
        raise ProtocolError(f"retriever returned HTTP {resp.status_code}")
    try:
        payload = resp.json()
    except ValueError as exc:
        raise ProtocolError(f"retriever response is not JSON: {exc}") from None
    return parse_remote_hits(payload, k)


class Retriever(Protocol):
    def retrieve(self, query: str, k: int) -> list[RetrievedPassage]: ...


class LocalRetriever:
    kind = "local"

    def __init__(self, index: BM25Index):
        self.index = index

    def retrieve(self, query: str, k: int) -> list[RetrievedPassage]:
        return self.index.retrieve(query, k)


class RemoteRetriever:
    kind = "remote"

    def __init__(self, endpoint: str, *, timeout: float = 30.0, transport: httpx.BaseTransport | None = None):
        self.endpoint = endpoint
        self._client = httpx.Client(timeout=timeout, transport=transport)

    def retrieve(self, query: str, k: int) -> list[RetrievedPassage]:
        return retrieve_remote(self.endpoint, query, k, client=self._client)
