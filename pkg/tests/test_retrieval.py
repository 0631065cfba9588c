import json

import httpx
import pytest
from hypothesis import given, settings, strategies as st

from care_rag.errors import ConfigError, IngestionError, ProtocolError, TransportError
from care_rag.retrieval import (
    BM25Index,
    CorpusDocument,
    RemoteRetriever,
    build_index,
    parse_remote_hits,
    read_corpus,
    retrieve,
    retrieve_remote,
    tokenize,
)

from bm25_oracle import brute_force

TOY = [
    {"doc_id": "a", "text": "Kareem holds the NBA scoring record."},
    {"doc_id": "b", "text": "LeBron James broke the NBA record for career points in 2023."},
    {"doc_id": "c", "text": "The record label signed a new band."},
    {"doc_id": "d", "text": "Scoring in football differs from scoring in basketball."},
    {"doc_id": "e", "text": "Photosynthesis happens in leaves."},
]


def test_tokenize():
    assert tokenize("Simon & Garfunkel's 1964 hit_single") == ["simon", "garfunkel", "s", "1964", "hit", "single"]
    assert tokenize("Café Zürich") == ["café", "zürich"]
    assert tokenize("!!! ---") == []


def test_avg_len_identity():
    index = build_index([
        {"doc_id": "1", "text": "one two three"},
        {"doc_id": "2", "text": "four five six seven"},
        {"doc_id": "3", "text": "eight nine ten"},
    ])
    assert index.stats.total_tokens == 10
    assert index.stats.avg_len == 10 / 3
    assert index.stats.doc_count == 3


def test_duplicate_doc_id_named():
    with pytest.raises(IngestionError, match="'d1'"):
        build_index([{"doc_id": "d1", "text": "x"}, {"doc_id": "d1", "text": "y"}])


def test_empty_corpus():
    with pytest.raises(IngestionError):
        build_index([])


@pytest.mark.parametrize("record", [{"text": "no id"}, {"doc_id": "x"}, {"doc_id": "x", "text": "  "}])
def test_invalid_records(record):
    with pytest.raises(IngestionError):
        CorpusDocument.from_dict(record)


def test_reindex_is_deterministic():
    assert build_index(TOY).stats == build_index(TOY).stats


def test_no_vocabulary_overlap():
    assert retrieve(build_index(TOY), "zebra quantum", 5) == []
    assert retrieve(build_index(TOY), "?!", 5) == []


def test_k_larger_than_corpus():
    hits = retrieve(build_index(TOY), "nba scoring record", 50)
    assert [h.rank for h in hits] == [1, 2, 3, 4]
    assert "e" not in {h.doc.doc_id for h in hits}


def test_k_must_be_positive():
    with pytest.raises(ConfigError):
        retrieve(build_index(TOY), "nba", 0)


def test_toy_ranking_matches_oracle():
    hits = retrieve(build_index(TOY), "nba scoring record", 5)
    expected = brute_force(TOY, "nba scoring record")
    # Frozen from the oracle: "a" has all three terms; "d" repeats "scoring" in a short doc.
    assert [d for d, _ in expected] == ["a", "d", "b", "c"]
    assert [h.doc.doc_id for h in hits] == [d for d, _ in expected]
    for h, (_, s) in zip(hits, expected):
        assert h.score == pytest.approx(s, abs=1e-9)


def test_ties_broken_by_doc_id():
    docs = [{"doc_id": x, "text": "same words here"} for x in ("z", "m", "a")]
    assert [h.doc.doc_id for h in retrieve(build_index(docs), "words", 3)] == ["a", "m", "z"]


def test_title_is_indexed():
    index = build_index([{"doc_id": "t", "title": "Eiffel", "text": "A tower in Paris."},
                         {"doc_id": "u", "text": "A bridge in Rome."}])
    assert [h.doc.doc_id for h in index.retrieve("eiffel", 5)] == ["t"]


def test_repeated_query_terms_count_once():
    index = build_index(TOY)
    assert [h.score for h in index.retrieve("record record record", 5)] == [h.score for h in index.retrieve("record", 5)]


def test_save_load_roundtrip(tmp_path):
    index = build_index(TOY)
    index.save(tmp_path)
    loaded = BM25Index.load(tmp_path)
    assert loaded.stats == index.stats
    assert [(h.doc, h.score) for h in loaded.retrieve("nba record", 5)] == \
        [(h.doc, h.score) for h in index.retrieve("nba record", 5)]


def test_read_corpus(tmp_path):
    path = tmp_path / "c.jsonl"
    path.write_text("\n".join(json.dumps(d) for d in TOY) + "\n\n", encoding="utf-8")
    assert [d.doc_id for d in read_corpus(path)] == list("abcde")
    path.write_text("{oops\n")
    with pytest.raises(IngestionError, match=":1:"):
        list(read_corpus(path))


words = st.sampled_from("alpha beta gamma delta eps zeta eta theta iota kappa".split())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.lists(words, min_size=1, max_size=12), min_size=1, max_size=15),
       st.lists(words, min_size=1, max_size=4), st.integers(1, 15))
def test_monotone_k_and_score_order(doc_words, query_words, k):
    index = build_index([{"doc_id": f"d{i}", "text": " ".join(w)} for i, w in enumerate(doc_words)])
    q = " ".join(query_words)
    top_k, top_k1 = index.retrieve(q, k), index.retrieve(q, k + 1)
    assert [h.doc.doc_id for h in top_k] == [h.doc.doc_id for h in top_k1][:len(top_k)]
    scores = [h.score for h in top_k1]
    assert scores == sorted(scores, reverse=True)
    assert all(s > 0 for s in scores)


class TestRemote:
    def test_two_hits(self):
        hits = parse_remote_hits([{"doc_id": "x", "text": "t1", "score": 2.0},
                                  {"doc_id": "y", "title": "T", "text": "t2", "score": 1.0}], 5)
        assert [(h.doc.doc_id, h.rank) for h in hits] == [("x", 1), ("y", 2)]
        assert hits[1].doc.title == "T"

    def test_missing_text(self):
        with pytest.raises(ProtocolError, match="text"):
            parse_remote_hits([{"doc_id": "x", "score": 1.0}], 5)

    def test_unordered_scores_reranked(self):
        hits = parse_remote_hits([{"doc_id": "lo", "text": "a", "score": 0.2},
                                  {"doc_id": "hi", "text": "b", "score": 0.9}], 5)
        assert [h.score for h in hits] == [0.9, 0.2]
        assert [h.rank for h in hits] == [1, 2]

    @pytest.mark.parametrize("payload", [{"hits": []}, ["x"], [{"doc_id": "a", "text": "b", "score": "high"}]])
    def test_malformed(self, payload):
        with pytest.raises(ProtocolError):
            parse_remote_hits(payload, 5)

    def test_http_round_trip(self):
        seen = {}

        def handler(request):
            seen.update(request.url.params)
            return httpx.Response(200, json=[{"doc_id": "x", "text": "t", "score": 1.5}])

        r = RemoteRetriever("http://ret.example/search", transport=httpx.MockTransport(handler))
        hits = r.retrieve("nba record", 3)
        assert seen == {"q": "nba record", "k": "3"}
        assert hits[0].score == 1.5

    def test_transport_failure(self):
        def handler(request):
            raise httpx.ConnectError("down", request=request)

        with httpx.Client(transport=httpx.MockTransport(handler)) as client:
            with pytest.raises(TransportError):
                retrieve_remote("http://ret.example", "q", 2, client=client)

    def test_non_2xx_is_protocol_error(self):
        with httpx.Client(transport=httpx.MockTransport(lambda r: httpx.Response(500))) as client:
            with pytest.raises(ProtocolError):
                retrieve_remote("http://ret.example", "q", 2, client=client)
