"""
Lexical retrieval with BM25
===========================

Build an index, look at its statistics, and inspect how scores fall off.
"""

from care_rag import build_index, retrieve
from care_rag.retrieval import tokenize

docs = [
    {"doc_id": "a", "text": "Kareem holds the NBA scoring record."},
    {"doc_id": "b", "text": "LeBron James broke the NBA record for career points in 2023."},
    {"doc_id": "c", "text": "The record label signed a new band."},
    {"doc_id": "d", "text": "Scoring in football differs from scoring in basketball."},
    {"doc_id": "e", "text": "Photosynthesis happens in leaves."},
]
index = build_index(docs)
print(index.stats)

###############################################################################
# Tokenization lowercases and splits on anything that is not a letter or digit.

print(tokenize("Simon & Garfunkel's 1964 single"))

###############################################################################
# Ranked hits. Documents scoring zero are left out, so asking for more hits
# than exist just returns the matching ones.

for hit in retrieve(index, "nba scoring record", k=10):
    print(hit.rank, hit.doc.doc_id, round(hit.score, 4))

###############################################################################
# Rarer terms weigh more: "nba" appears in two documents, "record" in three.

for term in ("nba", "record", "photosynthesis", "zebra"):
    print(term, round(index.idf(term), 4))
