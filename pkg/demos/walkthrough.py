"""
Conflict-aware answering, one stage at a time
=============================================

A scripted backend stands in for the language model, so every number and
string below is reproducible without network access.
"""

import json

from care_rag import QAInstance, build_index, configure_scripted, run_pipeline
from care_rag.config import BackendSettings, RunConfig
from care_rag.retrieval import LocalRetriever

###############################################################################
# A tiny corpus
# -------------
# Two passages name Kareem Abdul-Jabbar as the scoring leader; one hints the
# record has since changed hands.

corpus = [
    {"doc_id": "nba1", "title": "NBA scoring leaders",
     "text": "Kareem Abdul-Jabbar is the all-time leading scorer in the NBA, with 38,387 total points."},
    {"doc_id": "nba2", "title": "NBA scoring leaders", "text": "As of 2023, James holds the record."},
    {"doc_id": "misc", "text": "Photosynthesis converts light energy into chemical energy."},
]
retriever = LocalRetriever(build_index(corpus))

###############################################################################
# Scripted model responses
# ------------------------
# Rules are tried in order; each matches when the prompt contains every
# listed substring. The stage templates begin with distinct header lines,
# which makes them easy to target.

question = "Who scored the most points in their NBA career?"
rules = [
    {"contains": ["Conflict Detection Prompt"],
     "response": "Conflict: 1\nThe model names LeBron James; the passages name Kareem Abdul-Jabbar."},
    {"contains": ["Final Answer Synthesis Prompt", "CONFLICT NOTE: "],
     "response": "Final Answer: LeBron James\n"
                 "Reasoning for Final Answer: The 2023 passage shows the older Kareem record was surpassed.\n"
                 "Ambiguity/Uncertainty Assessment: Depends on the date of the question."},
    {"contains": ["Context Refinement Prompt"],
     "response": "Kareem Abdul-Jabbar held the record with 38,387 points; a passage says James holds it as of 2023."},
    {"contains": ["internal knowledge"], "response": "LeBron James"},
]
backend = configure_scripted(rules)

###############################################################################
# Run the four stages
# -------------------

config = RunConfig(backend=BackendSettings(kind="scripted", transcript="inline"), n=1, k=3, concurrency=1)
trace = run_pipeline(QAInstance("nba", question, ["Kareem Abdul-Jabbar"]), config, backend, retriever)

print("parameter evidence:", trace.parameter_evidence.merged)
print("retrieved:", [p.doc.doc_id for p in trace.retrieved])
print("conflict flag:", trace.conflict.flag)
print("note:", trace.context_evidence.augmented_note)
print("final answer:", trace.final_answer)

###############################################################################
# The call log
# ------------
# One call per stage with n=1: init, refine, conflict, synth.

print([c["purpose_tag"] for c in trace.call_log])

###############################################################################
# Every stage keeps its prompt and completion, so a trace can be audited or
# replayed later.

print(json.dumps(trace.stages["stage3"], indent=2)[:600])
