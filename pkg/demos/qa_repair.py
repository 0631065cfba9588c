"""
Repairing stale gold answers
============================

Flag gold answers that are outdated or mismatched, add a corrected answer,
and see how scores move.
"""

import json
import tempfile
from pathlib import Path

from care_rag import configure_scripted, load_dataset
from care_rag.evaluation import evaluate_run
from care_rag.repair import repair_dataset

work = Path(tempfile.mkdtemp())
rows = [
    {"id": "nba", "question": "Who scored the most points in their NBA career?", "answers": ["Kareem Abdul-Jabbar"]},
    {"id": "statue", "question": "When was the Statue of Liberty in France built?", "answers": ["Paris"]},
    {"id": "paris", "question": "What is the capital of France?", "answers": ["Paris"]},
]
with open(work / "in.jsonl", "w") as fh:
    for r in rows:
        fh.write(json.dumps(r) + "\n")

###############################################################################
# The audit prompt lists the current gold answers; the repair prompt asks for
# one corrected answer.

backend = configure_scripted([
    {"contains": ["QA Answer Audit", "NBA", "- Kareem Abdul-Jabbar\n\n"],
     "response": "Flag: 1\nCategory: outdated\nRationale: The record changed in 2023."},
    {"contains": ["QA Answer Repair", "NBA"], "response": "Repaired Answer: LeBron James"},
    {"contains": ["QA Answer Audit", "Statue", "- Paris\n\n"],
     "response": "Flag: 1\nCategory: mismatch\nRationale: A place does not answer 'When'."},
    {"contains": ["QA Answer Repair", "Statue"], "response": "Repaired Answer: July 1884"},
    {"contains": ["QA Answer Audit"], "response": "Flag: 0\nCategory: none\nRationale: Fine."},
])
report = repair_dataset(work / "in.jsonl", work / "out.jsonl", backend, reference_date="2024-01-01")
print(json.dumps(report.to_dict(), indent=2))

###############################################################################
# Repair only adds answers, so a prediction that matched before still matches.

data = load_dataset(work / "out.jsonl")
for inst in data:
    print(inst.id, inst.gold_answers, "->", inst.repaired_answers)

predictions = [{"id": "nba", "final_answer": "LeBron James"},
               {"id": "statue", "final_answer": "July 1884"},
               {"id": "paris", "final_answer": "Paris"}]
print("original EM:", evaluate_run(predictions, data, use_repaired=False).em)
print("repaired EM:", evaluate_run(predictions, data, use_repaired=True).em)

###############################################################################
# The audit sidecar keeps one record per instance.

print((work / "out.jsonl.audit.jsonl").read_text().splitlines()[0][:200])
