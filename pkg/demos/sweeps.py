"""
Retrieval-depth and ablation sweeps
===================================

Sweep k, then switch pipeline stages off one at a time. The disk cache makes
a second pass free.
"""

import tempfile
from pathlib import Path

from care_rag import QAInstance, build_index, configure_scripted
from care_rag.cache import DiskCache
from care_rag.config import BackendSettings, RunConfig
from care_rag.evaluation import SweepSpec, run_sweep
from care_rag.pipeline import Backends
from care_rag.retrieval import LocalRetriever

work = Path(tempfile.mkdtemp())
n_q = 4
corpus = [{"doc_id": f"d{i:02d}", "text": f"The capital of country{i} is city{i}."} for i in range(20)]
data = [QAInstance(f"q{i}", f"What is the capital of country{i}?", [f"city{i}"]) for i in range(n_q)]

###############################################################################
# Scripted responses: right answers for most questions, a wrong one for q3
# when the model answers alone.

rules = []
for i in range(n_q):
    q = f"country{i}?"
    rules += [
        {"contains": ["Conflict Detection Prompt", q], "response": f"Conflict: {int(i == 3)}\nchecked"},
        {"contains": ["Final Answer Synthesis Prompt", q], "response": f"Final Answer: city{i}"},
        {"contains": ["internal knowledge", q], "response": "somewhere" if i == 3 else f"city{i}"},
    ]
rules += [{"contains": ["Context Refinement Prompt"], "response": "The passage names a capital."},
          {"contains": ["Answer (Iterative"], "response": "Another view."}]

backend = configure_scripted(rules, cache=DiskCache(work / "cache"))
backends = Backends(backend)
retriever = LocalRetriever(build_index(corpus))
base = RunConfig(backend=BackendSettings(kind="scripted", transcript="inline"), n=2, concurrency=2)

###############################################################################
# Retrieval depth

rows = run_sweep(SweepSpec("k", (5, 10, 15, 20, 25), base), data, backends, retriever, out_dir=work / "k")
for r in rows:
    print(r.value, r.result.em, r.result.f1)
print((work / "k" / "sweep.csv").read_text())

###############################################################################
# Ablations. Only no_rag returns the model's own answer, which is wrong for q3.

rows = run_sweep(SweepSpec("ablation", ("full", "no_stage1", "no_stage2", "no_stage3", "no_rag"), base),
                 data, backends, retriever)
for r in rows:
    print(f"{r.value:>10}  EM={r.result.em:5.1f}")

###############################################################################
# Rerunning a sweep hits the cache for every call.

before = backend.call_log.count(from_cache=False)
run_sweep(SweepSpec("k", (5, 10, 15, 20, 25), base), data, backends, retriever)
print("new calls on rerun:", backend.call_log.count(from_cache=False) - before)
