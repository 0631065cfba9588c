"""Conflict-aware retrieval-augmented generation with QA repair and EM/F1 evaluation."""

__version__ = "0.1.0"

from .backend import (  # noqa: E402
    BackendCallLog,
    CompletionRequest,
    CompletionResult,
    HTTPBackend,
    SamplingParams,
    ScriptedBackend,
    cache_key,
    configure_scripted,
)
from .config import RunConfig, load_config  # noqa: E402
from .data import QAInstance, load_dataset  # noqa: E402
from .metrics import exact_match, f1, normalize_answer  # noqa: E402
from .pipeline import (  # noqa: E402
    Backends,
    ConflictReport,
    ContextEvidence,
    ParameterEvidence,
    PipelineTrace,
    augment_context,
    detect_conflict,
    elicit_parameter_evidence,
    merge_parameter_evidence,
    refine_context,
    run_pipeline,
    synthesize,
)
from .retrieval import BM25Index, CorpusDocument, build_index, retrieve, retrieve_remote  # noqa: E402
