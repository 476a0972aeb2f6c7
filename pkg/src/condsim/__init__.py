"""Conditional image similarity over precomputed embeddings."""
import os as _os

# BLAS pools size themselves at first numpy import, so the cap must be set
# before any submodule pulls numpy in.
_cap = _os.environ.get("CONDSIM_THREADS", "").strip()
if _cap.isdigit() and int(_cap) > 0:
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        _os.environ.setdefault(_var, _cap)

from .annotations import AnnotationStore, StorePaths, load_store, save_store
from .benchmark import (
    ALL_TASKS,
    RetrievalTemplate,
    build_all_tasks,
    read_templates,
    validate_benchmark,
    write_templates,
)
from .captions import Relationship, parse_captions, read_captions
from .combiner import (
    CombinerParams,
    combiner_forward,
    conditional_score,
    info_nce_loss,
    load_checkpoint,
    save_checkpoint,
)
from .embeddings import EmbeddingTable, StubEmbedder, read_gceb, stub_embed, write_gceb
from .errors import CondsimError
from .evaluation import EvalReport, make_scorer, recall_at_k
from .mining import MinedTriplet, build_subject_index, mine_triplets
from .training import TrainConfig, TrainResult, train

__version__ = "0.1.0"

__all__ = [
    "ALL_TASKS",
    "AnnotationStore",
    "CombinerParams",
    "CondsimError",
    "EmbeddingTable",
    "EvalReport",
    "MinedTriplet",
    "Relationship",
    "RetrievalTemplate",
    "StorePaths",
    "StubEmbedder",
    "TrainConfig",
    "TrainResult",
    "build_all_tasks",
    "build_subject_index",
    "combiner_forward",
    "conditional_score",
    "info_nce_loss",
    "load_checkpoint",
    "load_store",
    "make_scorer",
    "mine_triplets",
    "parse_captions",
    "read_captions",
    "read_gceb",
    "read_templates",
    "recall_at_k",
    "save_checkpoint",
    "save_store",
    "stub_embed",
    "train",
    "validate_benchmark",
    "write_gceb",
    "write_templates",
    "__version__",
]
