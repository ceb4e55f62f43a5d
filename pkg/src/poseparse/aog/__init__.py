"""And-Or graph: structure, scoring, inference and structural learning."""

from .inference import DEFAULT_K, infer, loss_augmented_infer, oracle_parse
from .learning import DegenerateDataError, TrainingExample, TrainInfo, solve_working_set, train_structural
from .model import (
    AogParams,
    AssemblyProblem,
    InvalidTreeError,
    ParamLayout,
    ParseTree,
    SparseVector,
    active_vertices,
    build_problem,
    check_tree,
    composition_score,
    delta,
    feature_vector,
    global_score,
    leaf_score,
    loss,
    tree_to_labelmap,
    vertex_masks,
)
from .structure import AogStructure, Composition, TaxonomyError, build_default_aog, load_taxonomy

__all__ = [
    "DEFAULT_K",
    "AogParams",
    "AogStructure",
    "AssemblyProblem",
    "Composition",
    "DegenerateDataError",
    "InvalidTreeError",
    "ParamLayout",
    "ParseTree",
    "SparseVector",
    "TaxonomyError",
    "TrainInfo",
    "TrainingExample",
    "active_vertices",
    "build_default_aog",
    "build_problem",
    "check_tree",
    "composition_score",
    "delta",
    "feature_vector",
    "global_score",
    "infer",
    "leaf_score",
    "load_taxonomy",
    "loss",
    "loss_augmented_infer",
    "oracle_parse",
    "solve_working_set",
    "train_structural",
    "tree_to_labelmap",
    "vertex_masks",
]
