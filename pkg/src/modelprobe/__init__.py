"""modelprobe: extract, relate, and attack on-device TFLite models."""

__version__ = "0.1.0"

from . import errors
from .attacks import AttackConfig, AttackKind, AttackOutcome, epsilon_search, fgsm, run_attack
from .digger import ExtractedModel, ModelCandidate, extract_models, scan_archive
from .engine import EngineModel, LabeledExample, dequantize, read_tensor, write_tensor
from .harness import EvalReport, evaluate_attack, pearson, run_experiment, targeted_vs_blind
from .registry import Registry, Tuning, load_registry, match_pretrained, write_fingerprint
from .relation import RelationGraph, build_graph, detect_communities, export_graph, modularity
from .similarity import MatchPolicy, SimilarityScore, lcs_length, pairwise_matrix
from .tflite import DType, LayerUnit, ModelGraph, ParamVector, parse_model

__all__ = [
    "AttackConfig", "AttackKind", "AttackOutcome", "DType", "EngineModel", "EvalReport",
    "ExtractedModel", "LabeledExample", "LayerUnit", "MatchPolicy", "ModelCandidate",
    "ModelGraph", "ParamVector", "Registry", "RelationGraph", "SimilarityScore", "Tuning",
    "build_graph", "dequantize", "detect_communities", "epsilon_search", "errors",
    "evaluate_attack", "export_graph", "extract_models", "fgsm", "lcs_length",
    "load_registry", "match_pretrained", "modularity", "pairwise_matrix", "parse_model",
    "pearson", "read_tensor", "run_attack", "run_experiment", "scan_archive",
    "targeted_vs_blind", "write_fingerprint", "write_tensor", "__version__",
]
