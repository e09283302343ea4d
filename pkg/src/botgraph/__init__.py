"""Non-intrusive bot detection on a bipartite session-URL graph."""

__version__ = "0.1.0"

from .baseline import MlpClassifier
from .evaluation import EvalReport, auc, pick_threshold, prf_at
from .features import ColumnStandardizer, FeaturePack
from .graph import BipartiteGraph, RefinementPolicy, build_graph, refine
from .logs import LogRecord, Session, parse_log_line, sessionize
from .sage import GraphSageClassifier, load_checkpoint, save_checkpoint, score_session
from .synth import TrafficConfig, generate_corpus

__all__ = [
    "BipartiteGraph", "ColumnStandardizer", "EvalReport", "FeaturePack",
    "GraphSageClassifier", "LogRecord", "MlpClassifier", "RefinementPolicy",
    "Session", "TrafficConfig", "auc", "build_graph", "generate_corpus",
    "load_checkpoint", "parse_log_line", "pick_threshold", "prf_at", "refine",
    "save_checkpoint", "score_session", "sessionize",
]
