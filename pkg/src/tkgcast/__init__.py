"""Temporal knowledge graph forecasting.

Train on historical time-stamped event quadruples, roll embedding states
over a window of recent graphs, predict future graphs one step at a time,
and answer link-prediction queries at future timestamps. Ranking combines a
structural triple score with a count-based repetition score; intermediate
predicted graphs feed back into the history for multi-step horizons.
"""

from .data import (
    DatasetBundle,
    GraphHistory,
    HistoryVocabulary,
    Quadruple,
    SnapshotGraph,
    build_snapshots,
    load_dataset,
)
from .evaluation import MetricReport, evaluate, filtered_rank, run_evaluation
from .model import HipModel
from .reasoner import Query, RankedAnswer, multi_step_reason
from .structural import SipConfig
from .training import TrainConfig, load_checkpoint, run_training, save_checkpoint

__version__ = "0.1.0"

__all__ = [
    "DatasetBundle",
    "GraphHistory",
    "HipModel",
    "HistoryVocabulary",
    "MetricReport",
    "Quadruple",
    "Query",
    "RankedAnswer",
    "SipConfig",
    "SnapshotGraph",
    "TrainConfig",
    "build_snapshots",
    "evaluate",
    "filtered_rank",
    "load_checkpoint",
    "load_dataset",
    "multi_step_reason",
    "run_evaluation",
    "run_training",
    "save_checkpoint",
    "__version__",
]
