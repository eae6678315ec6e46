"""Cross-domain few-shot graph anomaly detection.

A fully labeled source graph and a distribution-shifted target graph with
only K labeled anomalies are trained jointly: per-domain input MLPs feed a
shared two-layer mean-aggregation encoder; intra-domain (node vs. graph
summary) and inter-domain (summary vs. summary) contrastive terms align
the domains; per-domain prompt banks add learnable domain-specific
structure; and a hypersphere loss around a shared learnable center with
per-domain offsets separates normal nodes from anomalies. A percentile
self-training pass then refines the target branch on its own most
confident predictions. Anomaly scores are kernel distances from the
effective target center.
"""

__version__ = "0.1.0"

from .data import (DatasetDescriptor, DatasetError, DomainBundle,
                   SplitMasks, SyntheticPairConfig, gen_synthetic_pair,
                   load_dataset, make_split, sample_few_shot, save_dataset)
from .detection import anomaly_scores, dahsc_loss, rbf_similarity, total_loss
from .evaluation import (MetricReport, UndefinedMetricError, auc_pr, auc_roc,
                         run_ablation, run_experiment)
from .graphs import (AttributedGraph, CompiledAdjacency, EdgeMask,
                     corrupt_features, drop_edges, readout_mean,
                     validate_graph)
from .model import ModelState, TrainPlan
from .training import (PseudoLabelSets, TrainConfig, TrainingError,
                       grad_check, joint_train, pseudo_label, self_train)

__all__ = [
    "AttributedGraph", "CompiledAdjacency", "DatasetDescriptor",
    "DatasetError", "DomainBundle", "EdgeMask", "MetricReport", "ModelState",
    "PseudoLabelSets", "SplitMasks", "SyntheticPairConfig", "TrainConfig",
    "TrainPlan", "TrainingError", "UndefinedMetricError", "anomaly_scores",
    "auc_pr", "auc_roc", "corrupt_features", "dahsc_loss", "drop_edges",
    "gen_synthetic_pair", "grad_check", "joint_train", "load_dataset",
    "make_split", "pseudo_label", "readout_mean", "rbf_similarity",
    "run_ablation", "run_experiment", "sample_few_shot", "save_dataset",
    "self_train", "total_loss", "validate_graph",
]
