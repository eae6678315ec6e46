"""Ranking metrics and the multi-trial experiment / ablation harness.

AUC-ROC is the Mann-Whitney probability that a random anomaly outranks a
random normal node, ties half-credited. AUC-PR is average precision: the
step integral of precision over recall across descending unique-score
thresholds (equal scores collapse into one threshold). Experiments rerun
the full two-phase pipeline per trial with seed + trial_index and report
mean and population standard deviation over trials.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json

import numpy as np

from . import model as md
from . import training as tr
from .data import DomainBundle
from .graphs import AttributedGraph, CompiledAdjacency

VARIANTS = ("full", "no-prompt", "no-intra", "no-contra", "hsc-only",
            "no-source", "no-selftrain")


class UndefinedMetricError(ValueError):
    """Raised when a ranking metric is undefined for the given labels."""


def _check_binary(labels) -> np.ndarray:
    labels = np.asarray(labels)
    if np.setdiff1d(np.unique(labels), [0, 1]).size:
        raise ValueError("labels must be binary")
    return labels.astype(np.int64)


def auc_roc(scores, labels) -> float:
    """Probability that a random (anomaly, normal) pair is ordered
    correctly, counting ties as 1/2."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    if scores.shape != labels.shape:
        raise ValueError(
            f"scores and labels differ in length: {scores.shape} vs "
            f"{labels.shape}")
    n_pos = int((labels == 1).sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC-ROC needs both classes, got {n_pos} anomalies and "
            f"{n_neg} normals")
    _, inverse, counts = np.unique(scores, return_inverse=True,
                                   return_counts=True)
    cum = np.concatenate([[0.0], np.cumsum(counts)])
    avg_rank = cum[:-1] + (counts + 1) / 2.0   # 1-based midrank per group
    pos_rank_sum = avg_rank[inverse][labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0)
                 / (n_pos * n_neg))


def auc_pr(scores, labels) -> float:
    """Average precision over descending unique-score thresholds."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = _check_binary(labels)
    if scores.shape != labels.shape:
        raise ValueError(
            f"scores and labels differ in length: {scores.shape} vs "
            f"{labels.shape}")
    n_pos = int((labels == 1).sum())
    if n_pos == 0:
        raise UndefinedMetricError("AUC-PR needs at least one anomaly")
    order = np.argsort(-scores, kind="stable")
    s = scores[order]
    y = labels[order]
    tp = np.cumsum(y)
    total = np.arange(1, s.size + 1)
    cut = np.nonzero(np.diff(s))[0]
    idx = np.concatenate([cut, [s.size - 1]])   # last position per threshold
    precision = tp[idx] / total[idx]
    recall = tp[idx] / n_pos
    prev = np.concatenate([[0.0], recall[:-1]])
    return float(((recall - prev) * precision).sum())


# ---------------------------------------------------------------------------
# Experiment harness


@dataclasses.dataclass(frozen=True)
class MetricAggregate:
    per_trial: tuple[float, ...]

    @property
    def mean(self) -> float:
        return float(np.mean(self.per_trial))

    @property
    def std(self) -> float:
        return float(np.std(self.per_trial))

    def to_dict(self) -> dict:
        return {"per_trial": list(self.per_trial), "mean": self.mean,
                "std": self.std}


@dataclasses.dataclass(frozen=True)
class MetricReport:
    variant: str
    shots: int
    trials: int
    auc_roc: MetricAggregate
    auc_pr: MetricAggregate
    val_auc_roc: MetricAggregate
    val_auc_pr: MetricAggregate
    config_hash: str

    def to_dict(self) -> dict:
        return {
            "variant": self.variant, "shots": self.shots,
            "trials": self.trials,
            "auc_roc": self.auc_roc.to_dict(),
            "auc_pr": self.auc_pr.to_dict(),
            "validation": {"auc_roc": self.val_auc_roc.to_dict(),
                           "auc_pr": self.val_auc_pr.to_dict()},
            "config_hash": self.config_hash,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def to_table(self) -> str:
        """One result row, mean +/- std to three decimals."""
        header = "variant\tshots\ttrials\tauc_roc\tauc_pr"
        row = (f"{self.variant}\t{self.shots}\t{self.trials}\t"
               f"{self.auc_roc.mean:.3f}±{self.auc_roc.std:.3f}\t"
               f"{self.auc_pr.mean:.3f}±{self.auc_pr.std:.3f}")
        return header + "\n" + row + "\n"


def config_hash(config: tr.TrainConfig, variant: str) -> str:
    payload = json.dumps({"config": config.to_dict(), "variant": variant},
                         sort_keys=True)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def resolve_variant(config: tr.TrainConfig,
                    variant: str) -> tuple[md.TrainPlan, tr.TrainConfig]:
    """Ablation switch table; unknown names list the valid ones."""
    if variant not in VARIANTS:
        raise ValueError(
            f"unknown variant {variant!r}; valid: {', '.join(VARIANTS)}")
    overrides = {
        "full": {},
        "no-prompt": {"use_prompts": False},
        "no-intra": {"use_intra": False},
        "no-contra": {"use_intra": False, "use_inter": False},
        "hsc-only": {"shared_center": False},
        "no-source": {"use_source": False},
        "no-selftrain": {},
    }[variant]
    if variant == "no-selftrain":
        config = dataclasses.replace(config, epochs_self=0)
    return config.plan(**overrides), config


@dataclasses.dataclass
class TrialResult:
    bundle: DomainBundle
    state: md.ModelState
    scores: np.ndarray
    trace: list
    test_auc_roc: float
    test_auc_pr: float
    val_auc_roc: float
    val_auc_pr: float


def run_single_trial(source: AttributedGraph, target: AttributedGraph,
                     config: tr.TrainConfig,
                     plan: md.TrainPlan) -> TrialResult:
    """One full pipeline pass: split/K-shot resampling, joint training,
    pseudo-labeling + self-training, scoring, metrics.

    Test-mask (and validation-mask) labels are first read in the metric
    calls at the very end.
    """
    bundle = DomainBundle(source, target).with_protocol(config.shots,
                                                        config.seed)
    state, trace = tr.joint_train(bundle, config, plan)
    if config.epochs_self > 0:
        pseudo = tr.relabel_from_scores(state, bundle, config, plan)
        state = tr.self_train(state, bundle, pseudo, config, plan)
    adj_full = CompiledAdjacency.from_graph(bundle.target)
    scores = md.target_scores(state, bundle.target.features, adj_full, plan)
    test, val = bundle.masks.test, bundle.masks.val
    test_labels = bundle.target.labels[test]
    val_labels = bundle.target.labels[val]
    return TrialResult(
        bundle=bundle, state=state, scores=scores, trace=trace,
        test_auc_roc=auc_roc(scores[test], test_labels),
        test_auc_pr=auc_pr(scores[test], test_labels),
        val_auc_roc=auc_roc(scores[val], val_labels),
        val_auc_pr=auc_pr(scores[val], val_labels),
    )


def run_experiment(source: AttributedGraph, target: AttributedGraph,
                   config: tr.TrainConfig, trials: int,
                   variant: str = "full") -> MetricReport:
    """Repeat the pipeline over ``trials`` seeds (config.seed + i) and
    aggregate both metrics."""
    config.validate()
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    plan, cfg = resolve_variant(config, variant)
    results = []
    for i in range(trials):
        cfg_i = dataclasses.replace(cfg, seed=cfg.seed + i)
        results.append(run_single_trial(source, target, cfg_i, plan))
    return MetricReport(
        variant=variant, shots=config.shots, trials=trials,
        auc_roc=MetricAggregate(tuple(r.test_auc_roc for r in results)),
        auc_pr=MetricAggregate(tuple(r.test_auc_pr for r in results)),
        val_auc_roc=MetricAggregate(tuple(r.val_auc_roc for r in results)),
        val_auc_pr=MetricAggregate(tuple(r.val_auc_pr for r in results)),
        config_hash=config_hash(config, variant),
    )


def run_ablation(source: AttributedGraph, target: AttributedGraph,
                 config: tr.TrainConfig, variant: str,
                 trials: int) -> MetricReport:
    """Run one named pipeline variant; ``full`` is run_experiment
    verbatim."""
    return run_experiment(source, target, config, trials, variant=variant)
