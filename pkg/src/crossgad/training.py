"""Two-phase training: joint cross-domain optimization, percentile
pseudo-labeling, and target-only self-training refinement.

Phase 1 takes one full-batch adaptive-moment step per epoch on the joint
objective, with fresh edge dropping and feature corruption every epoch.
Phase 2 relabels the most/least anomalous-looking unlabeled train nodes,
then refines the target branch on that set over the full adjacency. All
randomness flows from the config seed through named substreams.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np

from . import model as md
from .data import DomainBundle
from .graphs import CompiledAdjacency, drop_edges
from .seeding import substream


class TrainingError(RuntimeError):
    """Raised when optimization produces a non-finite loss term."""


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Every tunable of the training protocol, with the published defaults."""

    learning_rate: float = 5e-4
    alpha_balance: float = 0.5
    drop_p: float = 0.1
    m_bases: int = 5
    beta1: float = 0.02
    beta2: float = 0.25
    epochs_joint: int = 50
    epochs_self: int = 100
    shots: int = 1
    seed: int = 0
    hidden_dim: int = 256
    out_dim: int = 64
    clamp_eps: float = 1e-7
    hsc_literal_labels: bool = False

    def validate(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got "
                             f"{self.learning_rate}")
        if self.alpha_balance < 0:
            raise ValueError("alpha_balance must be nonnegative")
        if not 0.0 <= self.drop_p <= 1.0:
            raise ValueError(f"drop_p must lie in [0, 1], got {self.drop_p}")
        for name in ("beta1", "beta2"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.beta1 + self.beta2 > 1.0:
            raise ValueError(
                f"beta1 + beta2 must not exceed 1, got "
                f"{self.beta1} + {self.beta2}")
        if self.epochs_joint < 0 or self.epochs_self < 0:
            raise ValueError("epoch counts must be nonnegative")
        if self.m_bases < 1:
            raise ValueError("m_bases must be >= 1")
        if self.shots < 1:
            raise ValueError("shots must be >= 1")
        if min(self.hidden_dim, self.out_dim) < 1:
            raise ValueError("layer widths must be positive")
        if not 0.0 < self.clamp_eps < 0.5:
            raise ValueError("clamp_eps must lie in (0, 0.5)")

    def plan(self, **overrides) -> md.TrainPlan:
        base = dict(alpha=self.alpha_balance, clamp_eps=self.clamp_eps,
                    literal_labels=self.hsc_literal_labels)
        base.update(overrides)
        return md.TrainPlan(**base)

    @classmethod
    def from_dict(cls, raw: dict) -> TrainConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown config fields: {unknown}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class PseudoLabelSets:
    """Indices relabeled anomalous / normal by the percentile rule."""

    anomalous: np.ndarray
    normal: np.ndarray

    def __post_init__(self):
        for field in ("anomalous", "normal"):
            arr = np.sort(np.asarray(getattr(self, field), dtype=np.int64))
            arr.flags.writeable = False
            object.__setattr__(self, field, arr)

    @property
    def size(self) -> int:
        return self.anomalous.size + self.normal.size


class Adam:
    """Adaptive-moment optimizer over a fixed set of named arrays."""

    def __init__(self, keys, learning_rate, decay1=0.9, decay2=0.999,
                 eps=1e-8):
        self.keys = tuple(keys)
        self.lr = learning_rate
        self.decay1 = decay1
        self.decay2 = decay2
        self.eps = eps
        self.t = 0
        self.m = {}
        self.v = {}

    def step(self, params: dict[str, np.ndarray],
             grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.decay1 ** self.t
        c2 = 1.0 - self.decay2 ** self.t
        for k in self.keys:
            g = grads[k]
            m = self.m.setdefault(k, np.zeros_like(g))
            v = self.v.setdefault(k, np.zeros_like(g))
            m *= self.decay1
            m += (1.0 - self.decay1) * g
            v *= self.decay2
            v += (1.0 - self.decay2) * (g * g)
            params[k] -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def _check_finite(parts: dict[str, float], epoch: int) -> None:
    for name, value in parts.items():
        if not math.isfinite(value):
            raise TrainingError(
                f"non-finite loss term {name!r} = {value} at epoch {epoch}")


def _sample_epoch_inputs(bundle, config, plan, streams) -> md.EpochInputs:
    adj_t = drop_edges(bundle.target, config.drop_p,
                       streams["aug_t"]).compile()
    perm_t = streams["cor_t"].permutation(bundle.target.num_nodes)
    if plan.use_source:
        adj_s = drop_edges(bundle.source, config.drop_p,
                           streams["aug_s"]).compile()
        perm_s = streams["cor_s"].permutation(bundle.source.num_nodes)
    else:
        adj_s, perm_s = None, None
    return md.EpochInputs(adj_source=adj_s, adj_target=adj_t,
                          perm_source=perm_s, perm_target=perm_t)


def init_model(bundle: DomainBundle, config: TrainConfig,
               plan: md.TrainPlan) -> md.ModelState:
    """Fresh state with data-dependent center initialization."""
    bundle.require_protocol()
    state = md.init_state(
        source_dim=bundle.source.num_attrs,
        target_dim=bundle.target.num_attrs,
        hidden_dim=config.hidden_dim, out_dim=config.out_dim,
        m_bases=config.m_bases, rng=substream(config.seed, "init"))
    prep = md.prepare_bundle(bundle, plan)
    adj_t = CompiledAdjacency.from_graph(bundle.target)
    adj_s = (CompiledAdjacency.from_graph(bundle.source)
             if plan.use_source else None)
    md.init_centers_from_data(state, prep, adj_t, adj_s, plan)
    return state


def joint_train(bundle: DomainBundle, config: TrainConfig,
                plan: md.TrainPlan | None = None,
                state: md.ModelState | None = None):
    """Phase 1: optimize the joint objective for ``epochs_joint`` epochs.

    Returns ``(state, trace)`` where trace rows are
    ``(epoch, loss_target, loss_source, loss_contrastive, loss_total)``.
    """
    config.validate()
    bundle.require_protocol()
    if plan is None:
        plan = config.plan()
    if state is None:
        state = init_model(bundle, config, plan)
    prep = md.prepare_bundle(bundle, plan)
    streams = {name: substream(config.seed, label) for name, label in (
        ("aug_s", "augment/source"), ("aug_t", "augment/target"),
        ("cor_s", "corrupt/source"), ("cor_t", "corrupt/target"))}
    opt = Adam(md.trainable_keys(plan, "joint"), config.learning_rate)
    params = state.parameters()
    trace = []
    for epoch in range(config.epochs_joint):
        inputs = _sample_epoch_inputs(bundle, config, plan, streams)
        parts, grads = joint_objective_checked(state, prep, inputs, plan,
                                               epoch)
        opt.step(params, grads)
        trace.append((epoch, parts["target"], parts["source"],
                      parts["contra"], parts["total"]))
    return state, trace


def joint_objective_checked(state, prep, inputs, plan, epoch):
    parts, grads = md.joint_objective(state, prep, inputs, plan,
                                      want_grads=True)
    _check_finite(parts, epoch)
    return parts, grads


def pseudo_label(scores: np.ndarray, eligible, beta1: float,
                 beta2: float) -> PseudoLabelSets:
    """Percentile relabeling of the eligible nodes.

    The anomalous set is the ceil(beta1 * |eligible|) highest-scoring
    nodes (ties broken by ascending index); the normal set is the
    ceil(beta2 * |eligible|) lowest-scoring of the remaining nodes, same
    tie-break. Drawing the normal set from the remainder is what keeps the
    two sets disjoint even under massive score ties.
    """
    eligible = np.asarray(sorted(eligible), dtype=np.int64)
    if eligible.size == 0:
        raise ValueError("eligible set must be nonempty")
    if not (0.0 < beta1 < 1.0 and 0.0 < beta2 < 1.0):
        raise ValueError("beta1 and beta2 must lie in (0, 1)")
    if beta1 + beta2 > 1.0:
        raise ValueError(
            f"beta1 + beta2 must not exceed 1, got {beta1} + {beta2}")
    scores = np.asarray(scores, dtype=np.float64)
    n = eligible.size
    k_top = int(math.ceil(beta1 * n))
    k_bot = int(math.ceil(beta2 * n))
    if k_top + k_bot > n:
        raise ValueError(
            f"percentile sizes ceil({beta1}*{n}) + ceil({beta2}*{n}) "
            f"exceed the eligible count {n}")
    s = scores[eligible]
    top_order = np.lexsort((eligible, -s))
    anomalous = eligible[top_order[:k_top]]
    rest = top_order[k_top:]
    bot_order = rest[np.lexsort((eligible[rest], s[rest]))]
    normal = eligible[bot_order[:k_bot]]
    return PseudoLabelSets(anomalous=anomalous, normal=normal)


def self_train(state: md.ModelState, bundle: DomainBundle,
               pseudo: PseudoLabelSets, config: TrainConfig,
               plan: md.TrainPlan | None = None) -> md.ModelState:
    """Phase 2: refine the target branch on pseudo-labels plus the K
    ground-truth anomalies, over the full target adjacency.

    Source-side parameters are untouched. The input state is not mutated.
    """
    config.validate()
    bundle.require_protocol()
    if plan is None:
        plan = config.plan()
    if pseudo.size == 0:
        raise ValueError("pseudo-label sets are empty; nothing to refine on")
    state = state.copy()
    node_idx = np.concatenate(
        [pseudo.anomalous, bundle.shots, pseudo.normal])
    node_idx, first = np.unique(node_idx, return_index=True)
    node_y = np.concatenate(
        [np.ones(pseudo.anomalous.size), np.ones(bundle.shots.size),
         np.zeros(pseudo.normal.size)])[first]
    adj_full = CompiledAdjacency.from_graph(bundle.target)
    Xt = bundle.target.features
    opt = Adam(md.trainable_keys(plan, "self"), config.learning_rate)
    params = state.parameters()
    for epoch in range(config.epochs_self):
        loss, grads = md.self_objective(state, Xt, adj_full, node_idx,
                                        node_y, plan, want_grads=True)
        _check_finite({"target": loss}, epoch)
        opt.step(params, grads)
    return state


def eligible_unlabeled(bundle: DomainBundle) -> np.ndarray:
    """Target train-mask nodes minus the K labeled anomalies: the only
    nodes pseudo-labels may be drawn from."""
    bundle.require_protocol()
    return np.setdiff1d(bundle.masks.train, bundle.shots)


def relabel_from_scores(state: md.ModelState, bundle: DomainBundle,
                        config: TrainConfig,
                        plan: md.TrainPlan | None = None) -> PseudoLabelSets:
    """Score the target graph (full adjacency) and pseudo-label the
    eligible unlabeled train nodes."""
    if plan is None:
        plan = config.plan()
    adj_full = CompiledAdjacency.from_graph(bundle.target)
    scores = md.target_scores(state, bundle.target.features, adj_full, plan)
    return pseudo_label(scores, eligible_unlabeled(bundle),
                        config.beta1, config.beta2)


# ---------------------------------------------------------------------------
# Gradient checking


def _rel_err(a: float, n: float) -> float:
    # The 1e-3 floor puts near-zero gradients in an absolute-error regime;
    # finite-difference roundoff would otherwise dominate the ratio.
    return abs(a - n) / max(abs(a), abs(n), 1e-3)


def grad_check(state: md.ModelState, bundle: DomainBundle,
               config: TrainConfig, step: float = 1e-5,
               samples_per_tensor: int = 10,
               mutate: bool = False) -> float:
    """Max relative error between analytic gradients of the joint
    objective and central finite differences.

    Coordinates are sampled stratified across every parameter tensor so
    all groups (MLPs, conv layers, prompt banks, discriminators, centers)
    are covered. ``mutate=True`` deliberately corrupts one analytic
    gradient entry, for verifying that the check can fail.
    """
    if step <= 0:
        raise ValueError(f"finite-difference step must be positive, got {step}")
    if bundle.source.num_nodes + bundle.target.num_nodes > 50:
        raise ValueError("gradient checks are limited to <= 50 total nodes")
    plan = config.plan()
    prep = md.prepare_bundle(bundle, plan)
    streams = {name: substream(config.seed, label) for name, label in (
        ("aug_s", "augment/source"), ("aug_t", "augment/target"),
        ("cor_s", "corrupt/source"), ("cor_t", "corrupt/target"))}
    inputs = _sample_epoch_inputs(bundle, config, plan, streams)

    parts, grads = md.joint_objective(state, prep, inputs, plan,
                                      want_grads=True)
    _check_finite(parts, epoch=0)
    params = state.parameters()

    rng = substream(config.seed, "gradcheck")
    coords = []
    for key, arr in params.items():
        count = min(samples_per_tensor, arr.size)
        for fi in rng.choice(arr.size, size=count, replace=False):
            coords.append((key, np.unravel_index(fi, arr.shape)))
    if mutate:
        key, ij = coords[0]
        grads[key][ij] += 1.0

    worst = 0.0
    for key, ij in coords:
        arr = params[key]
        saved = arr[ij]
        arr[ij] = saved + step
        up, _ = md.joint_objective(state, prep, inputs, plan,
                                   want_grads=False)
        arr[ij] = saved - step
        down, _ = md.joint_objective(state, prep, inputs, plan,
                                     want_grads=False)
        arr[ij] = saved
        numeric = (up["total"] - down["total"]) / (2.0 * step)
        worst = max(worst, _rel_err(grads[key][ij], numeric))
    return worst
