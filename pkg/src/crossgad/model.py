"""Model state, initialization, and the assembled training objectives.

The learnable state is a flat collection of named numpy arrays: two domain
MLPs, two shared conv layers, four prompt banks (domain x layer), three
bilinear discriminators, and the center set. ``joint_objective`` and
``self_objective`` evaluate the losses and, on request, accumulate exact
parameter gradients by chaining the per-op backward functions; the same
code path with ``want_grads=False`` is what finite-difference checks
re-evaluate.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import contrastive as ct
from . import detection as dt
from .encoder import (AffineParams, EncoderParams, PromptBank, SageParams,
                      _encode_backward, _encode_forward)
from .graphs import CompiledAdjacency

PARAM_KEYS = (
    "mlp_source.W", "mlp_source.b", "mlp_target.W", "mlp_target.b",
    "conv1.W_self", "conv1.W_neigh", "conv1.b",
    "conv2.W_self", "conv2.W_neigh", "conv2.b",
    "prompt_source.1", "prompt_source.2", "prompt_target.1", "prompt_target.2",
    "disc_intra_source.W", "disc_intra_target.W", "disc_inter.W",
    "center.c", "center.u_source", "center.u_target",
)


@dataclasses.dataclass(frozen=True)
class TrainPlan:
    """Structural switches of the objective (full model and ablations)."""

    alpha: float = 0.5
    clamp_eps: float = 1e-7
    use_prompts: bool = True
    use_intra: bool = True
    use_inter: bool = True
    use_source: bool = True
    shared_center: bool = True
    literal_labels: bool = False

    @property
    def use_contra(self) -> bool:
        return self.use_intra or self.use_inter


@dataclasses.dataclass
class ModelState:
    encoder: EncoderParams
    prompt_source: tuple[PromptBank, PromptBank]
    prompt_target: tuple[PromptBank, PromptBank]
    disc_intra_source: ct.Discriminator
    disc_intra_target: ct.Discriminator
    disc_inter: ct.Discriminator
    centers: dt.CenterSet

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> live array view, in the fixed PARAM_KEYS order."""
        e = self.encoder
        return {
            "mlp_source.W": e.source_mlp.W, "mlp_source.b": e.source_mlp.b,
            "mlp_target.W": e.target_mlp.W, "mlp_target.b": e.target_mlp.b,
            "conv1.W_self": e.layer1.W_self, "conv1.W_neigh": e.layer1.W_neigh,
            "conv1.b": e.layer1.b,
            "conv2.W_self": e.layer2.W_self, "conv2.W_neigh": e.layer2.W_neigh,
            "conv2.b": e.layer2.b,
            "prompt_source.1": self.prompt_source[0].bases,
            "prompt_source.2": self.prompt_source[1].bases,
            "prompt_target.1": self.prompt_target[0].bases,
            "prompt_target.2": self.prompt_target[1].bases,
            "disc_intra_source.W": self.disc_intra_source.W,
            "disc_intra_target.W": self.disc_intra_target.W,
            "disc_inter.W": self.disc_inter.W,
            "center.c": self.centers.center,
            "center.u_source": self.centers.offset_source,
            "center.u_target": self.centers.offset_target,
        }

    def zero_grads(self) -> dict[str, np.ndarray]:
        return {k: np.zeros_like(v) for k, v in self.parameters().items()}

    def copy(self) -> ModelState:
        p = {k: v.copy() for k, v in self.parameters().items()}
        return build_state(p)

    def banks_for(self, domain: str, plan: TrainPlan):
        if not plan.use_prompts:
            return None
        return self.prompt_source if domain == "source" else self.prompt_target


def build_state(p: dict[str, np.ndarray]) -> ModelState:
    """Assemble a ModelState from a name -> array mapping (arrays are
    adopted, not copied)."""
    missing = [k for k in PARAM_KEYS if k not in p]
    if missing:
        raise ValueError(f"missing parameter tensors: {missing}")
    enc = EncoderParams(
        source_mlp=AffineParams(p["mlp_source.W"], p["mlp_source.b"]),
        target_mlp=AffineParams(p["mlp_target.W"], p["mlp_target.b"]),
        layer1=SageParams(p["conv1.W_self"], p["conv1.W_neigh"], p["conv1.b"]),
        layer2=SageParams(p["conv2.W_self"], p["conv2.W_neigh"], p["conv2.b"]),
    )
    return ModelState(
        encoder=enc,
        prompt_source=(PromptBank(p["prompt_source.1"]),
                       PromptBank(p["prompt_source.2"])),
        prompt_target=(PromptBank(p["prompt_target.1"]),
                       PromptBank(p["prompt_target.2"])),
        disc_intra_source=ct.Discriminator(p["disc_intra_source.W"]),
        disc_intra_target=ct.Discriminator(p["disc_intra_target.W"]),
        disc_inter=ct.Discriminator(p["disc_inter.W"]),
        centers=dt.CenterSet(p["center.c"], p["center.u_source"],
                             p["center.u_target"]),
    )


def init_state(source_dim: int, target_dim: int, hidden_dim: int,
               out_dim: int, m_bases: int,
               rng: np.random.Generator) -> ModelState:
    """Fresh parameters: fan-in-scaled uniform weights, zero biases,
    near-zero prompt bases (so the detection branch starts at the
    contrastive branch), zero centers."""

    def uniform(d_in, d_out):
        bound = 1.0 / np.sqrt(d_in)
        return rng.uniform(-bound, bound, size=(d_in, d_out))

    p = {
        "mlp_source.W": uniform(source_dim, hidden_dim),
        "mlp_source.b": np.zeros(hidden_dim),
        "mlp_target.W": uniform(target_dim, hidden_dim),
        "mlp_target.b": np.zeros(hidden_dim),
        "conv1.W_self": uniform(hidden_dim, hidden_dim),
        "conv1.W_neigh": uniform(hidden_dim, hidden_dim),
        "conv1.b": np.zeros(hidden_dim),
        "conv2.W_self": uniform(hidden_dim, out_dim),
        "conv2.W_neigh": uniform(hidden_dim, out_dim),
        "conv2.b": np.zeros(out_dim),
        "prompt_source.1": rng.normal(0.0, 0.01, size=(m_bases, hidden_dim)),
        "prompt_source.2": rng.normal(0.0, 0.01, size=(m_bases, out_dim)),
        "prompt_target.1": rng.normal(0.0, 0.01, size=(m_bases, hidden_dim)),
        "prompt_target.2": rng.normal(0.0, 0.01, size=(m_bases, out_dim)),
        "disc_intra_source.W": uniform(out_dim, out_dim),
        "disc_intra_target.W": uniform(out_dim, out_dim),
        "disc_inter.W": uniform(out_dim, out_dim),
        "center.c": np.zeros(out_dim),
        "center.u_source": np.zeros(out_dim),
        "center.u_target": np.zeros(out_dim),
    }
    return build_state(p)


@dataclasses.dataclass(frozen=True)
class PreparedData:
    """Training tensors extracted once from a bundle.

    Target labels are never read here: the target supervision is exactly
    the K labeled anomalies (y=1) plus the remaining train-mask nodes
    treated as normal (y=0).
    """

    Xs: np.ndarray | None
    Xt: np.ndarray
    ys: np.ndarray | None          # full source labels
    t_train_idx: np.ndarray        # target train-mask node indices
    t_train_y: np.ndarray          # 0/1 over t_train_idx (1 on the K shots)


def prepare_bundle(bundle, plan: TrainPlan) -> PreparedData:
    bundle.require_protocol()
    t_idx = bundle.masks.train
    t_y = np.zeros(t_idx.shape[0])
    t_y[np.isin(t_idx, bundle.shots)] = 1.0
    if plan.use_source:
        if bundle.source.labels is None:
            raise ValueError("source graph must be fully labeled")
        Xs = bundle.source.features
        ys = np.asarray(bundle.source.labels, dtype=np.float64)
    else:
        Xs, ys = None, None
    return PreparedData(Xs=Xs, Xt=bundle.target.features, ys=ys,
                        t_train_idx=t_idx, t_train_y=t_y)


@dataclasses.dataclass(frozen=True)
class EpochInputs:
    """Frozen per-epoch randomness: dropped adjacencies and corruption
    permutations. Holding these fixed makes the objective a deterministic
    function of the parameters (what the gradient checks differentiate)."""

    adj_source: CompiledAdjacency | None
    adj_target: CompiledAdjacency
    perm_source: np.ndarray | None
    perm_target: np.ndarray


def init_centers_from_data(state: ModelState, prep: PreparedData,
                           adj_target_full: CompiledAdjacency,
                           adj_source_full: CompiledAdjacency | None,
                           plan: TrainPlan) -> None:
    """Data-dependent center start.

    Shared-center mode: c = mean initial detection-branch embedding of the
    target train nodes, offsets zero. Independent-center mode: c stays
    frozen at zero and each offset starts at its own domain's mean.
    """
    Zt, _ = _encode_forward(prep.Xt, adj_target_full, "target", state.encoder,
                            state.banks_for("target", plan))
    t_mean = Zt[prep.t_train_idx].mean(axis=0)
    if plan.shared_center:
        state.centers.center[:] = t_mean
    else:
        state.centers.offset_target[:] = t_mean
        if plan.use_source and prep.Xs is not None:
            Zs, _ = _encode_forward(prep.Xs, adj_source_full, "source",
                                    state.encoder,
                                    state.banks_for("source", plan))
            state.centers.offset_source[:] = Zs.mean(axis=0)


def _route_encode_grads(grads: dict, domain: str, eg) -> None:
    mlp = f"mlp_{domain}"
    grads[f"{mlp}.W"] += eg.mlp_W
    grads[f"{mlp}.b"] += eg.mlp_b
    grads["conv1.W_self"] += eg.l1_self
    grads["conv1.W_neigh"] += eg.l1_neigh
    grads["conv1.b"] += eg.l1_b
    grads["conv2.W_self"] += eg.l2_self
    grads["conv2.W_neigh"] += eg.l2_neigh
    grads["conv2.b"] += eg.l2_b
    if eg.bank1 is not None:
        grads[f"prompt_{domain}.1"] += eg.bank1
        grads[f"prompt_{domain}.2"] += eg.bank2


def joint_objective(state: ModelState, prep: PreparedData,
                    inputs: EpochInputs, plan: TrainPlan,
                    want_grads: bool = True):
    """Joint two-domain objective for one epoch's frozen augmentation.

    Returns ``(parts, grads)`` where parts has keys target/source/contra/
    total and grads is a name -> array dict (or None).
    """
    grads = state.zero_grads() if want_grads else None

    l_contra = 0.0
    if plan.use_contra:
        l_contra = _contrastive_pass(state, prep, inputs, plan, grads)

    # Detection branch: prompts on, same dropped adjacency as above.
    l_t, l_s = _detection_pass(state, prep, inputs, plan, grads)

    total = dt.total_loss(l_t, l_s, l_contra,
                          dt.LossWeights(plan.alpha))
    parts = {"target": l_t, "source": l_s, "contra": l_contra, "total": total}
    return parts, grads


def _contrastive_pass(state, prep, inputs, plan, grads):
    eps = plan.clamp_eps
    w = plan.alpha  # gradient seed; the returned loss is unweighted

    Ht, cache_t = _encode_forward(prep.Xt, inputs.adj_target, "target",
                                  state.encoder, None)
    Htc, cache_tc = _encode_forward(prep.Xt[inputs.perm_target],
                                    inputs.adj_target, "target",
                                    state.encoder, None)
    n_t = Ht.shape[0]
    rt, rtc = Ht.mean(axis=0), Htc.mean(axis=0)
    k = rt.shape[0]
    gHt = np.zeros_like(Ht)
    gHtc = np.zeros_like(Htc)
    g_rt = np.zeros(k)
    g_rtc = np.zeros(k)

    if plan.use_source:
        Hs, cache_s = _encode_forward(prep.Xs, inputs.adj_source, "source",
                                      state.encoder, None)
        Hsc, cache_sc = _encode_forward(prep.Xs[inputs.perm_source],
                                        inputs.adj_source, "source",
                                        state.encoder, None)
        n_s = Hs.shape[0]
        rs, rsc = Hs.mean(axis=0), Hsc.mean(axis=0)
        gHs = np.zeros_like(Hs)
        gHsc = np.zeros_like(Hsc)
        g_rs = np.zeros(k)
        g_rsc = np.zeros(k)

    l_contra = 0.0
    if plan.use_intra:
        loss, gH, gHc, gr, gW = ct.intra_loss_grads(
            Ht, Htc, rt, state.disc_intra_target, eps, weight=w)
        l_contra += loss
        gHt += gH
        gHtc += gHc
        g_rt += gr
        if grads is not None:
            grads["disc_intra_target.W"] += gW
        if plan.use_source:
            loss, gH, gHc, gr, gW = ct.intra_loss_grads(
                Hs, Hsc, rs, state.disc_intra_source, eps, weight=w)
            l_contra += loss
            gHs += gH
            gHsc += gHc
            g_rs += gr
            if grads is not None:
                grads["disc_intra_source.W"] += gW

    if plan.use_inter and plan.use_source:
        # target side: contrast r_t with (r_s, corrupted r_s)
        loss, g_ra, g_rb, g_rbc, gW = ct.inter_loss_grads(
            rt, rs, rsc, state.disc_inter, eps, weight=w)
        l_contra += loss
        g_rt += g_ra
        g_rs += g_rb
        g_rsc += g_rbc
        if grads is not None:
            grads["disc_inter.W"] += gW
        # source side, mirrored: contrast r_s with (r_t, corrupted r_t)
        loss, g_ra, g_rb, g_rbc, gW = ct.inter_loss_grads(
            rs, rt, rtc, state.disc_inter, eps, weight=w)
        l_contra += loss
        g_rs += g_ra
        g_rt += g_rb
        g_rtc += g_rbc
        if grads is not None:
            grads["disc_inter.W"] += gW

    if grads is not None:
        gHt += g_rt / n_t
        gHtc += g_rtc / n_t
        _route_encode_grads(grads, "target", _encode_backward(gHt, cache_t))
        _route_encode_grads(grads, "target", _encode_backward(gHtc, cache_tc))
        if plan.use_source:
            gHs += g_rs / n_s
            gHsc += g_rsc / n_s
            _route_encode_grads(grads, "source",
                                _encode_backward(gHs, cache_s))
            _route_encode_grads(grads, "source",
                                _encode_backward(gHsc, cache_sc))
    return l_contra


def _detection_pass(state, prep, inputs, plan, grads):
    eps = plan.clamp_eps
    Zt, cache_zt = _encode_forward(prep.Xt, inputs.adj_target, "target",
                                   state.encoder,
                                   state.banks_for("target", plan))
    c_t = state.centers.effective("target")
    idx = prep.t_train_idx
    l_t, gZ_sub, g_ct = dt.dahsc_loss_grads(
        Zt[idx], prep.t_train_y, c_t, eps=eps,
        literal_labels=plan.literal_labels)

    l_s = 0.0
    if plan.use_source:
        Zs, cache_zs = _encode_forward(prep.Xs, inputs.adj_source, "source",
                                       state.encoder,
                                       state.banks_for("source", plan))
        c_s = state.centers.effective("source")
        l_s, gZs, g_cs = dt.dahsc_loss_grads(
            Zs, prep.ys, c_s, eps=eps, literal_labels=plan.literal_labels)

    if grads is not None:
        gZt = np.zeros_like(Zt)
        gZt[idx] = gZ_sub
        _route_encode_grads(grads, "target", _encode_backward(gZt, cache_zt))
        grads["center.u_target"] += g_ct
        grads["center.c"] += g_ct
        if plan.use_source:
            _route_encode_grads(grads, "source",
                                _encode_backward(gZs, cache_zs))
            grads["center.u_source"] += g_cs
            grads["center.c"] += g_cs
    return l_t, l_s


def self_objective(state: ModelState, Xt: np.ndarray,
                   adj_target_full: CompiledAdjacency, node_idx: np.ndarray,
                   node_y: np.ndarray, plan: TrainPlan,
                   want_grads: bool = True):
    """Target-only refinement objective over the pseudo-labeled node set.

    Uses the full (un-dropped) target adjacency and the detection branch.
    """
    grads = state.zero_grads() if want_grads else None
    Zt, cache = _encode_forward(Xt, adj_target_full, "target", state.encoder,
                                state.banks_for("target", plan))
    c_t = state.centers.effective("target")
    loss, gZ_sub, g_ct = dt.dahsc_loss_grads(
        Zt[node_idx], node_y, c_t, eps=plan.clamp_eps,
        literal_labels=plan.literal_labels)
    if grads is not None:
        gZt = np.zeros_like(Zt)
        gZt[node_idx] = gZ_sub
        _route_encode_grads(grads, "target", _encode_backward(gZt, cache))
        grads["center.u_target"] += g_ct
        grads["center.c"] += g_ct
    return loss, grads


def target_scores(state: ModelState, Xt: np.ndarray,
                  adj_target_full: CompiledAdjacency,
                  plan: TrainPlan) -> np.ndarray:
    """Inference-time anomaly scores for every target node (full
    adjacency, detection branch, effective target center)."""
    Zt, _ = _encode_forward(Xt, adj_target_full, "target", state.encoder,
                            state.banks_for("target", plan))
    return dt.anomaly_scores(Zt, state.centers.effective("target"))


def trainable_keys(plan: TrainPlan, phase: str) -> tuple[str, ...]:
    """Parameter names updated in a phase, after ablation exclusions."""
    if phase == "joint":
        keys = list(PARAM_KEYS)
        if not plan.use_source:
            keys = [k for k in keys
                    if not (k.startswith("mlp_source") or
                            k.startswith("prompt_source") or
                            k == "center.u_source")]
    elif phase == "self":
        keys = ["mlp_target.W", "mlp_target.b",
                "conv1.W_self", "conv1.W_neigh", "conv1.b",
                "conv2.W_self", "conv2.W_neigh", "conv2.b",
                "prompt_target.1", "prompt_target.2",
                "center.c", "center.u_target"]
    else:
        raise ValueError(f"unknown phase {phase!r}")
    if not plan.use_prompts:
        keys = [k for k in keys if not k.startswith("prompt_")]
    if not plan.shared_center:
        keys = [k for k in keys if k != "center.c"]
    if not plan.use_intra:
        keys = [k for k in keys if not k.startswith("disc_intra")]
    if not plan.use_inter or not plan.use_source:
        keys = [k for k in keys if k != "disc_inter.W"]
    return tuple(keys)
