"""Shared two-layer mean-aggregation graph encoder.

Per-domain input MLPs map raw attributes (whose width differs between
domains) to a common hidden width; two graph-convolution layers in the
mean-aggregator style follow. A per-domain, per-layer bank of prompt bases
can be mixed into the hidden representations: each node attends over the
bases with a softmax of dot products and adds the weighted combination to
its own embedding, so a zero bank is exactly the identity.

Every forward op has a hand-derived backward companion; the training loop
assembles them into full-objective gradients that are checked against
central finite differences in the test suite.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .graphs import AttributedGraph, CompiledAdjacency, EdgeMask

DOMAINS = ("source", "target")


@dataclasses.dataclass
class AffineParams:
    """One affine map with a rectifying nonlinearity: relu(x @ W + b)."""

    W: np.ndarray  # (d_in, d_out)
    b: np.ndarray  # (d_out,)


@dataclasses.dataclass
class SageParams:
    """Graph-conv layer: W_self @ own + W_neigh @ neighbor-mean + b."""

    W_self: np.ndarray   # (d_in, d_out)
    W_neigh: np.ndarray  # (d_in, d_out)
    b: np.ndarray        # (d_out,)


@dataclasses.dataclass
class EncoderParams:
    source_mlp: AffineParams
    target_mlp: AffineParams
    layer1: SageParams
    layer2: SageParams

    def mlp_for(self, domain: str) -> AffineParams:
        if domain not in DOMAINS:
            raise ValueError(f"domain must be one of {DOMAINS}, got {domain!r}")
        return self.source_mlp if domain == "source" else self.target_mlp


@dataclasses.dataclass
class PromptBank:
    """Learnable basis vectors added to node embeddings, one bank per
    (domain, layer)."""

    bases: np.ndarray  # (m, k)

    @property
    def num_bases(self) -> int:
        return self.bases.shape[0]

    @property
    def width(self) -> int:
        return self.bases.shape[1]


# ---------------------------------------------------------------------------
# MLP preprocessing


def _affine_relu_forward(X, W, b):
    pre = X @ W + b
    out = np.maximum(pre, 0.0)
    return out, (X, pre > 0)


def _affine_relu_backward(grad_out, cache):
    X, active = cache
    g_pre = grad_out * active
    return X.T @ g_pre, g_pre.sum(axis=0)


def mlp_preprocess(features: np.ndarray, domain: str,
                   params: EncoderParams) -> np.ndarray:
    """Domain-specific initial representations fed to the shared encoder."""
    mlp = params.mlp_for(domain)
    features = np.asarray(features, dtype=np.float64)
    if features.shape[1] != mlp.W.shape[0]:
        raise ValueError(
            f"{domain} features have width {features.shape[1]}, "
            f"the {domain} MLP expects {mlp.W.shape[0]}")
    out, _ = _affine_relu_forward(features, mlp.W, mlp.b)
    return out


# ---------------------------------------------------------------------------
# Graph convolution


def _coerce_adjacency(adj) -> CompiledAdjacency:
    if isinstance(adj, CompiledAdjacency):
        return adj
    if isinstance(adj, EdgeMask):
        return adj.compile()
    raise TypeError(f"expected CompiledAdjacency or EdgeMask, got {type(adj)}")


def _sage_forward(H, adj: CompiledAdjacency, layer: SageParams, relu: bool):
    N = adj.neighbor_mean(H)
    pre = H @ layer.W_self + N @ layer.W_neigh + layer.b
    out = np.maximum(pre, 0.0) if relu else pre
    active = (pre > 0) if relu else None
    return out, (H, N, active, adj)


def _sage_backward(grad_out, cache, layer: SageParams):
    H, N, active, adj = cache
    g_pre = grad_out * active if active is not None else grad_out
    g_self = H.T @ g_pre
    g_neigh = N.T @ g_pre
    g_b = g_pre.sum(axis=0)
    g_H = g_pre @ layer.W_self.T + adj.neighbor_mean_vjp(g_pre @ layer.W_neigh.T)
    return g_H, g_self, g_neigh, g_b


def sage_layer(embeddings: np.ndarray, adj, layer: SageParams,
               relu: bool = True) -> np.ndarray:
    """One graph-conv step over the (possibly edge-dropped) adjacency.

    A node with no surviving neighbors aggregates the zero vector and is
    driven by its own embedding alone.
    """
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.shape[1] != layer.W_self.shape[0]:
        raise ValueError(
            f"embedding width {embeddings.shape[1]} does not match layer "
            f"input width {layer.W_self.shape[0]}")
    out, _ = _sage_forward(embeddings, _coerce_adjacency(adj), layer, relu)
    return out


# ---------------------------------------------------------------------------
# Prompt banks


def prompt_weights(embeddings: np.ndarray, bank: PromptBank) -> np.ndarray:
    """Per-node softmax attention over the bank's basis vectors.

    Rows are strictly positive and sum to 1; the row maximum is subtracted
    before exponentiation for overflow safety.
    """
    weights, _ = _prompt_weights_forward(np.asarray(embeddings, dtype=np.float64), bank)
    return weights


def _prompt_weights_forward(H, bank: PromptBank):
    if bank.num_bases == 0:
        raise ValueError("prompt bank must contain at least one basis")
    if bank.width != H.shape[1]:
        raise ValueError(
            f"basis width {bank.width} does not match embedding width {H.shape[1]}")
    logits = H @ bank.bases.T
    logits = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(logits)
    weights = expd / expd.sum(axis=1, keepdims=True)
    # keep rows strictly positive even when a logit gap underflows exp
    weights = np.maximum(weights, np.finfo(np.float64).tiny)
    return weights, (H, weights)


def _enhance_forward(H, bank: PromptBank):
    weights, _ = _prompt_weights_forward(H, bank)
    out = H + weights @ bank.bases
    return out, (H, weights, bank)


def _enhance_backward(grad_out, cache):
    H, A, bank = cache
    P = bank.bases
    g_P = A.T @ grad_out                      # additive-combination path
    g_A = grad_out @ P.T
    # softmax backward, rowwise: g_logits = A * (g_A - <g_A, A>)
    inner = (g_A * A).sum(axis=1, keepdims=True)
    g_logits = A * (g_A - inner)
    g_H = grad_out + g_logits @ P             # identity path + logits path
    g_P += g_logits.T @ H
    return g_H, g_P


def enhance(embeddings: np.ndarray, bank: PromptBank) -> np.ndarray:
    """Add the attention-weighted basis combination to each embedding."""
    out, _ = _enhance_forward(np.asarray(embeddings, dtype=np.float64), bank)
    return out


# ---------------------------------------------------------------------------
# Full pipeline


@dataclasses.dataclass
class EncodeGrads:
    """Parameter gradients accumulated by one backward pass of `encode`."""

    mlp_W: np.ndarray
    mlp_b: np.ndarray
    l1_self: np.ndarray
    l1_neigh: np.ndarray
    l1_b: np.ndarray
    l2_self: np.ndarray
    l2_neigh: np.ndarray
    l2_b: np.ndarray
    bank1: np.ndarray | None
    bank2: np.ndarray | None


def _encode_forward(features, adj: CompiledAdjacency, domain: str,
                    params: EncoderParams,
                    banks: tuple[PromptBank, PromptBank] | None):
    """Pipeline: MLP -> conv1 [-> prompt1] -> conv2 [-> prompt2]."""
    mlp = params.mlp_for(domain)
    if features.shape[1] != mlp.W.shape[0]:
        raise ValueError(
            f"{domain} features have width {features.shape[1]}, "
            f"the {domain} MLP expects {mlp.W.shape[0]}")
    F, c_mlp = _affine_relu_forward(features, mlp.W, mlp.b)
    H1, c_l1 = _sage_forward(F, adj, params.layer1, relu=True)
    if banks is not None:
        Z1, c_e1 = _enhance_forward(H1, banks[0])
    else:
        Z1, c_e1 = H1, None
    H2, c_l2 = _sage_forward(Z1, adj, params.layer2, relu=False)
    if banks is not None:
        Z2, c_e2 = _enhance_forward(H2, banks[1])
    else:
        Z2, c_e2 = H2, None
    cache = (domain, c_mlp, c_l1, c_e1, c_l2, c_e2, params)
    return Z2, cache


def _encode_backward(grad_out, cache) -> EncodeGrads:
    domain, c_mlp, c_l1, c_e1, c_l2, c_e2, params = cache
    g_bank2 = g_bank1 = None
    g = grad_out
    if c_e2 is not None:
        g, g_bank2 = _enhance_backward(g, c_e2)
    g, g2_self, g2_neigh, g2_b = _sage_backward(g, c_l2, params.layer2)
    if c_e1 is not None:
        g, g_bank1 = _enhance_backward(g, c_e1)
    g, g1_self, g1_neigh, g1_b = _sage_backward(g, c_l1, params.layer1)
    g_mlp_W, g_mlp_b = _affine_relu_backward(g, c_mlp)
    return EncodeGrads(g_mlp_W, g_mlp_b, g1_self, g1_neigh, g1_b,
                       g2_self, g2_neigh, g2_b, g_bank1, g_bank2)


def encode(graph: AttributedGraph, mask, domain: str, params: EncoderParams,
           banks: tuple[PromptBank, PromptBank] | None = None,
           corrupted: bool = False,
           rng: np.random.Generator | None = None) -> np.ndarray:
    """Node representations for one domain over one augmented adjacency.

    Without ``banks`` this is the contrastive branch; with banks the prompt
    combination is added after each conv layer (detection branch). With
    ``corrupted=True`` the features are row-shuffled first, drawing the
    permutation from ``rng``.
    """
    X = graph.features
    if corrupted:
        if rng is None:
            raise ValueError("corrupted passes need a seeded rng")
        X = X[rng.permutation(graph.num_nodes)]
    out, _ = _encode_forward(X, _coerce_adjacency(mask), domain, params, banks)
    return out
