"""Bilinear discriminator and the domain-adaptive contrastive losses.

The intra-domain term contrasts each node against its own graph summary
(corrupted nodes as negatives); the inter-domain term contrasts the two
graph summaries against each other (corrupted summary as negative). Three
independent discriminator matrices are used: intra-source, intra-target,
and one shared inter-domain matrix, since the intra terms compare
node-vs-summary while the inter terms compare summary-vs-summary.

Probabilities are clamped to [eps, 1 - eps] inside the logarithms so the
losses stay finite at sigmoid saturation; clamped entries contribute zero
gradient.
"""

from __future__ import annotations

import dataclasses

import numpy as np

DEFAULT_CLAMP_EPS = 1e-7


@dataclasses.dataclass
class Discriminator:
    """Bilinear similarity scorer: sigmoid(x @ W @ y)."""

    W: np.ndarray  # (k, k)

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"discriminator matrix must be square, got {W.shape}")
        self.W = W


def _sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def discriminate(x: np.ndarray, y: np.ndarray, disc: Discriminator) -> float:
    """Similarity of two representations, strictly inside (0, 1)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    k = disc.W.shape[0]
    if x.shape != (k,) or y.shape != (k,):
        raise ValueError(
            f"expected two width-{k} vectors, got {x.shape} and {y.shape}")
    return float(_sigmoid(np.array([x @ disc.W @ y]))[0])


def _log_loss_terms(p, positive: bool, eps: float):
    """Value and dL/dp of -log(p) (positive pair) or -log(1-p) (negative).

    Returns per-element values and gradients; the clamp zeroes gradients
    outside [eps, 1 - eps].
    """
    pc = np.clip(p, eps, 1.0 - eps)
    inside = (p >= eps) & (p <= 1.0 - eps)
    if positive:
        value = -np.log(pc)
        grad = np.where(inside, -1.0 / pc, 0.0)
    else:
        value = -np.log(1.0 - pc)
        grad = np.where(inside, 1.0 / (1.0 - pc), 0.0)
    return value, grad


def _intra_terms(H, H_cor, r, disc, eps):
    """Shared forward math for the intra-domain loss and its gradients."""
    Wr = disc.W @ r
    s_pos = H @ Wr
    s_neg = H_cor @ Wr
    p = _sigmoid(s_pos)
    q = _sigmoid(s_neg)
    v_pos, g_p = _log_loss_terms(p, positive=True, eps=eps)
    v_neg, g_q = _log_loss_terms(q, positive=False, eps=eps)
    loss = float(np.mean(v_pos + v_neg))
    return loss, (H, H_cor, r, Wr, s_pos, s_neg, p, q, g_p, g_q)


def intra_loss(H: np.ndarray, H_cor: np.ndarray, r: np.ndarray,
               disc: Discriminator, eps: float = DEFAULT_CLAMP_EPS) -> float:
    """Node-vs-summary contrast within one domain.

    Mean over nodes of -log D(h_i, r) - log(1 - D(h_cor_i, r)).
    """
    H = np.asarray(H, dtype=np.float64)
    H_cor = np.asarray(H_cor, dtype=np.float64)
    if H.shape != H_cor.shape:
        raise ValueError(
            f"clean and corrupted embeddings differ in shape: "
            f"{H.shape} vs {H_cor.shape}")
    loss, _ = _intra_terms(H, H_cor, np.asarray(r, dtype=np.float64), disc, eps)
    return loss


def intra_loss_grads(H, H_cor, r, disc, eps=DEFAULT_CLAMP_EPS, weight=1.0):
    """Loss plus gradients w.r.t. H, H_cor, r, and the discriminator."""
    loss, cache = _intra_terms(H, H_cor, r, disc, eps)
    H, H_cor, r, Wr, _, _, p, q, g_p, g_q = cache
    n = H.shape[0]
    w = weight / n
    gs_pos = w * g_p * p * (1.0 - p)
    gs_neg = w * g_q * q * (1.0 - q)
    g_H = np.outer(gs_pos, Wr)
    g_Hc = np.outer(gs_neg, Wr)
    v = H.T @ gs_pos + H_cor.T @ gs_neg
    g_r = disc.W.T @ v
    g_W = np.outer(v, r)
    return loss, g_H, g_Hc, g_r, g_W


def inter_loss(r_a: np.ndarray, r_b: np.ndarray, r_b_cor: np.ndarray,
               disc: Discriminator, eps: float = DEFAULT_CLAMP_EPS) -> float:
    """Summary-vs-summary contrast across domains.

    -log D(r_a, r_b) - log(1 - D(r_a, r_b_cor)), where r_b_cor is the other
    domain's corrupted summary.
    """
    loss, _ = _inter_terms(np.asarray(r_a, dtype=np.float64),
                           np.asarray(r_b, dtype=np.float64),
                           np.asarray(r_b_cor, dtype=np.float64), disc, eps)
    return loss


def _inter_terms(r_a, r_b, r_b_cor, disc, eps):
    k = disc.W.shape[0]
    for name, vec in (("r_a", r_a), ("r_b", r_b), ("r_b_cor", r_b_cor)):
        if vec.shape != (k,):
            raise ValueError(f"{name} has shape {vec.shape}, expected ({k},)")
    s_pos = r_a @ disc.W @ r_b
    s_neg = r_a @ disc.W @ r_b_cor
    p = _sigmoid(np.array([s_pos]))[0]
    q = _sigmoid(np.array([s_neg]))[0]
    v_pos, g_p = _log_loss_terms(np.array([p]), positive=True, eps=eps)
    v_neg, g_q = _log_loss_terms(np.array([q]), positive=False, eps=eps)
    loss = float(v_pos[0] + v_neg[0])
    return loss, (p, q, float(g_p[0]), float(g_q[0]))


def inter_loss_grads(r_a, r_b, r_b_cor, disc, eps=DEFAULT_CLAMP_EPS,
                     weight=1.0):
    """Loss plus gradients w.r.t. all three summaries and the discriminator."""
    loss, (p, q, g_p, g_q) = _inter_terms(r_a, r_b, r_b_cor, disc, eps)
    gs_pos = weight * g_p * p * (1.0 - p)
    gs_neg = weight * g_q * q * (1.0 - q)
    g_ra = gs_pos * (disc.W @ r_b) + gs_neg * (disc.W @ r_b_cor)
    g_rb = gs_pos * (disc.W.T @ r_a)
    g_rbc = gs_neg * (disc.W.T @ r_a)
    g_W = gs_pos * np.outer(r_a, r_b) + gs_neg * np.outer(r_a, r_b_cor)
    return loss, g_ra, g_rb, g_rbc, g_W


def contra_loss(intra_source: float, inter_source: float,
                intra_target: float, inter_target: float) -> float:
    """Final domain-adaptive contrastive loss: the sum of the four terms."""
    return intra_source + inter_source + intra_target + inter_target
