"""Hypersphere membership, the few-shot classification loss, and scoring.

Membership of an embedding in the normal region is the Gaussian kernel
l(z, c) = exp(-||z - c||^2) against an effective center. Each domain's
effective center is a shared learnable center plus a domain-specific
learnable offset, so the domains share a common notion of normality while
keeping room to disagree. Normal nodes are pulled toward the center,
anomalies pushed away; the anomaly score of a node is 1 - l(z, c).
"""

from __future__ import annotations

import dataclasses

import numpy as np

DEFAULT_CLAMP_EPS = 1e-7


@dataclasses.dataclass
class CenterSet:
    """Shared center plus per-domain offsets; all learnable."""

    center: np.ndarray         # shared c
    offset_source: np.ndarray  # u_source
    offset_target: np.ndarray  # u_target

    def effective(self, domain: str) -> np.ndarray:
        if domain == "source":
            return self.center + self.offset_source
        if domain == "target":
            return self.center + self.offset_target
        raise ValueError(f"unknown domain {domain!r}")


@dataclasses.dataclass(frozen=True)
class LossWeights:
    """Weight of the contrastive term in the total objective."""

    alpha_balance: float

    def __post_init__(self):
        if self.alpha_balance < 0:
            raise ValueError(
                f"alpha_balance must be nonnegative, got {self.alpha_balance}")


def rbf_similarity(z: np.ndarray, center: np.ndarray) -> float:
    """exp(-||z - center||^2); equals 1 exactly when z is at the center."""
    z = np.asarray(z, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    if z.shape != center.shape:
        raise ValueError(
            f"vector widths differ: {z.shape} vs {center.shape}")
    d = z - center
    return float(np.exp(-(d @ d)))


def _membership(Z, center):
    diff = Z - center
    sq = np.einsum("ij,ij->i", diff, diff)
    return np.exp(-sq), diff


def dahsc_loss(Z: np.ndarray, labels: np.ndarray, center: np.ndarray,
               eps: float = DEFAULT_CLAMP_EPS,
               literal_labels: bool = False) -> float:
    """Hypersphere classification loss against an effective center.

    Mean over nodes of -(1 - y) log l(z, c) - y log(1 - l(z, c)) with l
    clamped to [eps, 1 - eps]. ``literal_labels=True`` swaps the roles of
    the two classes (the as-printed pairing, kept for comparison; it pulls
    anomalies toward the center and is not used by training).
    """
    loss, _, _ = dahsc_loss_grads(Z, labels, center, eps=eps,
                                  literal_labels=literal_labels)
    return loss


def dahsc_loss_grads(Z, labels, center, eps=DEFAULT_CLAMP_EPS, weight=1.0,
                     literal_labels=False):
    """Loss plus gradients w.r.t. the embeddings and the effective center."""
    Z = np.asarray(Z, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.shape != (Z.shape[0],):
        raise ValueError(
            f"labels shape {labels.shape} does not match {Z.shape[0]} nodes")
    if np.setdiff1d(np.unique(labels), [0, 1]).size:
        raise ValueError("labels must be binary (0 normal, 1 anomaly)")
    y = labels.astype(np.float64)
    if literal_labels:
        y = 1.0 - y
    l, diff = _membership(Z, np.asarray(center, dtype=np.float64))
    lc = np.clip(l, eps, 1.0 - eps)
    inside = (l >= eps) & (l <= 1.0 - eps)
    values = -(1.0 - y) * np.log(lc) - y * np.log(1.0 - lc)
    loss = float(values.mean())
    n = Z.shape[0]
    g_l = np.where(inside, -(1.0 - y) / lc + y / (1.0 - lc), 0.0) * (weight / n)
    g_sq = g_l * (-l)               # d exp(-q) / dq = -l
    g_Z = (2.0 * g_sq)[:, None] * diff
    g_center = -g_Z.sum(axis=0)
    return loss, g_Z, g_center


def total_loss(loss_target: float, loss_source: float, loss_contra: float,
               weights: LossWeights) -> float:
    """Overall objective: both hypersphere losses plus the weighted
    contrastive loss."""
    return loss_target + loss_source + weights.alpha_balance * loss_contra


def anomaly_scores(Z: np.ndarray, center: np.ndarray) -> np.ndarray:
    """Per-node anomaly score 1 - l(z, c); in [0, 1), larger is more
    anomalous."""
    Z = np.asarray(Z, dtype=np.float64)
    l, _ = _membership(Z, np.asarray(center, dtype=np.float64))
    return 1.0 - l
