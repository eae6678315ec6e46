"""Attributed-graph data model, stochastic augmentation, and graph readout.

Graphs are undirected and immutable after construction: edges are stored
canonically as an ``(m, 2)`` int64 array with ``u < v`` per row, sorted
lexicographically, and all arrays are marked read-only. Every other module
builds on the types here.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .kernels import scatter_rows


def _canonical_edges(edges) -> np.ndarray:
    """Deduplicated (m, 2) int64 edge array with u <= v per row, lexsorted."""
    arr = np.array(list(edges) if not isinstance(edges, np.ndarray) else edges,
                   dtype=np.int64).reshape(-1, 2)
    if arr.shape[0] == 0:
        return arr
    lo = np.minimum(arr[:, 0], arr[:, 1])
    hi = np.maximum(arr[:, 0], arr[:, 1])
    return np.unique(np.stack([lo, hi], axis=1), axis=0)


@dataclasses.dataclass(frozen=True)
class AttributedGraph:
    """Undirected graph with node features and optional binary anomaly labels.

    Parameters
    ----------
    num_nodes : int
        Number of nodes; node indices run over ``[0, num_nodes)``.
    edges : array-like
        Iterable of unordered node-index pairs. Canonicalized on
        construction (one row per undirected edge, ``u < v``, sorted).
    features : array-like
        ``(num_nodes, d)`` real feature matrix.
    labels : array-like, optional
        Length ``num_nodes`` vector in {0, 1}; 1 marks an anomaly.

    Malformed inputs (out-of-range endpoints, self-loops, shape or label
    violations) are not rejected here; ``validate_graph`` reports them as
    diagnostics so loaders can abort with context.
    """

    num_nodes: int
    edges: np.ndarray
    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        edges = _canonical_edges(self.edges)
        features = np.array(self.features, dtype=np.float64, copy=True)
        if features.ndim == 1:
            features = features.reshape(-1, 1)
        edges.flags.writeable = False
        features.flags.writeable = False
        object.__setattr__(self, "edges", edges)
        object.__setattr__(self, "features", features)
        if self.labels is not None:
            # asanyarray keeps ndarray subclasses (tests use an
            # access-tracking subclass to audit label reads).
            labels = np.asanyarray(self.labels)
            object.__setattr__(self, "labels", labels)

    @property
    def num_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def num_attrs(self) -> int:
        return self.features.shape[1]

    def adjacency(self) -> np.ndarray:
        """Dense symmetric 0/1 adjacency matrix (valid endpoints required)."""
        a = np.zeros((self.num_nodes, self.num_nodes))
        if self.num_edges:
            a[self.edges[:, 0], self.edges[:, 1]] = 1.0
            a[self.edges[:, 1], self.edges[:, 0]] = 1.0
        return a


@dataclasses.dataclass(frozen=True)
class EdgeMask:
    """Surviving edges after an augmentation pass; a subset of the parent's."""

    num_nodes: int
    kept: np.ndarray  # (m_kept, 2), canonical form

    def __post_init__(self):
        kept = _canonical_edges(self.kept)
        kept.flags.writeable = False
        object.__setattr__(self, "kept", kept)

    @property
    def num_kept(self) -> int:
        return self.kept.shape[0]

    def compile(self) -> CompiledAdjacency:
        return CompiledAdjacency.from_edges(self.num_nodes, self.kept)


@dataclasses.dataclass(frozen=True)
class CompiledAdjacency:
    """Directed edge arrays plus inverse degrees, ready for the scatter kernel.

    Each undirected edge contributes both directions, so the scatter
    operator is symmetric: ``scatter(src -> dst)`` equals its transpose.
    Isolated nodes carry ``inv_deg == 0`` and aggregate to the zero vector.
    """

    num_nodes: int
    src: np.ndarray
    dst: np.ndarray
    inv_deg: np.ndarray

    @classmethod
    def from_edges(cls, num_nodes: int, edges: np.ndarray) -> CompiledAdjacency:
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        src = np.concatenate([edges[:, 0], edges[:, 1]])
        dst = np.concatenate([edges[:, 1], edges[:, 0]])
        deg = np.bincount(dst, minlength=num_nodes).astype(np.float64)
        inv_deg = np.zeros(num_nodes)
        nz = deg > 0
        inv_deg[nz] = 1.0 / deg[nz]
        return cls(num_nodes=num_nodes, src=src, dst=dst, inv_deg=inv_deg)

    @classmethod
    def from_graph(cls, graph: AttributedGraph) -> CompiledAdjacency:
        return cls.from_edges(graph.num_nodes, graph.edges)

    def neighbor_mean(self, values: np.ndarray) -> np.ndarray:
        """Row i of the result is the mean of ``values`` over i's neighbors."""
        summed = scatter_rows(values, self.src, self.dst, self.num_nodes)
        return summed * self.inv_deg[:, None]

    def neighbor_mean_vjp(self, grad_out: np.ndarray) -> np.ndarray:
        """Adjoint of :meth:`neighbor_mean` (symmetric edge list assumed)."""
        scaled = grad_out * self.inv_deg[:, None]
        return scatter_rows(scaled, self.src, self.dst, self.num_nodes)


def drop_edges(graph: AttributedGraph, p: float,
               rng: np.random.Generator) -> EdgeMask:
    """Remove each undirected edge independently with probability ``p``.

    One coin flip per undirected edge, so the surviving structure stays
    symmetric. ``p`` is the drop probability: edges are kept with
    probability ``1 - p``.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"drop probability must lie in [0, 1], got {p}")
    if graph.num_edges == 0:
        return EdgeMask(graph.num_nodes, graph.edges)
    keep = rng.random(graph.num_edges) >= p
    return EdgeMask(graph.num_nodes, graph.edges[keep])


def corrupt_features(graph: AttributedGraph,
                     rng: np.random.Generator) -> np.ndarray:
    """Shuffle node features across the graph (uniform row permutation)."""
    if graph.num_nodes < 1:
        raise ValueError("graph must have at least one node")
    perm = rng.permutation(graph.num_nodes)
    return graph.features[perm]


def readout_mean(embeddings: np.ndarray) -> np.ndarray:
    """Graph-level embedding: the arithmetic mean of the node rows."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise ValueError("readout needs a nonempty 2-d embedding matrix")
    return embeddings.mean(axis=0)


def validate_graph(graph: AttributedGraph) -> list[str]:
    """Invariant diagnostics; empty list iff the graph is well-formed."""
    out = []
    n = graph.num_nodes
    if n <= 0:
        out.append(f"num_nodes must be positive, got {n}")
        return out
    edges = graph.edges
    if edges.shape[0]:
        bad = (edges < 0) | (edges >= n)
        for u, v in edges[bad.any(axis=1)]:
            out.append(f"edge ({u}, {v}) has an endpoint outside [0, {n})")
        for u, v in edges[edges[:, 0] == edges[:, 1]]:
            out.append(f"self-loop at node {u}")
    if graph.features.shape[0] != n:
        out.append(
            f"features has {graph.features.shape[0]} rows, expected {n}")
    if graph.labels is not None:
        labels = np.asarray(graph.labels)
        if labels.shape != (n,):
            out.append(f"labels has shape {labels.shape}, expected ({n},)")
        else:
            bad_vals = np.setdiff1d(np.unique(labels), [0, 1])
            if bad_vals.size:
                out.append(
                    f"labels contain non-binary values {bad_vals.tolist()}")
    return out
