"""Dataset layout, split protocol, K-shot sampling, and the synthetic
cross-domain pair generator.

On-disk layout (all text, one directory per graph):

* ``meta.json``     descriptor: name, num_nodes, num_attrs, num_edges,
  num_anomalies, directed (always false). Counts are cross-checked against
  the data files on load.
* ``edges.tsv``     header ``src\\tdst``, one undirected edge per row with
  ``u < v``, sorted lexicographically.
* ``features.tsv``  one node per row, tab-separated reals, no header.
* ``labels.tsv``    one 0/1 per row, no header.

The synthetic generator substitutes for proprietary review-graph data: two
block-structured graphs whose target block means are an affine shift of
the source means (exercising the distinct-MLP path via unequal attribute
widths), with structural anomalies (densely wired cliques) and contextual
anomalies (features resampled far from their block) injected into both.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path

import numpy as np

from .graphs import AttributedGraph, validate_graph
from .seeding import derive_seed, substream


class DatasetError(Exception):
    """Raised for missing, malformed, or inconsistent dataset files."""


@dataclasses.dataclass(frozen=True)
class DatasetDescriptor:
    name: str
    num_nodes: int
    num_attrs: int
    num_edges: int
    num_anomalies: int
    directed: bool = False

    @classmethod
    def from_graph(cls, graph: AttributedGraph, name: str) -> DatasetDescriptor:
        return cls(name=name, num_nodes=graph.num_nodes,
                   num_attrs=graph.num_attrs, num_edges=graph.num_edges,
                   num_anomalies=int(np.asarray(graph.labels).sum()))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


@dataclasses.dataclass(frozen=True)
class SplitMasks:
    """Disjoint train/val/test node-index sets covering all nodes."""

    train: np.ndarray
    val: np.ndarray
    test: np.ndarray

    def __post_init__(self):
        parts = []
        for field in ("train", "val", "test"):
            arr = np.sort(np.asarray(getattr(self, field), dtype=np.int64))
            arr.flags.writeable = False
            object.__setattr__(self, field, arr)
            parts.append(arr)
        n = sum(p.size for p in parts)
        union = np.concatenate(parts)
        if np.unique(union).size != n or not np.array_equal(
                np.sort(union), np.arange(n)):
            raise ValueError("split masks must partition [0, n) exactly")

    @property
    def num_nodes(self) -> int:
        return self.train.size + self.val.size + self.test.size

    def to_dict(self) -> dict:
        return {"train": self.train.tolist(), "val": self.val.tolist(),
                "test": self.test.tolist()}


def save_split(masks: SplitMasks, path) -> None:
    Path(path).write_text(json.dumps(masks.to_dict()) + "\n")


def load_split(path) -> SplitMasks:
    raw = json.loads(Path(path).read_text())
    return SplitMasks(train=raw["train"], val=raw["val"], test=raw["test"])


@dataclasses.dataclass(frozen=True)
class DomainBundle:
    """A fully labeled source graph plus a target graph with (optionally)
    materialized split masks and K labeled anomalies."""

    source: AttributedGraph
    target: AttributedGraph
    masks: SplitMasks | None = None
    shots: np.ndarray | None = None

    def with_protocol(self, shots: int, seed: int) -> DomainBundle:
        """Resample the target split and the K-shot labeled-anomaly set."""
        masks = make_split(self.target, derive_seed(seed, "split"))
        shot_set = sample_few_shot(self.target, masks, shots,
                                   derive_seed(seed, "shots"))
        return dataclasses.replace(self, masks=masks, shots=shot_set)

    def require_protocol(self) -> None:
        if self.masks is None or self.shots is None:
            raise ValueError(
                "bundle carries no split masks / K-shot set; call "
                "with_protocol(shots, seed) first")


# ---------------------------------------------------------------------------
# On-disk format


def _fmt(x: float) -> str:
    return repr(float(x))


def save_dataset(graph: AttributedGraph, directory,
                 name: str | None = None) -> DatasetDescriptor:
    """Write the canonical four-file layout; byte-deterministic."""
    if graph.labels is None:
        raise ValueError("datasets on disk carry ground-truth labels; "
                         "the graph has none")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    desc = DatasetDescriptor.from_graph(graph, name or directory.name)
    (directory / "meta.json").write_text(
        json.dumps(desc.to_dict(), indent=2, sort_keys=True) + "\n")
    lines = ["src\tdst"]
    lines += [f"{u}\t{v}" for u, v in graph.edges]
    (directory / "edges.tsv").write_text("\n".join(lines) + "\n")
    rows = ["\t".join(_fmt(x) for x in row) for row in graph.features]
    (directory / "features.tsv").write_text("\n".join(rows) + "\n")
    labels = np.asarray(graph.labels)
    (directory / "labels.tsv").write_text(
        "\n".join(str(int(v)) for v in labels) + "\n")
    return desc


def _read_lines(path: Path) -> list[str]:
    if not path.is_file():
        raise DatasetError(f"missing dataset file: {path}")
    text = path.read_text()
    return text.splitlines()


def load_dataset(directory) -> tuple[AttributedGraph, DatasetDescriptor]:
    """Load and validate one dataset directory.

    Any malformed row fails with the file and 1-based line number; any
    graph-invariant diagnostic aborts the load.
    """
    directory = Path(directory)
    meta_path = directory / "meta.json"
    if not meta_path.is_file():
        raise DatasetError(f"missing dataset file: {meta_path}")
    try:
        meta = json.loads(meta_path.read_text())
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{meta_path}: invalid JSON ({exc})") from exc
    required = ("name", "num_nodes", "num_attrs", "num_edges",
                "num_anomalies", "directed")
    missing = [k for k in required if k not in meta]
    if missing:
        raise DatasetError(f"{meta_path}: missing fields {missing}")
    if meta["directed"]:
        raise DatasetError(f"{meta_path}: directed graphs are not supported")
    n = int(meta["num_nodes"])

    edge_path = directory / "edges.tsv"
    edge_lines = _read_lines(edge_path)
    if not edge_lines or edge_lines[0] != "src\tdst":
        raise DatasetError(f"{edge_path}:1: expected header 'src\\tdst'")
    edges = np.zeros((len(edge_lines) - 1, 2), dtype=np.int64)
    for i, line in enumerate(edge_lines[1:], start=2):
        parts = line.split("\t")
        try:
            u, v = int(parts[0]), int(parts[1])
        except (ValueError, IndexError) as exc:
            raise DatasetError(
                f"{edge_path}:{i}: malformed edge row {line!r}") from exc
        if not (0 <= u < v < n):
            raise DatasetError(
                f"{edge_path}:{i}: edge ({u}, {v}) violates 0 <= u < v < {n}")
        edges[i - 2] = (u, v)

    feat_path = directory / "features.tsv"
    feat_lines = _read_lines(feat_path)
    d = int(meta["num_attrs"])
    features = np.zeros((len(feat_lines), d))
    for i, line in enumerate(feat_lines, start=1):
        parts = line.split("\t")
        if len(parts) != d:
            raise DatasetError(
                f"{feat_path}:{i}: expected {d} columns, got {len(parts)}")
        try:
            features[i - 1] = [float(x) for x in parts]
        except ValueError as exc:
            raise DatasetError(
                f"{feat_path}:{i}: malformed feature row") from exc

    label_path = directory / "labels.tsv"
    label_lines = _read_lines(label_path)
    labels = np.zeros(len(label_lines), dtype=np.int64)
    for i, line in enumerate(label_lines, start=1):
        try:
            val = int(line)
        except ValueError as exc:
            raise DatasetError(
                f"{label_path}:{i}: malformed label {line!r}") from exc
        if val not in (0, 1):
            raise DatasetError(f"{label_path}:{i}: label must be 0 or 1")
        labels[i - 1] = val

    graph = AttributedGraph(num_nodes=n, edges=edges, features=features,
                            labels=labels)
    checks = (
        ("num_nodes", n, len(feat_lines)),
        ("num_nodes", n, len(label_lines)),
        ("num_edges", int(meta["num_edges"]), edges.shape[0]),
        ("num_edges", int(meta["num_edges"]), graph.num_edges),
        ("num_anomalies", int(meta["num_anomalies"]), int(labels.sum())),
    )
    for field, declared, actual in checks:
        if declared != actual:
            raise DatasetError(
                f"{directory}: meta.json declares {field}={declared} but "
                f"files contain {actual}")
    diagnostics = validate_graph(graph)
    if diagnostics:
        raise DatasetError(
            f"{directory}: graph invariants violated: " + "; ".join(diagnostics))
    desc = DatasetDescriptor(
        name=str(meta["name"]), num_nodes=n, num_attrs=d,
        num_edges=int(meta["num_edges"]),
        num_anomalies=int(meta["num_anomalies"]))
    return graph, desc


# ---------------------------------------------------------------------------
# Split protocol and K-shot sampling


def make_split(graph: AttributedGraph, seed: int) -> SplitMasks:
    """Uniform 40/20/40 train/val/test partition of the nodes.

    Sizes are the floors of the ratios with the remainder distributed
    train-first, then val, then test.
    """
    n = graph.num_nodes
    if n < 5:
        raise ValueError(f"need at least 5 nodes to split, got {n}")
    sizes = [int(math.floor(0.4 * n)), int(math.floor(0.2 * n)),
             int(math.floor(0.4 * n))]
    i = 0
    while sum(sizes) < n:
        sizes[i] += 1
        i += 1
    perm = np.random.default_rng(seed).permutation(n)
    train = perm[:sizes[0]]
    val = perm[sizes[0]:sizes[0] + sizes[1]]
    test = perm[sizes[0] + sizes[1]:]
    return SplitMasks(train=train, val=val, test=test)


def sample_few_shot(graph: AttributedGraph, masks: SplitMasks, shots: int,
                    seed: int) -> np.ndarray:
    """Draw K labeled anomalies uniformly from anomalies in the train mask.

    Only train-mask labels are read here; validation/test labels stay
    untouched until final metric computation.
    """
    if shots < 1:
        raise ValueError(f"shots must be >= 1, got {shots}")
    if graph.labels is None:
        raise ValueError("graph has no labels to sample anomalies from")
    train_labels = graph.labels[masks.train]
    anomalies = masks.train[np.asarray(train_labels) == 1]
    if anomalies.size < shots:
        raise ValueError(
            f"train mask holds {anomalies.size} anomalies, "
            f"cannot sample {shots}")
    rng = np.random.default_rng(seed)
    picked = rng.choice(anomalies, size=shots, replace=False)
    return np.sort(picked)


# ---------------------------------------------------------------------------
# Synthetic cross-domain pair


@dataclasses.dataclass(frozen=True)
class SyntheticPairConfig:
    """Desk-scale stand-in for real cross-domain review graphs.

    Unequal attribute widths are the default on purpose: they exercise the
    per-domain MLP path, which is the reason the model has one.
    """

    num_nodes: int = 400
    num_blocks: int = 3
    p_intra: float = 0.08
    p_inter: float = 0.005
    source_dim: int = 24
    target_dim: int = 32
    shift_scale: float = 0.9
    shift_offset: float = 0.4
    anomaly_fraction: float = 0.05
    clique_size: int = 10
    context_scale: float = 10.0
    noise_scale: float = 0.75
    block_mean_scale: float = 2.0
    seed: int = 0

    def validate(self) -> None:
        if not (0.0 <= self.p_intra <= 1.0 and 0.0 <= self.p_inter <= 1.0):
            raise ValueError("infeasible edge probabilities: "
                             f"p_intra={self.p_intra}, p_inter={self.p_inter}")
        if not 0.0 < self.anomaly_fraction <= 0.2:
            raise ValueError(
                f"anomaly fraction must lie in (0, 0.2], got "
                f"{self.anomaly_fraction}")
        if round(self.anomaly_fraction * self.num_nodes) < 2:
            raise ValueError(
                "need at least 2 anomalies per graph so both mechanisms "
                "can be injected")
        if self.num_nodes < 5 or self.num_blocks < 1:
            raise ValueError("need >= 5 nodes and >= 1 block")
        if min(self.source_dim, self.target_dim) < 1:
            raise ValueError("attribute dimensions must be positive")
        if self.clique_size < 2:
            raise ValueError("clique size must be >= 2")

    @classmethod
    def from_dict(cls, raw: dict) -> SyntheticPairConfig:
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ValueError(f"unknown synthetic-config fields: {unknown}")
        cfg = cls(**raw)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _tile_to_width(means: np.ndarray, width: int) -> np.ndarray:
    reps = int(math.ceil(width / means.shape[1]))
    return np.tile(means, (1, reps))[:, :width]


def _gen_graph(cfg: SyntheticPairConfig, block_means: np.ndarray,
               domain: str) -> AttributedGraph:
    n, B = cfg.num_nodes, cfg.num_blocks
    d = block_means.shape[1]
    rng_edges = substream(cfg.seed, f"edges/{domain}")
    rng_feats = substream(cfg.seed, f"features/{domain}")
    rng_anoms = substream(cfg.seed, f"anomalies/{domain}")

    blocks = np.arange(n) % B
    iu, iv = np.triu_indices(n, k=1)
    prob = np.where(blocks[iu] == blocks[iv], cfg.p_intra, cfg.p_inter)
    keep = rng_edges.random(iu.size) < prob
    edge_list = list(zip(iu[keep].tolist(), iv[keep].tolist()))

    features = block_means[blocks] + rng_feats.normal(
        0.0, cfg.noise_scale, size=(n, d))

    n_anom = int(round(cfg.anomaly_fraction * n))
    anomaly_nodes = rng_anoms.choice(n, size=n_anom, replace=False)
    n_struct = n_anom // 2
    structural = anomaly_nodes[:n_struct]
    contextual = anomaly_nodes[n_struct:]

    for start in range(0, structural.size, cfg.clique_size):
        group = structural[start:start + cfg.clique_size]
        if group.size >= 2:
            for a in range(group.size):
                for b in range(a + 1, group.size):
                    edge_list.append((int(group[a]), int(group[b])))
        else:
            # a 1-clique adds no edges; wire the leftover as a dense hub
            hub = int(group[0])
            others = np.setdiff1d(np.arange(n), [hub])
            partners = rng_anoms.choice(others, size=cfg.clique_size - 1,
                                        replace=False)
            edge_list.extend((hub, int(p)) for p in partners)

    # contextual anomalies: resample from an overdispersed distribution
    # around the block mean (noise inflated by context_scale)
    for node in contextual:
        features[node] = (block_means[blocks[node]]
                          + rng_feats.normal(
                              0.0, cfg.context_scale * cfg.noise_scale,
                              size=d))

    labels = np.zeros(n, dtype=np.int64)
    labels[anomaly_nodes] = 1
    return AttributedGraph(num_nodes=n, edges=edge_list, features=features,
                           labels=labels)


def gen_synthetic_pair(
        config: SyntheticPairConfig
) -> tuple[DomainBundle, tuple[DatasetDescriptor, DatasetDescriptor]]:
    """Two block-structured graphs with shifted target attribute means and
    ground-truth anomalies of both mechanisms; deterministic under the
    config seed. Split masks and the K-shot set are sampled downstream."""
    config.validate()
    rng_means = substream(config.seed, "block-means")
    source_means = rng_means.normal(
        0.0, config.block_mean_scale,
        size=(config.num_blocks, config.source_dim))
    target_means = (config.shift_scale
                    * _tile_to_width(source_means, config.target_dim)
                    + config.shift_offset)
    source = _gen_graph(config, source_means, "source")
    target = _gen_graph(config, target_means, "target")
    bundle = DomainBundle(source=source, target=target)
    descs = (DatasetDescriptor.from_graph(source, "synthetic-source"),
             DatasetDescriptor.from_graph(target, "synthetic-target"))
    return bundle, descs
