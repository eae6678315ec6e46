"""Shared fixtures and the label-access recorder used by leakage tests."""

import numpy as np
import pytest

from crossgad.data import DomainBundle, SyntheticPairConfig, gen_synthetic_pair
from crossgad.graphs import AttributedGraph


class LabelAccessRecorder(np.ndarray):
    """ndarray subclass logging which positions are read via indexing.

    The pipeline reads labels only through explicit indexing (train-mask
    reads for K-shot sampling, test/val-mask reads for final metrics), so
    the log is a faithful audit of label access.
    """

    def __new__(cls, values, log):
        obj = np.asarray(values).view(cls)
        obj.access_log = log
        return obj

    def __array_finalize__(self, obj):
        if obj is not None:
            self.access_log = getattr(obj, "access_log", None)

    def __getitem__(self, item):
        log = getattr(self, "access_log", None)
        if log is not None and self.ndim == 1:
            positions = np.atleast_1d(np.arange(self.shape[0])[item])
            log.extend(int(i) for i in positions)
        return super().__getitem__(item)


def tiny_graph(n=6, seed=0, with_labels=True):
    rng = np.random.default_rng(seed)
    edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 5), (0, 5), (1, 4)]
    labels = np.array([0, 0, 1, 0, 0, 1]) if with_labels else None
    return AttributedGraph(num_nodes=n, edges=edges,
                           features=rng.normal(size=(n, 3)), labels=labels)


@pytest.fixture(scope="session")
def small_pair():
    """60+60-node synthetic pair for fast end-to-end tests."""
    cfg = SyntheticPairConfig(num_nodes=60, num_blocks=2, source_dim=6,
                              target_dim=8, anomaly_fraction=0.1,
                              clique_size=3, seed=13)
    bundle, descs = gen_synthetic_pair(cfg)
    return bundle, descs


@pytest.fixture(scope="session")
def tiny_bundle():
    """<= 50 total nodes, protocol applied; for gradient checks."""
    cfg = SyntheticPairConfig(num_nodes=24, num_blocks=2, source_dim=6,
                              target_dim=8, anomaly_fraction=0.15,
                              clique_size=3, seed=5)
    bundle, _ = gen_synthetic_pair(cfg)
    return bundle.with_protocol(1, 11)


def protocol_bundle(bundle: DomainBundle, shots=1, seed=7) -> DomainBundle:
    return bundle.with_protocol(shots, seed)
