"""Edge-wise graph metrics, structural distances, and deterministic DAG projection.

``sid`` implements a parent-set disagreement count: for every ordered pair
(i, j), i != j, it checks whether the parent set of j after cutting all edges
into i differs between the two graphs.  Because cutting edges into i leaves
Pa(j) untouched for j != i, this reduces to (n-1) times the number of nodes
whose parent sets differ.  This is NOT the adjustment-set-based structural
intervention distance from the causal-inference literature; it is a
direction-sensitive disagreement count.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CyclicInput, ShapeMismatch
from .graphs import Dag, is_acyclic


@dataclass
class MetricReport:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f1: float
    shd: int = 0
    sid: int = 0

    def to_json(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
            "shd": self.shd, "sid": self.sid,
        }


@dataclass
class SupportGraph:
    """Real-valued edge supports in [0, 1]; an edge is present iff s >= threshold."""

    n: int
    support: np.ndarray

    def __post_init__(self):
        self.support = np.asarray(self.support, dtype=float)
        if self.support.shape != (self.n, self.n):
            raise ShapeMismatch(f"support must be {self.n}x{self.n}")
        np.fill_diagonal(self.support, 0.0)


@dataclass
class ErrorDecomposition:
    missed: list  # FN edges present in target, absent in prediction
    spurious: list  # FP edges absent in target, present in prediction

    @property
    def fn(self) -> int:
        return len(self.missed)

    @property
    def fp(self) -> int:
        return len(self.spurious)

    def to_json(self) -> dict:
        return {
            "missed": [list(e) for e in self.missed],
            "spurious": [list(e) for e in self.spurious],
            "fn": self.fn,
            "fp": self.fp,
        }


def _as_binary(adj, name="adjacency") -> np.ndarray:
    a = np.asarray(adj)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ShapeMismatch(f"{name} must be square, got shape {a.shape}")
    if not np.isin(a, (0, 1)).all():
        raise ShapeMismatch(f"{name} must be binary")
    if np.diagonal(a).any():
        raise ShapeMismatch(f"{name} must have a zero diagonal")
    return a.astype(np.int8)


def _pair(target, predicted):
    t = target.edges if isinstance(target, Dag) else _as_binary(target, "target")
    p = predicted.edges if isinstance(predicted, Dag) else _as_binary(predicted, "predicted")
    if t.shape != p.shape:
        raise ShapeMismatch(f"node counts differ: {t.shape[0]} vs {p.shape[0]}")
    return t, p


def edge_prf(target, predicted) -> MetricReport:
    """Edge-wise TP/FP/FN counts with precision, recall, and F1.

    Conventions at the undefined corners: if both graphs are empty, P = R =
    F1 = 1; if TP = 0 but errors exist, all three are 0.
    """
    t, p = _pair(target, predicted)
    tp = int(((t == 1) & (p == 1)).sum())
    fp = int(((t == 0) & (p == 1)).sum())
    fn = int(((t == 1) & (p == 0)).sum())
    if tp == 0 and fp == 0 and fn == 0:
        prec = rec = f1 = 1.0
    elif tp == 0:
        prec = rec = f1 = 0.0
    else:
        prec = tp / (tp + fp)
        rec = tp / (tp + fn)
        f1 = 2 * prec * rec / (prec + rec)
    return MetricReport(tp=tp, fp=fp, fn=fn, precision=prec, recall=rec, f1=f1)


def shd(g1, g2) -> int:
    """Edge-wise Hamming distance between two binary adjacency matrices."""
    a, b = _pair(g1, g2)
    return int((a != b).sum())


def sid(g, g_hat) -> int:
    """Parent-set disagreement count over ordered node pairs (see module docstring)."""
    a, b = _pair(g, g_hat)
    if not is_acyclic(a) or not is_acyclic(b):
        raise CyclicInput("sid requires acyclic inputs; project cyclic graphs first")
    n = a.shape[0]
    differing = int((a != b).any(axis=0).sum())  # nodes whose parent sets differ
    return (n - 1) * differing


def decompose_errors(target, predicted) -> ErrorDecomposition:
    """Explicit lists of missed-required (FN) and spurious (FP) edges."""
    t, p = _pair(target, predicted)
    missed = [(int(i), int(j)) for i, j in zip(*np.nonzero((t == 1) & (p == 0)))]
    spurious = [(int(i), int(j)) for i, j in zip(*np.nonzero((t == 0) & (p == 1)))]
    return ErrorDecomposition(missed=missed, spurious=spurious)


def _reachable(adj: np.ndarray) -> np.ndarray:
    """Boolean matrix R with R[u, v] true iff a directed path u -> ... -> v exists."""
    r = adj.astype(bool)
    n = r.shape[0]
    power = 1
    reach = r.copy()
    while power < n:
        reach = reach | (reach @ r)
        power += 1
    return reach


def project_dag(sg: SupportGraph, threshold: float = 0.5):
    """Deterministic cycle removal by deleting the lowest-support cycle edge.

    Starts from the edge set {(i, j): s_ij >= threshold}.  While a directed
    cycle exists, among edges lying on at least one cycle the single
    lowest-support edge is removed; ties break by lexicographic (i, j) order.
    Returns (Dag, removal_log) where removal_log is the ordered list of
    removed edges.
    """
    edges = (sg.support >= threshold).astype(np.int8)
    np.fill_diagonal(edges, 0)
    removed: list[tuple[int, int]] = []
    while True:
        reach = _reachable(edges)
        # an edge (u, v) lies on a cycle iff v reaches u
        on_cycle = edges.astype(bool) & reach.T
        if not on_cycle.any():
            break
        us, vs = np.nonzero(on_cycle)
        supports = sg.support[us, vs]
        # lowest support first; ties by lexicographic (i, j)
        best = np.lexsort((vs, us, supports))[0]
        u, v = int(us[best]), int(vs[best])
        edges[u, v] = 0
        removed.append((u, v))
    return Dag(n=sg.n, edges=edges), removed
