"""Majority-vote consensus graphs, Krippendorff's alpha, and low-agreement flags."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import EmptyRatings, InsufficientData
from .graphs import Dag
from .metrics import SupportGraph, project_dag

DEFAULT_RATERS = 11


@dataclass
class RatingMatrix:
    """Binary edge ratings: items are (text_id, i, j) triples, columns are raters.

    ``ratings[item_index][rater_index]`` is 0, 1, or None for a missing rating.
    """

    items: list  # list of (text_id, i, j)
    ratings: list  # list of per-item rating lists

    def __post_init__(self):
        if len(self.items) != len(self.ratings):
            raise ValueError("items and ratings must align")
        for row in self.ratings:
            for r in row:
                if r not in (0, 1, None):
                    raise ValueError(f"ratings must be 0/1/None, got {r!r}")

    @classmethod
    def from_rows(cls, rows, raters: int = DEFAULT_RATERS) -> "RatingMatrix":
        """Build from (text_id, i, j, rater_id, label) tuples; rater ids are 0-based."""
        by_item = defaultdict(lambda: [None] * raters)
        order = []
        for text_id, i, j, rater, label in rows:
            key = (text_id, int(i), int(j))
            if key not in by_item:
                order.append(key)
            by_item[key][int(rater)] = int(label)
        return cls(items=order, ratings=[by_item[k] for k in order])


def majority_consensus(rm: RatingMatrix, raters: int = DEFAULT_RATERS) -> dict:
    """Per-text support graphs and majority-vote consensus DAGs.

    The consensus edge is present iff the yes-votes form a strict majority of
    the ratings present for that item (s >= 6/11 with a full panel of 11).
    Cyclic consensus graphs are projected deterministically; the removal log
    is returned alongside each graph.
    """
    if not rm.items:
        raise EmptyRatings("no rated items")
    per_text_nodes: dict = defaultdict(int)
    for text_id, i, j, in rm.items:
        per_text_nodes[text_id] = max(per_text_nodes[text_id], i + 1, j + 1)
    out = {}
    votes = {item: row for item, row in zip(rm.items, rm.ratings)}
    for text_id, n in per_text_nodes.items():
        support = np.zeros((n, n), dtype=float)
        consensus = np.zeros((n, n), dtype=np.int8)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                row = votes.get((text_id, i, j))
                if row is None:
                    continue
                present = [r for r in row if r is not None]
                if not present:
                    continue
                yes = sum(present)
                support[i, j] = yes / len(present)
                if yes >= len(present) // 2 + 1:
                    consensus[i, j] = 1
        sg = SupportGraph(n=n, support=support)
        # project only the consensus edges, keeping their vote proportions as supports
        masked = support * consensus
        dag, removed = project_dag(SupportGraph(n=n, support=masked), threshold=np.nextafter(0.0, 1.0))
        out[text_id] = {"support": sg, "consensus": dag, "removed": removed}
    return out


def krippendorff_alpha(rm: RatingMatrix) -> float:
    """Krippendorff's alpha for nominal binary ratings via coincidence matrices.

    Items with fewer than two ratings are excluded.  If every usable rating
    in the matrix carries the same label, expected disagreement is zero and
    alpha is defined as 1.0.
    """
    pairable = [
        [r for r in row if r is not None]
        for row in rm.ratings
    ]
    pairable = [vals for vals in pairable if len(vals) >= 2]
    if not pairable:
        raise InsufficientData("need at least one item with >= 2 ratings")

    # coincidence counts o[c][k] over value pairs within items
    o = np.zeros((2, 2), dtype=float)
    for vals in pairable:
        m = len(vals)
        counts = np.bincount(vals, minlength=2).astype(float)
        for c in range(2):
            for k in range(2):
                if c == k:
                    o[c, k] += counts[c] * (counts[c] - 1) / (m - 1)
                else:
                    o[c, k] += counts[c] * counts[k] / (m - 1)
    n_c = o.sum(axis=1)
    n_total = o.sum()
    d_o = o[0, 1] + o[1, 0]
    d_e = 2 * n_c[0] * n_c[1] / (n_total - 1)
    if d_e == 0:
        return 1.0
    return float(1.0 - d_o / d_e)


@dataclass
class AgreementFlags:
    borderline_edges: list  # (text_id, i, j, s) with s in the borderline band
    flagged_texts: list  # text ids whose borderline fraction exceeds the quantile

    def to_json(self) -> dict:
        return {
            "borderline_edges": [
                {"text_id": t, "i": i, "j": j, "support": s}
                for t, i, j, s in self.borderline_edges
            ],
            "flagged_texts": list(self.flagged_texts),
        }


def flag_low_agreement(
    supports: dict,
    raters: int = DEFAULT_RATERS,
    graph_quantile: float = 0.9,
) -> AgreementFlags:
    """Flag borderline edges (s in {5/11, 6/11} for an 11-rater panel).

    ``supports`` maps text_id -> SupportGraph.  A text is flagged when its
    fraction of borderline ordered pairs exceeds the given quantile of that
    fraction across all texts.
    """
    borderline_band = {Fraction(raters // 2, raters), Fraction(raters // 2 + 1, raters)}
    edges = []
    fractions = {}
    for text_id, sg in supports.items():
        n = sg.n
        hits = 0
        total = n * (n - 1)
        for i in range(n):
            for j in range(n):
                if i == j:
                    continue
                s = sg.support[i, j]
                if any(abs(s - float(b)) < 1e-9 for b in borderline_band):
                    edges.append((text_id, i, j, float(s)))
                    hits += 1
        fractions[text_id] = hits / total if total else 0.0
    if fractions:
        cutoff = float(np.quantile(list(fractions.values()), graph_quantile))
        flagged = [t for t, f in fractions.items() if f > cutoff and f > 0]
    else:
        flagged = []
    return AgreementFlags(borderline_edges=edges, flagged_texts=flagged)
