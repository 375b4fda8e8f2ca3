import numpy as np
import pytest

from causaltext.consensus import (
    RatingMatrix,
    flag_low_agreement,
    krippendorff_alpha,
    majority_consensus,
)
from causaltext.errors import EmptyRatings, InsufficientData


def full_panel_rows(text_id, n, yes_counts, raters=11):
    """Rows for every ordered pair; yes_counts maps (i,j) -> number of 1 votes."""
    rows = []
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            yes = yes_counts.get((i, j), 0)
            for r in range(raters):
                rows.append((text_id, i, j, r, 1 if r < yes else 0))
    return rows


class TestMajority:
    def test_six_of_eleven_present(self):
        rm = RatingMatrix.from_rows(full_panel_rows("t", 2, {(0, 1): 6}))
        out = majority_consensus(rm)
        assert out["t"]["consensus"].edges[0, 1] == 1

    def test_five_of_eleven_absent(self):
        rm = RatingMatrix.from_rows(full_panel_rows("t", 2, {(0, 1): 5}))
        out = majority_consensus(rm)
        assert out["t"]["consensus"].edges[0, 1] == 0

    def test_unanimous_no(self):
        rm = RatingMatrix.from_rows(full_panel_rows("t", 2, {}))
        out = majority_consensus(rm)
        assert out["t"]["support"].support[0, 1] == 0.0
        assert out["t"]["consensus"].edge_count == 0

    def test_missing_ratings_use_proportional_majority(self):
        # 3 of 5 present ratings is a strict majority
        rows = [("t", 0, 1, r, 1) for r in range(3)] + [("t", 0, 1, r, 0) for r in (3, 4)]
        rows += [("t", 1, 0, 0, 0), ("t", 1, 0, 1, 0)]
        rm = RatingMatrix.from_rows(rows)
        out = majority_consensus(rm)
        assert out["t"]["consensus"].edges[0, 1] == 1

    def test_cyclic_consensus_projected(self):
        counts = {(0, 1): 8, (1, 0): 7}
        rm = RatingMatrix.from_rows(full_panel_rows("t", 2, counts))
        out = majority_consensus(rm)
        dag = out["t"]["consensus"]
        assert dag.is_acyclic()
        # lower-support direction removed
        assert out["t"]["removed"] == [(1, 0)]
        assert dag.edges[0, 1] == 1

    def test_empty_raises(self):
        with pytest.raises(EmptyRatings):
            majority_consensus(RatingMatrix(items=[], ratings=[]))

    def test_flip_one_vote_only_matters_at_boundary(self):
        for yes in range(12):
            rm1 = RatingMatrix.from_rows(full_panel_rows("t", 2, {(0, 1): yes}))
            e1 = majority_consensus(rm1)["t"]["consensus"].edges[0, 1]
            assert e1 == (1 if yes >= 6 else 0)


class TestAlpha:
    def test_perfect_agreement_mixed_items(self):
        rows = []
        for r in range(3):
            rows.append(("t", 0, 1, r, 1))
            rows.append(("t", 1, 0, r, 0))
        assert krippendorff_alpha(RatingMatrix.from_rows(rows, raters=3)) == pytest.approx(1.0)

    def test_two_item_two_rater_case(self):
        # item1 = (1, 1), item2 = (0, 1) -> alpha = 0
        rows = [("t", 0, 1, 0, 1), ("t", 0, 1, 1, 1), ("t", 1, 0, 0, 0), ("t", 1, 0, 1, 1)]
        assert krippendorff_alpha(RatingMatrix.from_rows(rows, raters=2)) == pytest.approx(0.0, abs=1e-9)

    def test_all_identical_defined_as_one(self):
        rows = [("t", 0, 1, r, 1) for r in range(4)]
        assert krippendorff_alpha(RatingMatrix.from_rows(rows, raters=4)) == 1.0

    def test_insufficient_data(self):
        rows = [("t", 0, 1, 0, 1)]
        with pytest.raises(InsufficientData):
            krippendorff_alpha(RatingMatrix.from_rows(rows, raters=11))

    def test_invariance_under_rater_and_item_permutation(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n_items, n_raters = int(rng.integers(2, 8)), int(rng.integers(2, 6))
            ratings = rng.integers(0, 2, size=(n_items, n_raters))
            items = [("t", 0, k + 1) for k in range(n_items)]
            rm = RatingMatrix(items=items, ratings=ratings.tolist())
            a0 = krippendorff_alpha(rm)
            rp = rng.permutation(n_raters)
            ip = rng.permutation(n_items)
            rm2 = RatingMatrix(
                items=[items[i] for i in ip],
                ratings=ratings[np.ix_(ip, rp)].tolist(),
            )
            assert krippendorff_alpha(rm2) == pytest.approx(a0, abs=1e-12)


class TestFlags:
    def support_graph(self, s01):
        from causaltext.metrics import SupportGraph

        sup = np.zeros((2, 2))
        sup[0, 1] = s01
        return SupportGraph(n=2, support=sup)

    def test_borderline_flagged(self):
        flags = flag_low_agreement({"t": self.support_graph(5 / 11)})
        assert [(t, i, j) for t, i, j, _ in flags.borderline_edges] == [("t", 0, 1)]
        flags = flag_low_agreement({"t": self.support_graph(6 / 11)})
        assert len(flags.borderline_edges) == 1

    def test_outside_band_not_flagged(self):
        flags = flag_low_agreement({"t": self.support_graph(7 / 11)})
        assert flags.borderline_edges == []

    def test_unanimous_no_flags(self):
        flags = flag_low_agreement({"t": self.support_graph(1.0), "u": self.support_graph(0.0)})
        assert flags.borderline_edges == [] and flags.flagged_texts == []

    def test_graph_level_flag(self):
        heavy = self.support_graph(5 / 11)
        clean = self.support_graph(1.0)
        flags = flag_low_agreement(
            {"bad": heavy, **{f"ok{k}": clean for k in range(9)}}, graph_quantile=0.5
        )
        assert flags.flagged_texts == ["bad"]
