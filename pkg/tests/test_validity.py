import math
import random
from fractions import Fraction

import numpy as np
import pytest

import oracles
from indexprobe import (
    Crosswalk,
    DegenerateRanking,
    InsufficientData,
    Ranking,
    UnitSetError,
    alignment,
    correlation_matrix,
    impact_validity,
    kendall_counts,
    kendall_tau,
    pair,
    spearman,
)
from indexprobe.validity import alignment_fraction, specification_report, specification_table_csv


def ranking(label, values, scale="tract", ids=None):
    ids = ids or [f"t{i:03d}" for i in range(len(values))]
    return Ranking(label, scale, dict(zip(ids, (float("nan") if v is None else float(v) for v in values))))


def test_pair_same_scale():
    p = pair(ranking("a", [1, 2, 3]), ranking("b", [3, 1, 2]))
    assert p.n == 3 and p.dropped == ()


def test_pair_drops_missing_with_reason():
    p = pair(ranking("a", [1, None, 3, 4]), ranking("b", [3, 1, None, 2]))
    assert p.unit_ids == ("t000", "t003")
    assert [reason for _, reason in p.dropped] == ["missing in a", "missing in b"]


def test_pair_broadcasts_coarse_onto_fine():
    fine = ranking("tract", [10, 20, 30, 40], ids=["f1", "f2", "f3", "f4"])
    coarse = ranking("nta", [50, 100], scale="nta", ids=["N1", "N2"])
    cw = Crosswalk("tract", "nta", [("f1", "N1", 1), ("f2", "N1", 1), ("f3", "N2", 1), ("f4", "N2", 1)])
    p = pair(fine, coarse, [cw])
    assert p.scale == "tract"
    assert p.b.tolist() == [50, 50, 100, 100]
    q = pair(fine, coarse, [cw], direction="coarse")
    assert q.scale == "nta" and q.a.tolist() == [15, 35]


def test_pair_needs_crosswalk_and_overlap():
    with pytest.raises(UnitSetError):
        pair(ranking("a", [1, 2]), ranking("b", [1, 2], scale="zcta"))
    with pytest.raises(InsufficientData):
        pair(ranking("a", [1, 2], ids=["x", "y"]), ranking("b", [1, 2], ids=["p", "q"]))


def test_spearman_identity_and_reversal():
    assert spearman(pair(ranking("a", [3, 1, 2]), ranking("b", [3, 1, 2]))) == 1.0
    assert spearman(pair(ranking("a", [1, 2, 3, 4]), ranking("b", [4, 3, 2, 1]))) == -1.0


def test_spearman_random_with_ties_matches_oracle():
    rng = random.Random(11)
    x = [rng.randint(0, 9) for _ in range(50)]
    y = [rng.randint(0, 9) for _ in range(50)]
    assert spearman(pair(ranking("a", x), ranking("b", y))) == pytest.approx(oracles.spearman(x, y), abs=1e-12)


def test_degenerate_side():
    p = pair(ranking("a", [1, 2, 3]), ranking("b", [7, 7, 7]))
    with pytest.raises(DegenerateRanking):
        spearman(p)
    with pytest.raises(DegenerateRanking):
        kendall_tau(p)


def test_kendall_small_case():
    counts = kendall_counts([1, 2, 3], [1, 3, 2])
    assert tuple(counts) == (2, 1, 0, 0, 3)
    assert counts.tau_b == pytest.approx(1 / 3, abs=1e-15)
    assert kendall_tau(pair(ranking("a", [4, 5, 6]), ranking("b", [4, 5, 6]))) == 1.0


def test_kendall_one_tied_pair():
    x, y = [1, 2, 3, 4], [1, 2, 2, 3]
    counts = kendall_counts(x, y)
    assert tuple(counts) == oracles.kendall_counts(x, y) == (5, 0, 0, 1, 6)
    assert counts.tau_b_squared == Fraction(25, 30)
    assert counts.tau_b == pytest.approx(0.9128709291752769, abs=1e-15)


def test_kendall_blocks_agree():
    rng = np.random.default_rng(2)
    a, b = rng.integers(0, 6, 77), rng.integers(0, 6, 77)
    assert kendall_counts(a, b, block=7) == kendall_counts(a, b) == oracles.kendall_counts(a.tolist(), b.tolist())


def test_alignment():
    ids = list("abcde")
    a = dict(zip(ids, [1, 2, 3, 4, 5]))
    assert alignment(a, a) == 100.0
    assert alignment(a, dict(zip(ids, [1, 2, 3, 4, 4]))) == 80.0
    assert alignment_fraction(a, dict(zip(ids, [5, 4, 3, 2, 1]))) == Fraction(1, 5)
    with pytest.raises(UnitSetError):
        alignment(a, {"z": 1})


def test_matrix_two_identical():
    r = correlation_matrix([ranking("a", [1, 3, 2]), ranking("b", [1, 3, 2])])
    (e,) = r.entries
    assert (e.spearman, e.kendall, e.n) == (1.0, 1.0, 3)


def test_matrix_matches_pairwise_oracle_and_isolates_degenerate():
    rng = random.Random(5)
    cols = {k: [rng.random() for _ in range(12)] for k in ("x", "y", "z")}
    rankings = [ranking(k, v) for k, v in cols.items()] + [ranking("flat", [1] * 12)]
    report = correlation_matrix(rankings)
    assert len(report.entries) == 6
    assert report.rows == ["flat", "x", "y", "z"]
    for a, b in (("x", "y"), ("x", "z"), ("y", "z")):
        e = report.get(b, a)
        assert e.spearman == pytest.approx(oracles.spearman(cols[a], cols[b]), abs=1e-12)
        assert e.kendall == pytest.approx(oracles.kendall_tau_b(cols[a], cols[b]), abs=1e-12)
        assert e.error is None
    for k in ("x", "y", "z"):
        assert report.get("flat", k).error.startswith("DegenerateRanking")


def test_fixed_universe_uses_common_units():
    report = correlation_matrix([ranking("a", [1, 2, 3, 4]), ranking("b", [2, 1, 4, 3]),
                                 ranking("c", [None, 1, 2, 3])], fixed_universe=True)
    assert {e.n for e in report.entries} == {3}
    assert report.metadata["universe_size"] == 3


def test_impact_validity_grid():
    rng = random.Random(8)
    idx = {k: [rng.random() for _ in range(8)] for k in ("hvi", "nri")}
    imp = {k: [rng.randint(0, 3) for _ in range(8)] for k in ("ems", "outage")}
    report = impact_validity([ranking(k, v) for k, v in idx.items()], [ranking(k, v) for k, v in imp.items()])
    assert report.rows == ["ems", "outage"] and report.columns == ["hvi", "nri"]
    assert len(report.entries) == 4
    for i, iv in imp.items():
        for j, jv in idx.items():
            e = report.get(i, j)
            assert e.spearman == pytest.approx(oracles.spearman(iv, jv), abs=1e-12)
            assert e.kendall == pytest.approx(oracles.kendall_tau_b(iv, jv), abs=1e-12)


def test_impact_validity_identity_and_constant():
    x = [5, 1, 4, 2, 3]
    report = impact_validity([ranking("hvi", x)], [ranking("same", x), ranking("flat", [0] * 5)])
    assert report.get("same", "hvi").spearman == 1.0
    assert "DegenerateRanking" in report.get("flat", "hvi").error


def test_report_exports():
    report = correlation_matrix([ranking("a", [1, 2, 3]), ranking("b", [1, 3, 2])])
    lines = report.matrix_csv("kendall").splitlines()
    assert lines[0] == ",a,b"
    assert lines[1].startswith("a,1.0,0.333333")
    assert '"kendall_variant": "tau-b"' in report.to_json()


def test_specification_report(tmp_path):
    from helpers import additive, frame_of
    from indexprobe import rank_index

    frame = frame_of({"x": [1.0, 2, 3, 4, 5], "y": [5.0, 1, 2, 3, 4]})
    base = rank_index(additive("base", "+x"), frame)
    rows = specification_report(base, [rank_index(additive("alt", "+x", "+y"), frame)])
    (row,) = rows
    assert row.n == 5
    assert row.matches == oracles.alignment(base.quintile.tolist(), rank_index(additive("alt", "+x", "+y"), frame).quintile.tolist()) * 5 / 100
    assert specification_table_csv(rows).splitlines()[1].startswith("alt,5,")
    assert not math.isnan(row.kendall_quintile)
