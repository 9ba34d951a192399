import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlcoal_astral.coalescent_sim import DLCoalSimulator
from dlcoal_astral.quartets import (TALLY_COLUMNS, QuartetTally, dominant, tally_multi, tally_one, tally_table,
                                    write_tallies_csv)
from dlcoal_astral.trees import GeneTree, QuartetTopology, SpeciesTree

from oracles import multi_counts

FIXTURE = "(((a_0,b_0),(a_1,b_1)),(c_0,d_0));"


def _genes(newick, lam, mu, count, seed):
    sp = SpeciesTree.from_newick(newick)
    return DLCoalSimulator(sp, lam, mu, random_state=seed).simulate(count)


def test_fixture_counts():
    g = GeneTree.from_newick(FIXTURE)
    t = tally_multi([g], "abcd")
    assert t.counts == (4, 0, 0)
    assert (t.n1, t.usable, t.skipped, t.total) == (4, 1, 0, 4)
    assert tally_multi([g], "abcd", method="enumerate").counts == (4, 0, 0)


def test_mixed_fixture():
    # a_0 groups with b_0, a_1 with c_0
    g = GeneTree.from_newick("(((a_0,b_0),d_0),(a_1,c_0));")
    assert tally_multi([g], "abcd").counts == (1, 1, 0)
    assert multi_counts(g, "abcd") == [1, 1, 0]


def test_dp_matches_brute_force():
    genes = [g for g in _genes("((a:1,b:1):0.3,(c:1,d:1):0.3);", 0.8, 0.3, 150, 2) if g is not None]
    for q in ("abcd", "acbd", "dbca"):
        dp = tally_multi(genes, q)
        ref = np.sum([multi_counts(g, q) for g in genes if set(q) <= g.species_set], axis=0)
        assert dp.counts == tuple(int(x) for x in ref)


def test_table_matches_single_quartet():
    genes = _genes("((a:1,b:1):0.3,(c:1,(d:0.5,e:0.5):0.5):0.3);", 0.6, 0.3, 80, 4)
    table = tally_table(genes, mode="multi")
    for k, row in enumerate(table.quartets):
        t = tally_multi(genes, row)
        assert tuple(table.counts[k]) == t.counts
        assert table.usable[k] == t.usable


def test_enumeration_subsampling_is_flagged():
    g = GeneTree.from_newick("((((a_0,a_1),(a_2,b_0)),(b_1,b_2)),((c_0,c_1),(d_0,d_1)));")
    exact = tally_multi([g], "abcd")
    sub = tally_multi([g], "abcd", method="enumerate", cap=10, random_state=1)
    assert sub.sampled and not exact.sampled
    assert sum(sub.counts) == pytest.approx(sum(exact.counts))


def test_tally_one_invariants():
    genes = _genes("((a:1,b:1):0.3,(c:1,d:1):0.3);", 0.8, 0.3, 300, 3)
    t = tally_one(genes, "abcd", 5)
    assert t.usable + t.skipped == len(genes)
    assert sum(t.counts) == t.usable
    assert t == tally_one(genes, "abcd", 5)
    perm = np.random.default_rng(0).permutation(len(genes))
    shuffled = tally_one([genes[i] for i in perm], "abcd", 5, replicate_ids=perm)
    assert shuffled.counts == t.counts


def test_tally_one_single_copy_equals_multi():
    genes = _genes("((a:1,b:1):0.3,(c:1,d:1):0.3);", 0.0, 0.0, 100, 8)
    assert tally_one(genes, "abcd", 1).counts == tally_multi(genes, "abcd").counts


def test_missing_species_skipped():
    g = GeneTree.from_newick("((a_0,b_0),(c_0,e_0));")
    t = tally_multi([g, None], "abcd")
    assert (t.usable, t.skipped, t.counts) == (0, 2, (0, 0, 0))


def test_bad_quartet():
    with pytest.raises(ValueError):
        tally_multi([], "abca")


@pytest.mark.parametrize("counts, topo, margin", [
    ((70, 20, 10), QuartetTopology.AB_CD, 0.5),
    ((1, 0, 0), QuartetTopology.AB_CD, 1.0),
    ((10, 5, 30), QuartetTopology.AD_BC, 20 / 45),
])
def test_dominant(counts, topo, margin):
    d = dominant(QuartetTally(tuple("abcd"), counts, sum(counts), 0, "one", False, None))
    assert d.topology == topo
    assert d.margin == pytest.approx(margin)
    assert d.ci[0] <= d.margin <= d.ci[1]
    assert not d.tied


def test_dominant_tie():
    d = dominant(QuartetTally(tuple("abcd"), (40, 40, 20), 100, 0, "one", False, None))
    assert d.topology == QuartetTopology.UNRESOLVED
    assert d.margin == 0.0
    assert d.tied == {QuartetTopology.AB_CD, QuartetTopology.AC_BD}


def test_dominant_multi_margin_per_gene():
    d = dominant(QuartetTally(tuple("abcd"), (12, 4, 0), 4, 0, "multi", False, None))
    assert d.margin == pytest.approx(2.0)


def test_merge_and_csv():
    a = QuartetTally(tuple("abcd"), (3, 1, 0), 4, 1, "one", False, 7)
    b = QuartetTally(tuple("abcd"), (1, 1, 1), 3, 0, "one", False, 7)
    m = a.merge(b)
    assert (m.counts, m.usable, m.skipped) == ((4, 2, 1), 7, 1)
    fh = io.StringIO()
    write_tallies_csv(fh, [m])
    rows = list(csv.reader(io.StringIO(fh.getvalue())))
    assert rows[0] == list(TALLY_COLUMNS)
    assert rows[1][1:6] == ["4", "2", "1", "7", "1"]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_dp_brute_force_property(seed):
    genes = _genes("((a:1,b:1):0.2,(c:1,d:1):0.2);", 1.0, 0.4, 3, seed)
    for g in genes:
        if g is not None and set("abcd") <= g.species_set and g.n_leaves <= 14:
            assert list(tally_multi([g], "abcd").counts) == multi_counts(g, "abcd")
