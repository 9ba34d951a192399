import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dlcoal_astral.newick import NewickError
from dlcoal_astral.trees import (GeneTree, QuartetTopology, SpeciesTree, Topology, candidate_quartet_matrix,
                                 depth, double_factorial, enumerate_unrooted_topologies, min_branch_length,
                                 min_internal_branch, parse_newick, quartet_index, restrict_to_quartet,
                                 unrooted_equal, write_newick)


def test_species_tree_times(caterpillar):
    t = caterpillar
    assert t.depth == pytest.approx(1.4)
    assert t.time(t.node_id("A")) == 0.0
    assert t.time(t.mrca_of("AB")) == pytest.approx(1.0)
    assert t.time(t.mrca_of("ABC")) == pytest.approx(1.2)
    assert t.time(0) == pytest.approx(1.4)
    assert min_branch_length(t) == pytest.approx(0.2)
    assert min_internal_branch(t) == pytest.approx(0.2)
    assert depth(t) == pytest.approx(1.4)


@pytest.mark.parametrize("text, msg", [
    ("((A:1,B:1):1,(C:1,A:1):1);", "duplicate"),
    ("((A:1,B:1,C:1):1,D:2);", "binary"),
    ("((A:1,B:0):1,(C:1,D:1):1);", "positive"),
    ("((A_1:1,B:1):1,(C:1,D:1):1);", "reserved"),
])
def test_species_tree_rejects(text, msg):
    with pytest.raises(ValueError, match=msg):
        SpeciesTree.from_newick(text)


@pytest.mark.parametrize("text", ["((A,B),(C,D)", "((A,B),(C,D));x", "((A:x,B),(C,D));", "(A,B));"])
def test_newick_errors_have_offsets(text):
    with pytest.raises(NewickError) as err:
        parse_newick(text, kind="topology")
    assert err.value.offset >= 0


def test_species_roundtrip(five):
    again = SpeciesTree.from_newick(write_newick(five))
    assert again == five
    assert again.to_newick() == five.to_newick()


def test_gene_tree_labels():
    g = GeneTree.from_newick("((a_0:1,b_0:1):1,(a_1:1.5,c_0:1.5):0.5);")
    assert sorted(g.labels) == ["a_0", "a_1", "b_0", "c_0"]
    assert g.copies_by_species()["a"] == [g.leaf_id("a_0"), g.leaf_id("a_1")]
    assert g.time(0) == pytest.approx(2.0)
    assert GeneTree.from_newick(g.to_newick()) == g


def test_gene_tree_duplicate_label():
    with pytest.raises(ValueError, match="duplicate"):
        GeneTree.from_newick("((a_0,b_0),(a_0,c_0));")


def test_restrict_fixture():
    g = GeneTree.from_newick("(((a_1,b_1),(a_2,b_2)),(c_1,d_1));")
    assert restrict_to_quartet(g, ["a_1", "b_1", "c_1", "d_1"]) == QuartetTopology.AB_CD
    assert restrict_to_quartet(g, ["a_1", "b_2", "c_1", "d_1"]) == QuartetTopology.AB_CD
    h = GeneTree.from_newick("((a_0,c_0),(b_0,d_0));")
    assert restrict_to_quartet(h, ["a_0", "b_0", "c_0", "d_0"]) == QuartetTopology.AC_BD
    k = GeneTree.from_newick("(((a_0,d_0),b_0),c_0);")
    assert restrict_to_quartet(k, ["a_0", "b_0", "c_0", "d_0"]) == QuartetTopology.AD_BC


@pytest.mark.parametrize("n", [4, 5, 6, 7, 8])
def test_enumeration_counts(n):
    taxa = [f"t{i}" for i in range(n)]
    tops = list(enumerate_unrooted_topologies(taxa))
    assert len(tops) == double_factorial(2 * n - 5)
    assert len(set(tops)) == len(tops)
    assert all(len(t.splits) == n - 3 for t in tops)


def test_enumeration_cap():
    with pytest.raises(ValueError, match="cap"):
        list(enumerate_unrooted_topologies([f"t{i}" for i in range(10)]))


@pytest.mark.parametrize("n", [4, 5, 6])
def test_candidate_matrix_matches_topologies(n):
    taxa = tuple(f"t{i}" for i in range(n))
    m = candidate_quartet_matrix(n)
    for c, top in enumerate(enumerate_unrooted_topologies(taxa)):
        for q, row in enumerate(quartet_index(n)):
            assert m[c, q] == int(top.quartet(*(taxa[i] for i in row)))


def test_unrooted_equal_ignores_root(five):
    rerooted = SpeciesTree.from_newick("(A:1,(B:2,(C:1,(D:0.5,E:0.5):0.5):1):1);")
    assert unrooted_equal(five, rerooted)
    other = SpeciesTree.from_newick("((A:1,C:1):1,(B:1,(D:0.5,E:0.5):0.5):1);")
    assert not unrooted_equal(five, other)


def test_topology_newick_canonical():
    a = Topology.from_newick("((E,D),(C,(B,A)));")
    b = Topology.from_newick("(A,(B,(C,(D,E))));")
    assert a == b
    assert a.to_newick() == "(A,(B,(C,(D,E))));"


def _random_tree(draw, n):
    names = [chr(ord("A") + i) for i in range(n)]
    perm = draw(st.permutations(names))
    nodes = [p for p in perm]
    while len(nodes) > 1:
        i = draw(st.integers(0, len(nodes) - 2))
        nodes[i:i + 2] = [f"({nodes[i]},{nodes[i + 1]})"]
    return nodes[0] + ";"


@st.composite
def newick_topologies(draw):
    n = draw(st.integers(4, 8))
    return _random_tree(draw, n)


@settings(max_examples=60, deadline=None)
@given(newick_topologies())
def test_topology_roundtrip_property(text):
    t = Topology.from_newick(text)
    assert Topology.from_newick(t.to_newick()) == t
    assert len(t.splits) == t.n_taxa - 3


@settings(max_examples=40, deadline=None)
@given(newick_topologies(), st.randoms())
def test_relabel_equivariance(text, rnd):
    t = Topology.from_newick(text)
    names = list(t.taxa)
    shuffled = names[:]
    rnd.shuffle(shuffled)
    mapping = dict(zip(names, shuffled))
    r = t.relabel(mapping)
    for q in itertools.combinations(names, 4):
        assert r.quartet(*(mapping[x] for x in q)) == t.quartet(*q)


@settings(max_examples=40, deadline=None)
@given(newick_topologies())
def test_restrict_agrees_with_topology(text):
    t = Topology.from_newick(text)
    g = GeneTree.from_newick(text.replace(",", "_0,").replace(")", "_0)", 1) if False else _as_gene(text))
    for q in itertools.combinations(t.taxa, 4):
        assert restrict_to_quartet(g, [f"{x}_0" for x in q]) == t.quartet(*q)


def _as_gene(text):
    out = []
    for ch in text:
        out.append(ch + "_0" if ch.isalpha() else ch)
    return "".join(out)


def test_quartet_index_lexicographic():
    q = quartet_index(5)
    assert q.shape == (5, 4)
    assert [tuple(r) for r in q] == list(itertools.combinations(range(5), 4))
    assert math.comb(9, 4) == quartet_index(9).shape[0]
    assert np.all(np.diff(q[:, 0]) >= 0)
