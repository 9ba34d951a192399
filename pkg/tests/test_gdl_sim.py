import math
import re

import numpy as np
import pytest

from dlcoal_astral._rng import Stream
from dlcoal_astral.gdl_sim import (DUP, LEAF, LOSS, SPEC, BDParams, LocusTree, census, prune_losses,
                                   simulate_full_locus_tree)
from dlcoal_astral.newick import NewickError
from dlcoal_astral.trees import SpeciesTree


def test_bdparams_validation():
    with pytest.raises(ValueError):
        BDParams(-0.1, 0.1)
    with pytest.raises(ValueError):
        BDParams(float("nan"), 0.1)
    assert BDParams(0.3, 0.1).net_rate == pytest.approx(0.2)


def test_zero_rates_copy_species_tree(five):
    for seed in range(5):
        full = simulate_full_locus_tree(five, BDParams(0, 0), seed)
        obs = prune_losses(full)
        assert obs.n_nodes == five.n_nodes
        assert obs.n_duplications() == 0
        assert set(obs.event) <= {LEAF, SPEC}
        assert all(c == 1 for c in obs.copies_per_species().values())


def test_prune_invariants(five):
    for seed in range(40):
        full = simulate_full_locus_tree(five, BDParams(0.6, 0.5), Stream(3, seed))
        full.validate()
        obs = prune_losses(full)
        n_extant = int(np.sum(full.event == LEAF))
        if obs.is_empty:
            assert n_extant == 0
            continue
        obs.validate()
        assert LOSS not in set(obs.event.tolist())
        assert int(np.sum(obs.event == LEAF)) == n_extant
        # kept nodes keep their times and events
        assert np.array_equal(obs.time, full.time[obs.source])
        assert np.array_equal(obs.event, full.event[obs.source])
        for v in range(obs.n_nodes):
            if obs.event[v] == LEAF:
                assert obs.time[v] == 0.0
            p = obs.parent[v]
            if p >= 0:
                assert obs.time[p] >= obs.time[v]


def test_duplications_lie_on_edges(balanced):
    for seed in range(30):
        full = simulate_full_locus_tree(balanced, BDParams(1.0, 0.3), seed)
        for v in np.flatnonzero(full.event == DUP):
            s = int(full.species[v])
            top = balanced.time(balanced.parent[s]) if s != 0 else balanced.depth
            assert balanced.time(s) < full.time[v] <= top


def _rounded(text):
    return re.sub(r":([0-9.e-]+)", lambda m: f":{float(m.group(1)):.9f}", text)


def test_locus_newick_roundtrip(balanced):
    for seed in range(10):
        obs = prune_losses(simulate_full_locus_tree(balanced, BDParams(0.8, 0.2), seed))
        again = LocusTree.from_newick(obs.to_newick(), balanced)
        assert _rounded(again.to_newick()) == _rounded(obs.to_newick())
        assert sorted(again.leaf_labels().values()) == sorted(obs.leaf_labels().values())
        assert again.copies_per_species() == obs.copies_per_species()
        np.testing.assert_allclose(again.time, obs.time, atol=1e-12)


def test_locus_newick_rejects_bad_labels(balanced):
    obs = prune_losses(simulate_full_locus_tree(balanced, BDParams(0, 0), 0))
    text = obs.to_newick()
    with pytest.raises(NewickError):
        LocusTree.from_newick(text.replace("A_0", "B_0"), balanced)
    with pytest.raises(NewickError):
        LocusTree.from_newick(text.replace("[&event=leaf", "[&event=twig", 1), balanced)
    with pytest.raises(NewickError, match="root edge"):
        LocusTree.from_newick(text[:-3] + "1];", balanced)


def test_census_counts(balanced):
    full = simulate_full_locus_tree(balanced, BDParams(0.8, 0.2), 11)
    c = census(full, balanced, 0)
    assert c.I == 1
    assert c.counts("ABCD") == tuple(full.copies_per_species()[s] for s in "ABCD")


def _counts(sp, lam, mu, reps, seed):
    return np.array([prune_losses(simulate_full_locus_tree(sp, BDParams(lam, mu), Stream(seed, i)))
                     .copies_per_species()["A"] for i in range(reps)])


def test_mean_copy_number():
    # E[copies after time d] = exp((lam - mu) d)
    sp = SpeciesTree.from_newick("(A:1,B:1);")
    x = _counts(sp, 0.3, 0.1, 20000, 5)
    se = x.std(ddof=1) / math.sqrt(x.size)
    assert abs(x.mean() - math.exp(0.2)) < 4 * se


def test_extinction_probability():
    # p0(t) solves p0' = mu - (lam + mu) p0 + lam p0^2; closed form checked elsewhere
    sp = SpeciesTree.from_newick("(A:2,B:2);")
    x = _counts(sp, 0.2, 0.1, 20000, 6)
    p = np.mean(x == 0)
    se = math.sqrt(p * (1 - p) / x.size)
    assert abs(p - 0.153453) < 4 * se
