import math

import numpy as np
import pytest
from scipy import stats

from dlcoal_astral._rng import Stream, tag_key
from dlcoal_astral.coalescent_sim import (CoalescentConfig, DLCoalSimulator, Event, RejectionCapError,
                                          check_bounded, classify, extract_trace, pick_copies, simulate_dlcoal,
                                          simulate_gene_tree)
from dlcoal_astral.experiments import ExperimentConfig, balanced_tree, caterpillar_tree, simulate_quartet_traces
from dlcoal_astral.gdl_sim import BDParams, LocusTree, prune_losses, simulate_full_locus_tree
from dlcoal_astral.trees import GeneTree, SpeciesTree, restrict_to_quartet


def _hard_locus(window=0.01):
    """Duplication ``window`` above the AB speciation; the daughter pair must coalesce inside it."""
    sp = SpeciesTree.from_newick("((A:1,B:1):1,C:2);")
    ab, a, b, c = sp.mrca_of("AB"), sp.node_id("A"), sp.node_id("B"), sp.node_id("C")

    def ann(ev, s, d=0):
        return f"[&event={ev},species={s},daughter={d}]"

    def side(d):
        return f"(A_{d}{ann('leaf', a)}:1,B_{d}{ann('leaf', b)}:1){ann('spec', ab, d)}:{window}"

    text = f"(({side(0)},{side(1)}){ann('dup', ab)}:{1 - window},C_0{ann('leaf', c)}:2){ann('spec', 0)};"
    return LocusTree.from_newick(text, sp)


def _daughter_times(cfg, reps, seed):
    locus = _hard_locus()
    out = []
    for i in range(reps):
        g, m = simulate_gene_tree(locus, cfg, Stream(seed, i))
        assert check_bounded(locus, g, m) == []
        out.append(g.time(g.mrca([g.leaf_id("A_1"), g.leaf_id("B_1")])) - 1.0)
    return np.array(out)


def test_direct_matches_rejection():
    direct = _daughter_times(CoalescentConfig(direct_after=0), 2000, 1)
    reject = _daughter_times(CoalescentConfig(direct_after=None), 2000, 2)
    assert direct.max() < 0.01 and reject.max() < 0.01
    assert stats.ks_2samp(direct, reject).pvalue > 1e-3
    # two lineages conditioned to meet within the window: truncated Exp(1)
    cdf = lambda t: np.expm1(-t) / math.expm1(-0.01)  # noqa: E731
    assert stats.kstest(direct, cdf).pvalue > 1e-3


def test_rejection_cap_error():
    with pytest.raises(RejectionCapError) as err:
        simulate_gene_tree(_hard_locus(1e-6), CoalescentConfig(max_attempts=5, direct_after=None), 0)
    assert err.value.attempts == 5
    assert err.value.species == "AB" or "A" in err.value.species


def test_empty_locus_rejected(balanced):
    full = simulate_full_locus_tree(balanced, BDParams(0, 5.0), 0)
    obs = prune_losses(full)
    if obs.is_empty:
        with pytest.raises(ValueError):
            simulate_gene_tree(obs)


def test_bounded_invariant(five):
    bd = BDParams(0.6, 0.2)
    n = 0
    for i in range(300):
        rep = simulate_dlcoal(five, bd, rng=Stream(9, i))
        if rep.gene is None:
            continue
        n += 1
        assert check_bounded(rep.observed, rep.gene, rep.lineage_map) == []
        assert rep.gene.n_leaves == sum(rep.observed.copies_per_species().values())
    assert n > 200


def test_single_copy_msc_oracle():
    # one copy per species: P(AB|CD) = 1 - (2/3) exp(-2 f) on the balanced tree
    sp = SpeciesTree.from_newick(balanced_tree(0.5))
    hits = 0
    reps = 4000
    for i in range(reps):
        g, _ = simulate_gene_tree(prune_losses(simulate_full_locus_tree(sp, BDParams(0, 0), 0)), rng=Stream(4, i))
        hits += restrict_to_quartet(g, ["A_0", "B_0", "C_0", "D_0"]) == 0
    p = 1 - 2 / 3 * math.exp(-1.0)
    assert abs(hits / reps - p) < 4 * math.sqrt(p * (1 - p) / reps)


@pytest.mark.parametrize("lineages, event", [
    ((0, 1, 2, 3), Event.E), ((0, 0, 0, 0), Event.K), ((0, 0, 1, 2), Event.F_ab), ((0, 1, 1, 2), Event.F_bc),
    ((0, 0, 1, 1), Event.G_ab), ((0, 1, 0, 1), Event.G_ac), ((0, 1, 1, 0), Event.G_ad),
    ((0, 0, 0, 1), Event.H_abc), ((1, 0, 0, 0), Event.H_bcd), ((0, 1, 2), Event.E), ((0, 0, 1), Event.G_ab),
    ((0, 1, 0), Event.G_ac), ((1, 0, 0), Event.G_bc), ((2, 2, 2), Event.K),
])
def test_classify(lineages, event):
    assert classify(lineages) == event


@pytest.mark.parametrize("newick", [balanced_tree(0.3), caterpillar_tree(0.3)])
def test_kernel_traces_match_python(newick):
    cfg = ExperimentConfig(experiment="gap", species=newick, lam=0.4, mu=0.2, seed=7, replicates=200)
    tr = simulate_quartet_traces(cfg)
    sp = cfg.species_tree()
    key = tag_key(7, "gap")
    used = 0
    for i in range(200):
        s = Stream(key, i)
        rep = simulate_dlcoal(sp, BDParams(0.4, 0.2), CoalescentConfig(), s, require=tr.quartet)
        cnt = rep.observed.copies_per_species()
        assert tuple(cnt[x] for x in tr.quartet) == tuple(tr.counts[i])
        if rep.gene is None:
            assert tr.topology[i] == -1
            continue
        used += 1
        copies = pick_copies(rep.gene, tr.quartet, s)
        chosen = copies[:3] if tr.shape == "caterpillar" else copies
        t = extract_trace(rep.observed, rep.gene, rep.lineage_map, tr.R, chosen)
        assert t.I == tr.I[i]
        assert int(t.event) == tr.event[i]
        assert int(restrict_to_quartet(rep.gene, copies)) == tr.topology[i]
        assert (t.nc, t.c_ab) == (bool(tr.nc[i]), bool(tr.c_ab[i]))
    assert used > 50


def test_pick_copies_uniform():
    g = GeneTree.from_newick("((a_0,a_1),(a_2,b_0));")
    picks = [pick_copies(g, ["a", "b"], Stream(1, i))[0] for i in range(3000)]
    counts = np.array([picks.count(f"a_{k}") for k in range(3)])
    assert stats.chisquare(counts).pvalue > 1e-3
    with pytest.raises(ValueError):
        pick_copies(g, ["c"], Stream(1, 0))


def test_simulator_estimator_is_deterministic(balanced):
    sim = DLCoalSimulator(balanced, lam=0.5, mu=0.2, random_state=3)
    a = [None if g is None else g.to_newick() for g in sim.simulate(30)]
    b = [None if g is None else g.to_newick() for g in DLCoalSimulator(balanced, 0.5, 0.2, random_state=3).simulate(30)]
    assert a == b
    tail = [None if g is None else g.to_newick() for g in sim.simulate(10, start=20)]
    assert tail == a[20:]
    assert sim.get_params()["lam"] == 0.5
