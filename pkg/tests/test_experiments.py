import json
import math
import os

import numpy as np
import pytest

from dlcoal_astral.experiments import (FAIL, INSUFFICIENT, NOT_APPLICABLE, ExperimentConfig, QuartetTraces, balanced_tree, caterpillar_tree,
                                       coalescence_report, copy_counts, gap_report, quartet_shape, read_config,
                                       reconstruction_report, replay, run_experiment, simulate_quartet_traces,
                                       survival_report)
from dlcoal_astral.trees import SpeciesTree


def _cfg(**kw):
    base = dict(experiment="gap", species=balanced_tree(0.3), lam=0.3, mu=0.1, seed=11, replicates=4000,
                chunk_size=1000)
    return ExperimentConfig(**{**base, **kw})


def test_tree_builders():
    b = SpeciesTree.from_newick(balanced_tree(0.2))
    c = SpeciesTree.from_newick(caterpillar_tree(0.2))
    assert b.min_branch_length == pytest.approx(0.2)
    assert c.min_branch_length == pytest.approx(0.2)
    assert c.time(c.node_id("D")) == 0.0 and c.depth == pytest.approx(1.4)


def test_quartet_shape():
    shape, q, R = quartet_shape(SpeciesTree.from_newick(balanced_tree(0.3)))
    assert (shape, q, R) == ("balanced", ("A", "B", "C", "D"), 0)
    sp = SpeciesTree.from_newick(caterpillar_tree(0.3))
    shape, q, R = quartet_shape(sp)
    assert shape == "caterpillar" and q == ("A", "B", "C", "D") and R == sp.mrca_of("ABC")
    with pytest.raises(ValueError, match="cherry"):
        quartet_shape(sp, ("A", "C", "B", "D"))


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        _cfg(experiment="nope")
    with pytest.raises(ValueError):
        _cfg(k_grid=(100, 50))
    with pytest.raises(ValueError):
        ExperimentConfig.from_mapping({"experiment": "gap", "species": "x", "lambda": "0.1", "mu": "0.1"})
    ini = tmp_path / "c.ini"
    ini.write_text("[experiment]\nexperiment = survival\nspecies = ((A:1,B:1):1,(C:1,D:1):1);\n"
                   "lambda = 0.2\nmu = 0.1\nseed = 5\nk_grid = 10, 20\n")
    cfg = read_config(str(ini), {"seed": 9})
    assert (cfg.experiment, cfg.lam, cfg.seed, cfg.k_grid) == ("survival", 0.2, 9, (10, 20))


def test_traces_deterministic_across_threads():
    a = simulate_quartet_traces(_cfg(), threads=1)
    b = simulate_quartet_traces(_cfg(chunk_size=700), threads=2)
    for name in ("counts", "I", "lineage", "event", "topology", "nc", "c_ab"):
        assert np.array_equal(getattr(a, name), getattr(b, name))


def test_run_and_replay(tmp_path):
    first = run_experiment(_cfg(), threads=1, out=str(tmp_path / "a"))
    manifest = json.loads(open(first.manifest).read())
    assert manifest["seed"] == 11 and manifest["config"]["lam"] == 0.3
    again = replay(first.manifest, threads=2, out=str(tmp_path / "b"))
    for name, path in first.outputs.items():
        assert open(path, "rb").read() == open(again.outputs[name], "rb").read()
    assert set(manifest["outputs"]) == {os.path.basename(p) for p in first.outputs.values()}


def test_insufficient_bins_are_not_tested():
    traces = simulate_quartet_traces(_cfg(species=caterpillar_tree(0.3), lam=0.8, replicates=3000))
    rep = gap_report(traces, min_support=1000)
    small = [b for b in rep.bins if b.n < 1000]
    assert small and all(b.gap_check == INSUFFICIENT for b in small)
    assert all(r[-1] == INSUFFICIENT for r in rep.identities.rows if r[2] < 1000)
    coal = coalescence_report(simulate_quartet_traces(_cfg(replicates=1500)), min_support=10**9)
    assert all(r[-1] == INSUFFICIENT for r in coal.rows.rows)
    assert coal.passed


def _synthetic(topology, lineage, I, shape="balanced"):
    n = len(topology)
    ev = np.zeros(n, np.int8)
    return QuartetTraces(shape, tuple("ABCD"), 0, 0.3, np.ones((n, 4), np.int32), np.asarray(I, np.int32),
                         np.asarray(lineage, np.int16), ev, np.asarray(topology, np.int8),
                         np.zeros(n, bool), np.zeros(n, bool))


def test_gap_report_detects_violation():
    # the gap is negative although A and B always share a lineage
    n = 4000
    topo = np.r_[np.zeros(n // 4), np.ones(3 * n // 4)]
    lin = np.zeros((n, 4))
    rep = gap_report(_synthetic(topo, lin, np.ones(n)), min_support=100)
    assert not rep.positive
    assert not rep.passed
    assert rep.bins[0].gap_check == FAIL


def test_gap_report_positive_when_clean():
    n = 4000
    topo = np.r_[np.zeros(n // 2), np.ones(n // 4), 2 * np.ones(n // 4)]
    rep = gap_report(_synthetic(topo, np.zeros((n, 4)), np.ones(n)), min_support=100)
    assert rep.positive and rep.passed
    assert rep.p == pytest.approx((0.5, 0.25, 0.25))
    assert rep.gap == pytest.approx(0.25)


def test_reconstruction_report():
    trials = 400
    success = np.zeros((trials, 2, 3), bool)
    success[:, :, 1:] = True
    rep = reconstruction_report(success, (10, 20, 40), eps=0.05)
    assert rep.monotone == {"one": True, "multi": True}
    assert rep.k_success == {"one": 20, "multi": 20}
    assert rep.passed()
    success[:, 0, 2] = False
    rep = reconstruction_report(success, (10, 20, 40))
    assert not rep.monotone["one"] and rep.monotone["multi"]
    assert not rep.passed()


def test_survival_counts_and_report():
    sp = SpeciesTree.from_newick("((A:1,B:1):0.5,(C:1,D:1):0.5);")
    counts = copy_counts(sp, 0.3, 0.1, 20000, seed=3)
    assert np.all(counts[:, 0] == 1)
    a = sp.node_id("A")
    m = counts[:, a].mean()
    se = counts[:, a].std(ddof=1) / math.sqrt(len(counts))
    assert abs(m - math.exp(0.2 * 1.5)) < 4 * se
    rep = survival_report(sp, counts, 0.3, 0.1)
    assert rep.passed
    assert rep.sigma_lb < rep.sigma_hat
    assert rep.alpha_hat <= rep.alpha_ub + 4 * rep.alpha_se


def test_survival_critical_rates_not_applicable():
    sp = SpeciesTree.from_newick("((A:1,B:1):0.5,(C:1,D:1):0.5);")
    rep = survival_report(sp, copy_counts(sp, 0.2, 0.2, 500, seed=1), 0.2, 0.2)
    assert rep.sigma_check == rep.alpha_check == NOT_APPLICABLE
