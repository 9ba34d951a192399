"""Seeded Monte Carlo campaigns with CSV reports.

Four campaigns are available:

* ``gap``: quartet topology frequencies of one uniformly chosen copy per
  species on a 4-taxon tree, with per-I checks of the conditional gap, the
  copy-sharing probabilities and the root-configuration identities.
* ``coalescence``: per-I chance that the chosen A and B copies coalesce below
  the quartet's reference vertex.
* ``survival``: chance of a copy in each species of every quartet and the
  expected number of copies at every vertex, against the closed-form bounds.
* ``reconstruction``: success rate of exact ASTRAL-one and ASTRAL-multi as the
  number of gene families grows.

Replicate ``r`` of a campaign always uses stream ``r`` of the key derived from
the master seed and the campaign tag. Replicates are processed in fixed-size
chunks that may run in worker processes; chunk results are concatenated in
index order, so every output is independent of the worker count.

Verdicts are one-sided tests at the configured confidence level: a check
fails only when the estimate is significantly on the wrong side of its bound.
Bins with fewer rows than ``min_support`` are reported as insufficient data.
"""

from __future__ import annotations

import configparser
import csv
import hashlib
import json
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from statistics import NormalDist
from typing import Sequence

import numpy as np

from . import __version__
from . import _kernels as K
from ._rng import Stream, tag_key
from .coalescent_sim import (DEFAULT_DIRECT_AFTER, DEFAULT_MAX_ATTEMPTS, CoalescentConfig, RejectionCapError,
                             simulate_dlcoal)
from .gdl_sim import BDParams
from .theory_bounds import BoundInputs, alpha_upper_bound, gamma, sample_size_bound, sigma_lower_bound
from .trees import SpeciesTree, Topology, candidate_quartet_matrix, enumerate_unrooted_topologies, quartet_index

KINDS = ("gap", "coalescence", "survival", "reconstruction")
PASS, FAIL, INSUFFICIENT, NOT_APPLICABLE = "pass", "fail", "insufficient data", "n/a"

# event codes of the kernels
EV_E, EV_GAB, EV_GAC, EV_GAD, EV_K, EV_GBC = 0, 7, 8, 9, 14, 15
EVENT_NAMES = {0: "E", 1: "F_ab", 2: "F_ac", 3: "F_ad", 4: "F_bc", 5: "F_bd", 6: "F_cd", 7: "G_ab", 8: "G_ac",
               9: "G_ad", 10: "H_abc", 11: "H_abd", 12: "H_acd", 13: "H_bcd", 14: "K", 15: "G_bc"}


# --------------------------------------------------------------------------
# Configuration


def balanced_tree(f: float, leaf: float = 1.0) -> str:
    """Balanced 4-taxon tree whose two internal edges have length ``f``."""
    return f"((A:{leaf!r},B:{leaf!r}):{f!r},(C:{leaf!r},D:{leaf!r}):{f!r});"


def caterpillar_tree(f: float, leaf: float = 1.0) -> str:
    """Ultrametric caterpillar (((A,B),C),D) whose two internal edges have length ``f``."""
    return f"(((A:{leaf!r},B:{leaf!r}):{f!r},C:{leaf + f!r}):{f!r},D:{leaf + 2 * f!r});"


@dataclass(frozen=True)
class ExperimentConfig:
    """Settings of one campaign.

    Attributes
    ----------
    experiment : str
        One of ``gap``, ``coalescence``, ``survival``, ``reconstruction``.
    species : str
        Species tree as Newick text, or a path to a file holding it.
    lam, mu : float
        Duplication and loss rates.
    replicates : int
        Replicates for the gap, coalescence and survival campaigns.
    k_grid : tuple of int
        Numbers of gene families for the reconstruction campaign.
    trials : int
        Independent trials per point of ``k_grid``.
    seed : int
        Master seed (64-bit).
    out : str or None
        Output directory.
    quartet : tuple of str or None
        Species (A, B, C, D) for the 4-taxon campaigns, A and B forming a
        cherry; derived from the tree when omitted.
    confidence : float
    min_support : int
        Minimum rows for a per-I bin to be tested.
    eps : float
        Target failure probability of the reconstruction campaign.
    chunk_size : int
        Replicates (or trials) per work unit.
    max_attempts, direct_after : int
        Bounded coalescent sampler settings (``direct_after`` < 0: never).
    """

    experiment: str
    species: str
    lam: float
    mu: float
    seed: int
    replicates: int = 100_000
    k_grid: tuple = (50, 100, 200, 400, 800)
    trials: int = 1000
    out: str | None = None
    quartet: tuple | None = None
    confidence: float = 0.95
    min_support: int = 1000
    eps: float = 0.05
    chunk_size: int = 50_000
    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    direct_after: int = DEFAULT_DIRECT_AFTER

    def __post_init__(self):
        if self.experiment not in KINDS:
            raise ValueError(f"unknown experiment {self.experiment!r}; choose from {', '.join(KINDS)}")
        if self.seed is None:
            raise ValueError("a master seed is required")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if int(self.replicates) < 1:
            raise ValueError("replicate count must be at least 1")
        if int(self.trials) < 1:
            raise ValueError("trial count must be at least 1")
        grid = tuple(int(k) for k in self.k_grid)
        if not grid or grid[0] < 1 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise ValueError(f"k grid must be strictly increasing positive integers, got {grid}")
        object.__setattr__(self, "k_grid", grid)
        if self.quartet is not None:
            object.__setattr__(self, "quartet", tuple(self.quartet))
        if not 0.5 < self.confidence < 1:
            raise ValueError(f"confidence must lie in (0.5, 1), got {self.confidence}")
        if int(self.chunk_size) < 1:
            raise ValueError("chunk size must be at least 1")
        BDParams(self.lam, self.mu)

    def species_tree(self) -> SpeciesTree:
        text = self.species.strip()
        if not text.endswith(";") and os.path.exists(text):
            with open(text, encoding="utf-8") as fh:
                text = fh.read().strip()
        return SpeciesTree.from_newick(text)

    @property
    def coalescent(self) -> CoalescentConfig:
        return CoalescentConfig(int(self.max_attempts), None if self.direct_after < 0 else int(self.direct_after))

    def as_dict(self) -> dict:
        d = asdict(self)
        d["k_grid"] = list(self.k_grid)
        d["quartet"] = None if self.quartet is None else list(self.quartet)
        return d

    @classmethod
    def from_mapping(cls, values: dict) -> "ExperimentConfig":
        """Build from string or typed values (INI section, JSON manifest, flags)."""
        known = {f.name: f for f in fields(cls)}
        kw = {}
        for name, raw in values.items():
            key = name.replace("-", "_")
            if key == "lambda":
                key = "lam"
            if key not in known:
                raise ValueError(f"unknown config key {name!r}")
            if raw is None or raw == "":
                continue
            kw[key] = _coerce(key, raw)
        missing = [k for k in ("experiment", "species", "lam", "mu", "seed") if k not in kw]
        if missing:
            raise ValueError(f"missing config keys: {', '.join(missing)}")
        return cls(**kw)


def _coerce(key, raw):
    if key in ("k_grid", "quartet"):
        if isinstance(raw, str):
            items = [x for x in raw.replace(";", ",").replace(" ", ",").split(",") if x]
        else:
            items = list(raw)
        return tuple(int(x) for x in items) if key == "k_grid" else tuple(str(x) for x in items)
    if key in ("lam", "mu", "confidence", "eps"):
        return float(raw)
    if key in ("seed", "replicates", "trials", "min_support", "chunk_size", "max_attempts", "direct_after"):
        return int(raw)
    return str(raw)


def read_config(path: str, overrides: dict | None = None) -> ExperimentConfig:
    """Load an INI file (section ``[experiment]``) or a run manifest (JSON).

    Non-empty ``overrides`` take precedence over the file.
    """
    if path.endswith(".json"):
        with open(path, encoding="utf-8") as fh:
            values = dict(json.load(fh)["config"])
    else:
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise FileNotFoundError(path)
        if "experiment" not in parser:
            raise ValueError(f"{path}: missing [experiment] section")
        values = dict(parser["experiment"])
    for k, v in (overrides or {}).items():
        if v is not None:
            values[k] = v
    return ExperimentConfig.from_mapping(values)


# --------------------------------------------------------------------------
# Statistics helpers


def _z(confidence: float, sided: int = 1) -> float:
    if sided == 1:
        return NormalDist().inv_cdf(confidence)
    return NormalDist().inv_cdf(0.5 + confidence / 2)


def _mean_se(x: np.ndarray) -> tuple[float, float]:
    n = x.shape[0]
    if n == 0:
        return math.nan, math.nan
    m = float(np.mean(x))
    if n < 2:
        return m, math.nan
    return m, float(np.std(x, ddof=1) / math.sqrt(n))


def _at_least(est: float, se: float, bound: float, z: float) -> str:
    """One-sided check of ``est >= bound``: fails only on significant violation."""
    if math.isnan(est):
        return INSUFFICIENT
    return PASS if est + z * (0.0 if math.isnan(se) else se) >= bound - 1e-12 else FAIL


def _at_most(est: float, se: float, bound: float, z: float) -> str:
    if math.isnan(est):
        return INSUFFICIENT
    return PASS if est - z * (0.0 if math.isnan(se) else se) <= bound + 1e-12 else FAIL


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return "" if x is None else str(x)


@dataclass(frozen=True)
class Table:
    """Column names and rows of one CSV output."""

    columns: tuple
    rows: tuple

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.columns)
            for row in self.rows:
                w.writerow([_fmt(x) for x in row])

    def records(self) -> list:
        return [dict(zip(self.columns, r)) for r in self.rows]


# --------------------------------------------------------------------------
# Chunked execution


def _chunks(total: int, size: int):
    return [(s, min(size, total - s)) for s in range(0, total, size)]


def _map(fn, tasks: list, threads: int) -> list:
    """``[fn(t) for t in tasks]``, optionally over worker processes, in task order."""
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=min(threads, len(tasks))) as pool:
        return list(pool.map(fn, tasks))


def _raise_status(status, idx, bad, species_tree, lam, mu, cfg, key):
    """Turn a kernel failure into the matching Python exception."""
    if status == K.CAPACITY:
        raise MemoryError(f"replicate {idx}: locus tree exceeded {K.MAX_LOCUS_NODES} nodes")
    if status == K.REJECTION_CAP:
        # replaying the replicate through the Python route names the edge
        simulate_dlcoal(species_tree, BDParams(lam, mu), cfg, Stream(key, idx))
        raise RejectionCapError(int(bad), "?", math.nan, cfg.max_attempts)
    raise RuntimeError(f"replicate {idx}: kernel status {status}")


# --------------------------------------------------------------------------
# 4-taxon designation


def quartet_shape(species_tree: SpeciesTree, quartet: Sequence[str] | None = None):
    """Shape of a 4-taxon tree, its (A, B, C, D) designation and reference vertex R.

    Balanced trees ((A,B),(C,D)) use the root as R. Caterpillars
    (((A,B),C),D) use the MRCA of A, B and C.
    """
    sp = species_tree
    if sp.n_species != 4:
        raise ValueError(f"need a 4-taxon species tree, got {sp.n_species} species")
    r0, r1 = sp.children[0]
    if not sp.is_leaf(r0) and not sp.is_leaf(r1):
        shape = "balanced"
        sides = sorted((sp.descendant_species(r0), sp.descendant_species(r1)))
        default = (*sides[0], *sides[1])
    else:
        shape = "caterpillar"
        inner = r1 if sp.is_leaf(r0) else r0
        d = sp.names[r0 if sp.is_leaf(r0) else r1]
        i0, i1 = sp.children[inner]
        cherry = i1 if sp.is_leaf(i0) else i0
        c = sp.names[i0 if sp.is_leaf(i0) else i1]
        default = (*sp.descendant_species(cherry), c, d)
    q = default if quartet is None else tuple(quartet)
    if len(q) != 4 or set(q) != set(default):
        raise ValueError(f"quartet {q} does not name the four species {sorted(default)}")
    if frozenset(q[:2]) != frozenset(default[:2]) and not (
            shape == "balanced" and frozenset(q[:2]) == frozenset(default[2:])):
        raise ValueError(f"A and B must form a cherry of the species tree, got {q[:2]}")
    if shape == "caterpillar" and q[2:] != default[2:]:
        raise ValueError(f"caterpillar designation must be (A, B, {default[2]}, {default[3]})")
    R = 0 if shape == "balanced" else sp.mrca_of(q[:3])
    return shape, q, R


# --------------------------------------------------------------------------
# Quartet traces (gap and coalescence campaigns)


@dataclass(frozen=True)
class QuartetTraces:
    """Per-replicate latent quantities of a 4-taxon campaign.

    Rows with ``topology == -1`` lack a copy of some species.
    """

    shape: str
    quartet: tuple
    R: int
    f: float
    counts: np.ndarray
    I: np.ndarray  # noqa: E741
    lineage: np.ndarray
    event: np.ndarray
    topology: np.ndarray
    nc: np.ndarray
    c_ab: np.ndarray

    @property
    def usable(self) -> np.ndarray:
        return self.topology >= 0


def _gap_worker(task):
    key, start, count, newick, lam, mu, quartet, R, caterpillar, max_attempts, direct = task
    sp = SpeciesTree.from_newick(newick)
    parent, c0, c1, t = sp.arrays()
    q = np.array([sp.node_id(s) for s in quartet], dtype=np.int64)
    out_counts = np.zeros((count, 4), np.int64)
    out_I = np.zeros(count, np.int64)
    out_ix = np.zeros((count, 4), np.int64)
    out_event = np.zeros(count, np.int64)
    out_topo = np.zeros(count, np.int64)
    out_nc = np.zeros(count, np.bool_)
    out_cab = np.zeros(count, np.bool_)
    status, idx, bad = K.run_gap_chunk(np.uint64(key), start, count, parent, c0, c1, t, lam, mu, q, R, caterpillar,
                                       max_attempts, direct, out_counts, out_I, out_ix, out_event, out_topo, out_nc,
                                       out_cab)
    if status != K.OK:
        cfg = CoalescentConfig(max_attempts, None if direct < 0 else direct)
        _raise_status(status, idx, bad, sp, lam, mu, cfg, key)
    return (out_counts.astype(np.int32), out_I.astype(np.int32), out_ix.astype(np.int16),
            out_event.astype(np.int8), out_topo.astype(np.int8), out_nc, out_cab)


def simulate_quartet_traces(config: ExperimentConfig, threads: int = 1, tag: str = "gap") -> QuartetTraces:
    """Run the fused 4-taxon replicates of ``config``."""
    sp = config.species_tree()
    shape, q, R = quartet_shape(sp, config.quartet)
    key = tag_key(int(config.seed), tag)
    cfg = config.coalescent
    tasks = [(key, s, c, sp.to_newick(), float(config.lam), float(config.mu), q, R, shape == "caterpillar",
              cfg.max_attempts, cfg.direct_code) for s, c in _chunks(int(config.replicates), int(config.chunk_size))]
    parts = _map(_gap_worker, tasks, threads)
    cols = [np.concatenate([p[i] for p in parts]) for i in range(7)]
    return QuartetTraces(shape, q, R, sp.min_branch_length, *cols)


@dataclass(frozen=True)
class GapBin:
    """Checks for the replicates with I = i (and a copy in every species)."""

    i: int
    n: int
    x: float
    x_se: float
    x_check: str
    y: float
    y_se: float
    y_check: str
    gap: float
    gap_se: float
    gap_bound: float
    gap_check: str


@dataclass(frozen=True)
class GapReport:
    """Quartet frequencies and per-I checks of a 4-taxon campaign.

    Probabilities are over replicates with a copy in every species.
    """

    shape: str
    quartet: tuple
    n_total: int
    n_usable: int
    p: tuple
    p_se: tuple
    d12: float
    d12_se: float
    d13: float
    d13_se: float
    gap: float
    gap_ci: tuple
    confidence: float
    bins: tuple
    identities: Table
    events: Table

    @property
    def positive(self) -> bool:
        """Two-sided CIs of both P[Q1]-P[Q2] and P[Q1]-P[Q3] lie above 0."""
        return self.gap_ci[0] > 0

    @property
    def passed(self) -> bool:
        checks = [b.x_check for b in self.bins] + [b.y_check for b in self.bins] + [b.gap_check for b in self.bins]
        checks += [r[-1] for r in self.identities.rows]
        return FAIL not in checks

    def tables(self) -> dict:
        z2 = _z(self.confidence, 2)
        summary = [("n_total", self.n_total, "", "", ""), ("n_usable", self.n_usable, "", "", "")]
        for name, est, se in (("P_Q1", self.p[0], self.p_se[0]), ("P_Q2", self.p[1], self.p_se[1]),
                              ("P_Q3", self.p[2], self.p_se[2]), ("P_Q1_minus_P_Q2", self.d12, self.d12_se),
                              ("P_Q1_minus_P_Q3", self.d13, self.d13_se)):
            summary.append((name, est, se, est - z2 * se, est + z2 * se))
        summary.append(("gap", self.gap, "", self.gap_ci[0], self.gap_ci[1]))
        bins = Table(tuple(f.name for f in fields(GapBin)), tuple(tuple(getattr(b, f.name) for f in fields(GapBin))
                                                                  for b in self.bins))
        return {
            "gap_summary": Table(("quantity", "estimate", "se", "ci_low", "ci_high"), tuple(summary)),
            "gap_bins": bins,
            "gap_identities": self.identities,
            "gap_events": self.events,
        }


def _bins(traces: QuartetTraces):
    u = traces.usable
    I = traces.I[u]
    vals = np.unique(I)
    return u, I, [int(v) for v in vals]


def gap_report(traces: QuartetTraces, confidence: float = 0.95, min_support: int = 1000) -> GapReport:
    """Frequencies, the unconditional gap and the per-I checks."""
    z1 = _z(confidence)
    z2 = _z(confidence, 2)
    u, I, values = _bins(traces)
    topo = traces.topology[u]
    n = int(u.sum())
    q = [(topo == k).astype(float) for k in range(3)]
    p, p_se = [], []
    for k in range(3):
        m, s = _mean_se(q[k])
        p.append(m)
        p_se.append(s)
    d12, d12_se = _mean_se(q[0] - q[1])
    d13, d13_se = _mean_se(q[0] - q[2])
    gap = p[0] - max(p[1], p[2])
    gap_ci = (min(d12 - z2 * d12_se, d13 - z2 * d13_se), max(d12 + z2 * d12_se, d13 + z2 * d13_se))

    lin = traces.lineage[u]
    ev = traces.event[u]
    caterpillar = traces.shape == "caterpillar"
    bins, ident, events = [], [], []
    for i in values:
        sel = I == i
        ni = int(sel.sum())
        same_ab = (lin[sel, 0] == lin[sel, 1]).astype(float)
        same_cd = (lin[sel, 2] == lin[sel, 3]).astype(float)
        diff = q[0][sel] - q[1][sel]
        x, x_se = _mean_se(same_ab)
        if caterpillar:
            y, y_se = math.nan, math.nan
            c = 1.0 / 3.0
            bound = c * (x - 1.0 / i)
            psi = diff - c * same_ab
        else:
            y, y_se = _mean_se(same_cd)
            c = 1.0 / 12.0
            if x <= y:
                bound, psi = c * (x - 1.0 / i), diff - c * same_ab
            else:
                bound, psi = c * (y - 1.0 / i), diff - c * same_cd
        g, _ = _mean_se(diff)
        _, psi_se = _mean_se(psi)
        if ni < min_support:
            xc = yc = gc = INSUFFICIENT
        else:
            xc = _at_least(x, x_se, 1.0 / i, z1)
            yc = NOT_APPLICABLE if caterpillar else _at_least(y, y_se, 1.0 / i, z1)
            gc = _at_least(g - bound, psi_se, 0.0, z1)
        bins.append(GapBin(i, ni, x, x_se, xc, y, y_se, yc, g, psi_se, bound, gc))
        codes, cnts = np.unique(ev[sel], return_counts=True)
        for code, cnt in zip(codes, cnts):
            events.append((i, EVENT_NAMES[int(code)], int(cnt), cnt / ni))
        if caterpillar and i >= 2:
            for name, code, pred in (("G_ab", EV_GAB, (i - 1) / i * same_ab),
                                     ("G_ac", EV_GAC, (1.0 - same_ab) / i),
                                     ("G_bc", EV_GBC, (1.0 - same_ab) / i)):
                ind = (ev[sel] == code).astype(float)
                obs, _ = _mean_se(ind)
                prd, _ = _mean_se(pred)
                r, r_se = _mean_se(ind - pred)
                if ni < min_support:
                    chk = INSUFFICIENT
                else:
                    chk = PASS if abs(r) <= 3.0 * r_se + 1e-12 else FAIL
                ident.append((i, name, ni, obs, prd, r, r_se, chk))
    identities = Table(("i", "event", "n", "observed", "predicted", "residual", "se", "check"), tuple(ident))
    ev_table = Table(("i", "event", "count", "fraction"), tuple(events))
    return GapReport(traces.shape, traces.quartet, int(traces.topology.shape[0]), n, tuple(p), tuple(p_se),
                     d12, d12_se, d13, d13_se, gap, gap_ci, confidence, tuple(bins), identities, ev_table)


def run_quartet_gap(config: ExperimentConfig, threads: int = 1) -> GapReport:
    """Quartet identifiability campaign on a balanced or caterpillar 4-taxon tree."""
    traces = simulate_quartet_traces(config, threads)
    return gap_report(traces, config.confidence, config.min_support)


@dataclass(frozen=True)
class CoalescenceReport:
    """Per-I chance that the A and B copies coalesce below R, against ``(gamma ^ 1/8) / i``."""

    gamma: float
    rows: Table

    @property
    def passed(self) -> bool:
        return FAIL not in [r[-1] for r in self.rows.rows]

    def tables(self) -> dict:
        return {"coalescence_bins": self.rows}


def coalescence_report(traces: QuartetTraces, confidence: float = 0.95, min_support: int = 1000,
                       f: float | None = None) -> CoalescenceReport:
    z1 = _z(confidence)
    g = gamma(traces.f if f is None else f)
    u, I, values = _bins(traces)
    cab = traces.c_ab[u].astype(float)
    rows = []
    for i in values:
        sel = I == i
        ni = int(sel.sum())
        m, se = _mean_se(cab[sel])
        bound = min(g, 0.125) / i
        chk = INSUFFICIENT if ni < min_support else _at_least(m, se, bound, z1)
        rows.append((i, ni, m, se, bound, chk))
    return CoalescenceReport(g, Table(("i", "n", "p_cab", "se", "bound", "check"), tuple(rows)))


def run_coalescence_below_R(config: ExperimentConfig, threads: int = 1) -> CoalescenceReport:
    """Coalescence of the A and B copies below the reference vertex, per I bin."""
    traces = simulate_quartet_traces(config, threads)
    return coalescence_report(traces, config.confidence, config.min_support)


# --------------------------------------------------------------------------
# Survival and lineage counts


def _survival_worker(task):
    key, start, count, newick, lam, mu = task
    sp = SpeciesTree.from_newick(newick)
    _, c0, c1, t = sp.arrays()
    out = np.zeros((count, sp.n_nodes), np.int64)
    status, idx = K.run_survival_chunk(np.uint64(key), start, count, c0, c1, t, lam, mu, out)
    if status != K.OK:
        raise MemoryError(f"replicate {idx}: locus tree exceeded {K.MAX_LOCUS_NODES} nodes")
    return out


def copy_counts(species_tree: SpeciesTree, lam: float, mu: float, replicates: int, seed: int, threads: int = 1,
                chunk_size: int = 50_000, tag: str = "survival") -> np.ndarray:
    """Copies entering each species vertex (or present at each leaf), one row per replicate."""
    BDParams(lam, mu)
    key = tag_key(int(seed), tag)
    tasks = [(key, s, c, species_tree.to_newick(), float(lam), float(mu)) for s, c in _chunks(replicates, chunk_size)]
    return np.concatenate(_map(_survival_worker, tasks, threads))


def vertex_label(species_tree: SpeciesTree, v: int) -> str:
    names = species_tree.descendant_species(v)
    return names[0] if len(names) == 1 else "(" + ",".join(names) + ")"


@dataclass(frozen=True)
class SurvivalReport:
    """Empirical sigma and alpha against their closed-form bounds.

    ``alpha_hat`` is the largest mean copy count over the speciation
    vertices; leaf means are listed but not part of the verdict.
    """

    sigma: Table
    alpha: Table
    sigma_hat: float
    sigma_se: float
    sigma_lb: float | None
    sigma_check: str
    alpha_hat: float
    alpha_se: float
    alpha_ub: float | None
    alpha_check: str

    @property
    def passed(self) -> bool:
        return FAIL not in (self.sigma_check, self.alpha_check)

    def tables(self) -> dict:
        summary = Table(("quantity", "estimate", "se", "bound", "check"), (
            ("sigma", self.sigma_hat, self.sigma_se, self.sigma_lb, self.sigma_check),
            ("alpha", self.alpha_hat, self.alpha_se, self.alpha_ub, self.alpha_check),
        ))
        return {"survival_summary": summary, "survival_sigma": self.sigma, "survival_alpha": self.alpha}


def survival_report(species_tree: SpeciesTree, counts: np.ndarray, lam: float, mu: float,
                    confidence: float = 0.95) -> SurvivalReport:
    z1 = _z(confidence)
    sp = species_tree
    delta = sp.depth
    critical = lam == mu
    s_lb = None if critical else sigma_lower_bound(lam, mu, delta)
    a_ub = None if critical else alpha_upper_bound(lam, mu, delta)
    leaves = list(sp.leaves)
    order = sorted(range(len(leaves)), key=lambda i: sp.names[leaves[i]])
    leaves = [leaves[i] for i in order]
    present = counts[:, leaves] > 0
    srows = []
    best = None
    for row in quartet_index(len(leaves)):
        ind = present[:, row].all(axis=1).astype(float)
        m, se = _mean_se(ind)
        names = ",".join(sp.names[leaves[j]] for j in row)
        srows.append((names, m, se, s_lb))
        if best is None or m < best[0]:
            best = (m, se)
    arows = []
    top = None
    for v in range(sp.n_nodes):
        m, se = _mean_se(counts[:, v].astype(float))
        internal = not sp.is_leaf(v)
        arows.append((vertex_label(sp, v), int(internal), m, se, a_ub))
        if internal and (top is None or m > top[0]):
            top = (m, se)
    s_chk = NOT_APPLICABLE if critical else _at_least(best[0], best[1], s_lb, z1)
    a_chk = NOT_APPLICABLE if critical else _at_most(top[0], top[1], a_ub, z1)
    return SurvivalReport(Table(("quartet", "sigma_hat", "se", "bound"), tuple(srows)),
                          Table(("vertex", "internal", "mean_copies", "se", "bound"), tuple(arows)),
                          best[0], best[1], s_lb, s_chk, top[0], top[1], a_ub, a_chk)


def run_survival_and_lineages(config: ExperimentConfig, threads: int = 1) -> SurvivalReport:
    """Copy survival and copy counts per vertex against sigma and alpha bounds."""
    sp = config.species_tree()
    counts = copy_counts(sp, config.lam, config.mu, int(config.replicates), int(config.seed), threads,
                         int(config.chunk_size))
    return survival_report(sp, counts, config.lam, config.mu, config.confidence)


# --------------------------------------------------------------------------
# Reconstruction curves


def _candidates(n_taxa, taxa):
    cands = list(enumerate_unrooted_topologies(taxa, cap=max(n_taxa, 4)))
    names = [c.to_newick() for c in cands]
    rank = np.empty(len(cands), np.int64)
    rank[np.argsort(names, kind="stable")] = np.arange(len(cands))
    return cands, rank


def _pick(scores: np.ndarray, rank: np.ndarray) -> int:
    best = scores.max()
    idx = np.flatnonzero(scores == best)
    return int(idx[np.argmin(rank[idx])])


def _reconstruction_worker(task):
    key, t0, t1, newick, lam, mu, grid, max_attempts, direct = task
    sp = SpeciesTree.from_newick(newick)
    _, c0, c1, t = sp.arrays()
    taxa = tuple(sorted(sp.species))
    n = len(taxa)
    leaves = np.array([sp.node_id(s) for s in taxa], dtype=np.int64)
    quartets = quartet_index(n)
    m = candidate_quartet_matrix(n)
    cands, rank = _candidates(n, taxa)
    truth = cands.index(Topology.from_tree(sp))
    k_max = grid[-1]
    cols = np.arange(quartets.shape[0])
    one = np.zeros((k_max, quartets.shape[0], 3), np.int64)
    multi = np.zeros_like(one)
    out = np.zeros((t1 - t0, 2, len(grid)), np.bool_)
    for j, trial in enumerate(range(t0, t1)):
        status, idx, bad = K.run_reconstruction_trial(np.uint64(key), trial, k_max, c0, c1, t, lam, mu, leaves,
                                                      quartets, max_attempts, direct, one, multi)
        if status != K.OK:
            cfg = CoalescentConfig(max_attempts, None if direct < 0 else direct)
            _raise_status(status, trial * k_max + idx, bad, sp, lam, mu, cfg, key)
        for mi, arr in enumerate((one, multi)):
            cum = np.cumsum(arr, axis=0)
            for gi, k in enumerate(grid):
                table = cum[k - 1]
                scores = table[cols[None, :], m].sum(axis=1)
                out[j, mi, gi] = _pick(scores, rank) == truth
    return out


@dataclass(frozen=True)
class ReconstructionReport:
    """Success rates of both exact methods along the k grid.

    ``monotone[method]`` is False when some step of the grid shows a
    significant drop (one-sided paired test over trials).
    """

    k_grid: tuple
    trials: int
    rates: Table
    monotone: dict
    k_success: dict
    k_theory: float | None
    eps: float

    def passed(self, target: float | None = None) -> bool:
        target = 1.0 - self.eps if target is None else target
        tops = {r[0]: r[3] for r in self.rates.rows if r[1] == self.k_grid[-1]}
        return all(self.monotone.values()) and all(v >= target for v in tops.values())

    def tables(self) -> dict:
        rows = tuple((m, int(self.monotone[m]), self.k_success[m], self.k_theory) for m in ("one", "multi"))
        return {
            "reconstruction_rates": self.rates,
            "reconstruction_summary": Table(("method", "monotone", "k_min_success", "k_theory"), rows),
        }


def reconstruction_report(success: np.ndarray, k_grid: Sequence[int], confidence: float = 0.95, eps: float = 0.05,
                          k_theory: float | None = None) -> ReconstructionReport:
    """Summarize a (trials, 2, len(k_grid)) boolean success array."""
    z1 = _z(confidence)
    z2 = _z(confidence, 2)
    trials = success.shape[0]
    rows, monotone, k_success = [], {}, {}
    for mi, method in enumerate(("one", "multi")):
        s = success[:, mi, :].astype(float)
        ok = True
        hit = None
        for gi, k in enumerate(k_grid):
            m, se = _mean_se(s[:, gi])
            se = 0.0 if math.isnan(se) else se
            rows.append((method, k, trials, m, se, max(0.0, m - z2 * se), min(1.0, m + z2 * se)))
            if hit is None and m >= 1.0 - eps:
                hit = k
            if gi > 0:
                d, d_se = _mean_se(s[:, gi] - s[:, gi - 1])
                if _at_least(d, d_se, 0.0, z1) == FAIL:
                    ok = False
        monotone[method] = ok
        k_success[method] = hit
    cols = ("method", "k", "trials", "success", "se", "ci_low", "ci_high")
    return ReconstructionReport(tuple(k_grid), trials, Table(cols, tuple(rows)), monotone, k_success, k_theory, eps)


def simulate_reconstruction(config: ExperimentConfig, threads: int = 1) -> np.ndarray:
    """Boolean success array of shape (trials, 2, len(k_grid)); methods one, multi.

    Trial ``t`` simulates ``max(k_grid)`` families; point ``k`` uses its
    first ``k`` (families without any copy included), so the grid is nested.
    """
    sp = config.species_tree()
    if sp.n_species < 4:
        raise ValueError("reconstruction needs at least 4 species")
    key = tag_key(int(config.seed), "reconstruction")
    cfg = config.coalescent
    per = max(1, int(config.chunk_size) // config.k_grid[-1])
    tasks = [(key, s, s + c, sp.to_newick(), float(config.lam), float(config.mu), config.k_grid, cfg.max_attempts,
              cfg.direct_code) for s, c in _chunks(int(config.trials), per)]
    return np.concatenate(_map(_reconstruction_worker, tasks, threads))


def run_reconstruction_curve(config: ExperimentConfig, threads: int = 1) -> ReconstructionReport:
    """Exact-method success rates along ``k_grid`` with the theoretical requirement alongside."""
    sp = config.species_tree()
    success = simulate_reconstruction(config, threads)
    k_theory = None
    if config.lam != config.mu and sp.n_species >= 4:
        inputs = BoundInputs(sp.min_branch_length, sp.depth, config.lam, config.mu, sp.n_species, config.eps)
        k_theory = sample_size_bound(inputs).k_req
    return reconstruction_report(success, config.k_grid, config.confidence, config.eps, k_theory)


# --------------------------------------------------------------------------
# Orchestration


RUNNERS = {
    "gap": run_quartet_gap,
    "coalescence": run_coalescence_below_R,
    "survival": run_survival_and_lineages,
    "reconstruction": run_reconstruction_curve,
}


def _sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunResult:
    report: object
    outputs: dict = field(default_factory=dict)
    manifest: str | None = None
    wall_time: float = 0.0


def run_experiment(config: ExperimentConfig, threads: int = 1, out: str | None = None) -> RunResult:
    """Run a campaign; with an output directory, write its CSVs and ``manifest.json``."""
    out = out if out is not None else config.out
    start = time.perf_counter()
    report = RUNNERS[config.experiment](config, threads)
    wall = time.perf_counter() - start
    result = RunResult(report, wall_time=wall)
    if out is None:
        return result
    os.makedirs(out, exist_ok=True)
    for name, table in report.tables().items():
        path = os.path.join(out, f"{name}.csv")
        table.write(path)
        result.outputs[name] = path
    manifest = {
        "experiment": config.experiment,
        "config": replace(config, out=out).as_dict(),
        "seed": int(config.seed),
        "code_version": __version__,
        "threads": int(threads),
        "wall_time_s": wall,
        "outputs": {os.path.basename(p): _sha256(p) for p in result.outputs.values()},
    }
    result.manifest = os.path.join(out, "manifest.json")
    with open(result.manifest, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return result


def replay(manifest_path: str, threads: int = 1, out: str | None = None) -> RunResult:
    """Rerun the campaign recorded in a manifest (optionally into another directory)."""
    config = read_config(manifest_path)
    return run_experiment(config, threads, out)
