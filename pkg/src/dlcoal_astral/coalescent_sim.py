"""Bounded multispecies coalescent on locus trees and latent traces.

Lineages start at the extant locus leaves and coalesce pairwise at rate 1
inside the locus tree. Every daughter edge must end with a single lineage at
its top (the duplication time); above the locus root lineages keep
coalescing until one remains.

The conditioning is applied per component: the subtree under a daughter
edge (or under the locus root), with nested daughter subtrees treated as
fixed single lineages. Components are drawn innermost first and each is
redrawn as a whole until it ends with one lineage.
"""

from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator

from . import _kernels as K
from ._rng import Stream, as_stream, tag_key
from .gdl_sim import DUP, LEAF, SPEC, BDParams, LocusTree, prune_losses, resolve_vertex, simulate_full_locus_tree
from .trees import GeneTree, SpeciesTree, split_gene_label

DEFAULT_MAX_ATTEMPTS = 10**6
DEFAULT_DIRECT_AFTER = 100


class RejectionCapError(RuntimeError):
    """A daughter edge failed to coalesce within the allowed number of attempts."""

    def __init__(self, locus_node: int, species: str, dup_time: float, attempts: int):
        self.locus_node = locus_node
        self.species = species
        self.dup_time = dup_time
        self.attempts = attempts
        super().__init__(
            f"daughter edge above locus node {locus_node} (species edge {species!r}, duplication at "
            f"time {dup_time:.6g}) did not coalesce to one lineage in {attempts} attempts"
        )


@dataclass(frozen=True)
class CoalescentConfig:
    """Settings of the bounded coalescent sampler.

    Attributes
    ----------
    max_attempts : int
        Redraws allowed per daughter-edge component before giving up.
    direct_after : int or None
        Failed redraws after which a component is drawn from its exact
        conditional law instead (0: always, None: never, so only rejection
        is used and ``max_attempts`` can be exhausted).
    """

    max_attempts: int = DEFAULT_MAX_ATTEMPTS
    direct_after: int | None = DEFAULT_DIRECT_AFTER

    def __post_init__(self):
        if int(self.max_attempts) < 1:
            raise ValueError("max_attempts must be at least 1")
        if self.direct_after is not None and int(self.direct_after) < 0:
            raise ValueError("direct_after must be nonnegative or None")

    @property
    def direct_code(self) -> int:
        return -1 if self.direct_after is None else int(self.direct_after)


@dataclass(frozen=True)
class LineageMap:
    """Embedding of a gene tree in its locus tree.

    Attributes
    ----------
    leaf_locus : dict
        Gene leaf label -> extant locus leaf id.
    node_edge : tuple
        Gene node id -> locus node whose parent edge holds it (leaves map to
        their locus leaf).
    """

    leaf_locus: dict
    node_edge: tuple


def _species_label(species_tree: SpeciesTree, s: int) -> str:
    names = species_tree.descendant_species(s)
    return names[0] if len(names) == 1 else "(" + ",".join(names) + ")"


def _gene_tree_from_kernel(locus: LocusTree, ng, nl, g_parent, g_c0, g_c1, g_time, g_locus):
    """Reindex kernel output (children before parents) into a preorder GeneTree."""
    root = ng - 1
    order = []
    stack = [root]
    while stack:
        v = stack.pop()
        order.append(v)
        if g_c0[v] >= 0:
            stack.append(int(g_c1[v]))
            stack.append(int(g_c0[v]))
    new = {old: i for i, old in enumerate(order)}
    parent = [new[int(g_parent[v])] if v != root else -1 for v in order]
    children = [(new[int(g_c0[v])], new[int(g_c1[v])]) if g_c0[v] >= 0 else () for v in order]
    labels = locus.leaf_labels()
    species, copies = [], []
    leaf_locus = {}
    for v in order:
        if g_c0[v] < 0:
            lab = labels[int(g_locus[v])]
            sp, cp = split_gene_label(lab)
            species.append(sp)
            copies.append(cp)
            leaf_locus[lab] = int(g_locus[v])
        else:
            species.append("")
            copies.append(None)
    gene = GeneTree(parent, children, species, copies, [float(g_time[v]) for v in order])
    lmap = LineageMap(leaf_locus, tuple(int(g_locus[v]) for v in order))
    return gene, lmap


def simulate_gene_tree(locus: LocusTree, cfg: CoalescentConfig | None = None, rng=None):
    """Draw a gene tree inside ``locus`` under the bounded coalescent.

    Parameters
    ----------
    locus : LocusTree
        Observed (pruned) or full locus tree; lost copies carry no lineages.
    cfg : CoalescentConfig, optional
    rng : None, int, numpy Generator or Stream

    Returns
    -------
    gene : GeneTree
    lineage_map : LineageMap

    Raises
    ------
    ValueError
        If the locus tree has no extant copy.
    RejectionCapError
        If a daughter-edge component keeps failing.
    """
    cfg = cfg or CoalescentConfig()
    stream = as_stream(rng)
    n = locus.n_nodes
    if n == 0:
        raise ValueError("cannot simulate a gene tree on an empty locus tree")
    alive = np.zeros(n, dtype=np.bool_)
    if K.mark_alive(n, locus.child0, locus.child1, locus.event, alive) == 0:
        raise ValueError("cannot simulate a gene tree on a locus tree without extant copies")
    G = K._alloc_gene(n)
    bad = np.full(1, -1, np.int64)
    status, ng, nl = K.simulate_bmsc(stream.state, n, locus.parent, locus.child0, locus.child1, locus.event,
                                     locus.daughter, locus.time, alive, int(cfg.max_attempts), cfg.direct_code,
                                     G[0], G[1], G[2], G[3], G[4], G[5], G[11], G[7], G[8], G[9], G[10], bad)
    if status == K.REJECTION_CAP:
        v = int(bad[0])
        p = int(locus.parent[v])
        raise RejectionCapError(v, _species_label(locus.species_tree, int(locus.species[v])),
                                float(locus.time[p]), int(cfg.max_attempts))
    return _gene_tree_from_kernel(locus, ng, nl, G[0], G[1], G[2], G[3], G[4])


def check_bounded(locus: LocusTree, gene: GeneTree, lineage_map: LineageMap) -> list:
    """Daughter edges whose lineages do not meet strictly below the edge top.

    Returns a list of ``(locus_node, mrca_time, dup_time)`` violations; empty
    when the bounded-coalescent condition holds everywhere.
    """
    leaf_of = {v: lab for lab, v in lineage_map.leaf_locus.items()}
    bad = []
    for c in range(1, locus.n_nodes):
        p = int(locus.parent[c])
        if locus.event[p] != DUP or locus.daughter[c] != 1:
            continue
        below = [gene.leaf_id(leaf_of[u]) for u in locus.subtree(c) if locus.event[u] == LEAF]
        if not below:
            continue
        m = gene.mrca(below)
        if not gene.time(m) < locus.time[p]:
            bad.append((c, gene.time(m), float(locus.time[p])))
    return bad


# --------------------------------------------------------------------------
# Latent traces


class Event(enum.IntEnum):
    """Configuration of the chosen copies' lineages at R.

    Balanced quartets use E, F_xy, G_xy (two pairs), H_xyz and K. Caterpillar
    quartets track a, b, c only and use E, G_ab, G_ac, G_bc (one pair) and K.
    """

    E = 0
    F_ab = 1
    F_ac = 2
    F_ad = 3
    F_bc = 4
    F_bd = 5
    F_cd = 6
    G_ab = 7
    G_ac = 8
    G_ad = 9
    H_abc = 10
    H_abd = 11
    H_acd = 12
    H_bcd = 13
    K = 14
    G_bc = 15


def classify(lineages: Sequence[int]) -> Event:
    """Event of the equality pattern of 3 (caterpillar) or 4 (balanced) lineage ids."""
    letters = "abcd"[: len(lineages)]
    blocks: dict = {}
    for letter, i in zip(letters, lineages):
        blocks.setdefault(i, []).append(letter)
    groups = sorted(("".join(b) for b in blocks.values()), key=lambda g: (-len(g), g))
    if len(lineages) == 3:
        if len(groups) == 3:
            return Event.E
        if len(groups) == 1:
            return Event.K
        return Event[f"G_{groups[0]}"]
    if len(lineages) != 4:
        raise ValueError("need 3 or 4 lineage ids")
    sizes = [len(g) for g in groups]
    if sizes == [1, 1, 1, 1]:
        return Event.E
    if sizes == [4]:
        return Event.K
    if sizes == [3, 1]:
        return Event[f"H_{groups[0]}"]
    if sizes == [2, 2]:
        pair = next(g for g in groups if "a" in g)
        return Event[f"G_{pair}"]
    return Event[f"F_{groups[0]}"]


@dataclass(frozen=True)
class LatentTrace:
    """Hidden state of one replicate at the species vertex R.

    Attributes
    ----------
    R : int
        Species node id.
    I : int
        Locus copies leaving R.
    lineages : tuple
        Index in ``0 .. I-1`` of the copy at R ancestral to each chosen gene
        copy, in a, b, c(, d) order.
    event : Event
    nc : bool
        No two chosen lineages coalesce below R.
    c_ab : bool
        The lineages of a and b coalesce below R.
    """

    R: int
    I: int  # noqa: E741
    lineages: tuple
    event: Event
    nc: bool
    c_ab: bool

    def as_row(self) -> dict:
        row = {"I": self.I}
        for letter, i in zip("abcd", tuple(self.lineages) + (None,) * (4 - len(self.lineages))):
            row[f"i_{letter}"] = "" if i is None else i
        row.update(event=self.event.name, NC=int(self.nc), C_ab=int(self.c_ab))
        return row


def extract_trace(locus: LocusTree, gene: GeneTree, lineage_map: LineageMap, R, copies: Sequence[str]) -> LatentTrace:
    """Trace of the chosen copies at species vertex ``R``.

    ``copies`` lists gene leaf labels for a, b, c and optionally d; with three
    copies the caterpillar taxonomy is used. ``I`` counts copies in the full
    locus tree when ``locus`` remembers it, so copies lost later still count.
    """
    sp = locus.species_tree
    r = resolve_vertex(sp, R)
    if len(copies) not in (3, 4):
        raise ValueError("choose 3 or 4 copies")
    leaves = [gene.leaf_id(c) for c in copies]
    names = [gene.leaf_species(v) for v in leaves]
    if len(set(names)) != len(names):
        raise ValueError("chosen copies must come from distinct species")
    below_r = set(sp.descendant_species(r))
    missing = [n for n in names if n not in below_r]
    if missing:
        raise ValueError(f"vertex {r} is not ancestral to species {missing}")

    ref = locus.full if locus.full is not None else locus
    spec_at_r = [v for v in range(ref.n_nodes) if ref.event[v] == SPEC and ref.species[v] == r]
    rank = {v: i for i, v in enumerate(spec_at_r)}
    lineages = []
    for lab in copies:
        v = lineage_map.leaf_locus[lab]
        while not (locus.event[v] == SPEC and locus.species[v] == r):
            v = int(locus.parent[v])
            if v < 0:
                raise ValueError(f"copy {lab} has no ancestor at vertex {r}")
        if ref is not locus:
            v = int(locus.source[v])
        lineages.append(rank[v])

    t_r = sp.time(r)

    def coal_below(x, y):
        return gene.time(gene.mrca([x, y])) < t_r

    nc = not any(coal_below(x, y) for x, y in itertools.combinations(leaves, 2))
    return LatentTrace(r, len(spec_at_r), tuple(lineages), classify(lineages), nc, coal_below(leaves[0], leaves[1]))


# --------------------------------------------------------------------------
# Whole pipeline


@dataclass(frozen=True)
class Replicate:
    """One DLCoal draw: full and observed locus trees and the gene tree (if any)."""

    full: LocusTree
    observed: LocusTree
    gene: GeneTree | None
    lineage_map: LineageMap | None


def simulate_dlcoal(species_tree: SpeciesTree, bd: BDParams, cfg: CoalescentConfig | None = None, rng=None,
                    require=None) -> Replicate:
    """Locus tree, pruning and gene tree from one stream.

    ``require`` optionally names species that must all keep a copy for the
    gene tree to be drawn; otherwise it is drawn whenever any copy survives.
    This mirrors the fused experiment kernels draw for draw.
    """
    stream = as_stream(rng)
    full = simulate_full_locus_tree(species_tree, bd, stream)
    observed = prune_losses(full)
    if observed.is_empty:
        return Replicate(full, observed, None, None)
    if require is not None:
        counts = observed.copies_per_species()
        if any(counts[s] == 0 for s in require):
            return Replicate(full, observed, None, None)
    gene, lmap = simulate_gene_tree(observed, cfg, stream)
    return Replicate(full, observed, gene, lmap)


def pick_copies(gene: GeneTree, species: Sequence[str], rng) -> list:
    """One uniformly chosen copy label per species, in the given order.

    Copies of a species are ranked by copy index before drawing.
    """
    stream = as_stream(rng)
    by_species = gene.copies_by_species()
    out = []
    for s in species:
        ids = sorted(by_species.get(s, []), key=gene.leaf_copy)
        if not ids:
            raise ValueError(f"gene tree has no copy of species {s!r}")
        out.append(gene.label(ids[stream.integers(len(ids))]))
    return out


class DLCoalSimulator(BaseEstimator):
    """Seeded generator of gene trees under duplication, loss and the bounded coalescent.

    Parameters
    ----------
    species_tree : SpeciesTree or str
        Species tree or its Newick text.
    lam, mu : float
        Duplication and loss rates.
    max_attempts : int
        Rejection cap per daughter-edge component.
    random_state : int or None
        Master seed. Gene family ``i`` always uses the same stream, so the
        first ``k`` trees do not depend on how many are requested.

    Examples
    --------
    >>> sim = DLCoalSimulator("((A:1,B:1):0.5,(C:1,D:1):0.5);", lam=0.0, mu=0.0, random_state=1)
    >>> len(sim.simulate(3))
    3
    """

    def __init__(self, species_tree=None, lam=0.0, mu=0.0, max_attempts=DEFAULT_MAX_ATTEMPTS, random_state=None):
        self.species_tree = species_tree
        self.lam = lam
        self.mu = mu
        self.max_attempts = max_attempts
        self.random_state = random_state

    def _setup(self):
        sp = self.species_tree
        if isinstance(sp, str):
            sp = SpeciesTree.from_newick(sp)
        if not isinstance(sp, SpeciesTree):
            raise TypeError("species_tree must be a SpeciesTree or a Newick string")
        seed = self.random_state
        if seed is None or isinstance(seed, np.random.Generator):
            seed = as_stream(seed).spawn_key()
        return sp, BDParams(self.lam, self.mu), CoalescentConfig(int(self.max_attempts)), tag_key(int(seed), "simulate")

    def replicates(self, count: int, start: int = 0):
        """Yield :class:`Replicate` objects for families ``start .. start+count-1``."""
        sp, bd, cfg, key = self._setup()
        for i in range(start, start + count):
            yield simulate_dlcoal(sp, bd, cfg, Stream(key, i))

    def simulate(self, count: int, start: int = 0) -> list:
        """Gene trees of ``count`` families; ``None`` marks a family with no surviving copy."""
        return [rep.gene for rep in self.replicates(count, start)]
