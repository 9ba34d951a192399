"""Gene duplication and loss inside a species tree.

A locus tree is the history of one gene family's copies: each copy rides a
species edge, duplicates or is lost at exponential times, and bifurcates at
every speciation. Nodes are stored in preorder (child 0 first).

Newick form
-----------
Locus trees are written with one bracketed annotation per node, placed after
the label and before the branch length::

    node      := [subtree] [label] "[&event=" EVENT ",species=" INT ",daughter=" BIT "]" [":" length]
    EVENT     := "spec" | "dup" | "leaf" | "loss"

``species`` is the preorder id of the species node (speciation and leaf
nodes) or of the species edge's lower end (duplications and losses).
``daughter=1`` marks the edge above the node as the daughter edge of its
parent duplication. Extant leaves are labeled ``SPECIES_COPY`` and lost
tips ``lost``. The root carries no length; node times are recovered from
the species tree depth.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from ._rng import as_stream
from .newick import NewickError, fmt_length, read_newick
from .trees import SpeciesTree, gene_label

LEAF, SPEC, DUP, LOSS = K.LEAF, K.SPEC, K.DUP, K.LOSS
EVENT_NAMES = {LEAF: "leaf", SPEC: "spec", DUP: "dup", LOSS: "loss"}
_EVENT_CODES = {v: k for k, v in EVENT_NAMES.items()}


@dataclass(frozen=True)
class BDParams:
    """Duplication rate ``lam`` and loss rate ``mu`` per copy per coalescent unit."""

    lam: float
    mu: float

    def __post_init__(self):
        for name in ("lam", "mu"):
            x = getattr(self, name)
            if not (isinstance(x, (int, float, np.floating, np.integer)) and math.isfinite(x) and x >= 0):
                raise ValueError(f"{name} must be a finite nonnegative number, got {x!r}")
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "mu", float(self.mu))

    @property
    def net_rate(self) -> float:
        return self.lam - self.mu


class LocusTree:
    """Gene-family tree embedded in a species tree.

    Parameters
    ----------
    species_tree : SpeciesTree
    parent, child0, child1, event, species, daughter, time : array-like
        Node table with parents before children; ``child1`` is -1 for
        degree-2 nodes left by pruning and both children are -1 at tips.
    source : array-like, optional
        For pruned trees, the id of each node in the full tree.
    full : LocusTree, optional
        The unpruned tree this one was derived from.
    labels : dict, optional
        Extant leaf id -> gene label; by default copies of a species are
        numbered in node id order.
    """

    def __init__(self, species_tree: SpeciesTree, parent, child0, child1, event, species, daughter,
                 time, source=None, full=None, labels=None):
        self.species_tree = species_tree
        cols = {}
        for name, arr, dt in (("parent", parent, np.int64), ("child0", child0, np.int64),
                              ("child1", child1, np.int64), ("event", event, np.int64),
                              ("species", species, np.int64), ("daughter", daughter, np.int64),
                              ("time", time, np.float64)):
            a = np.array(arr, dtype=dt)
            a.setflags(write=False)
            cols[name] = a
        n = cols["parent"].shape[0]
        if any(c.shape != (n,) for c in cols.values()):
            raise ValueError("locus node columns must have equal length")
        self.parent = cols["parent"]
        self.child0 = cols["child0"]
        self.child1 = cols["child1"]
        self.event = cols["event"]
        self.species = cols["species"]
        self.daughter = cols["daughter"]
        self.time = cols["time"]
        if source is not None:
            source = np.array(source, dtype=np.int64)
            source.setflags(write=False)
        self.source = source
        self.full = full
        self._labels = None if labels is None else dict(labels)

    # -- basic queries -----------------------------------------------------

    @property
    def n_nodes(self) -> int:
        return int(self.parent.shape[0])

    @property
    def is_empty(self) -> bool:
        return self.n_nodes == 0

    def children(self, v: int) -> tuple:
        return tuple(int(c) for c in (self.child0[v], self.child1[v]) if c >= 0)

    def extant_leaves(self) -> list:
        """Extant leaf ids in left-to-right order."""
        return [v for v in range(self.n_nodes) if self.event[v] == LEAF]

    def leaf_labels(self) -> dict:
        """Extant leaf id -> ``SPECIES_COPY`` label."""
        if self._labels is not None:
            return dict(self._labels)
        seen: dict = {}
        out = {}
        names = self.species_tree.names
        for v in self.extant_leaves():
            sp = names[self.species[v]]
            k = seen.get(sp, 0)
            seen[sp] = k + 1
            out[v] = gene_label(sp, k)
        return out

    def copies_per_species(self) -> dict:
        """Species name -> number of extant copies (zero entries included)."""
        out = {name: 0 for name in self.species_tree.species}
        names = self.species_tree.names
        for v in self.extant_leaves():
            out[names[self.species[v]]] += 1
        return out

    def n_duplications(self) -> int:
        return int(np.sum(self.event == DUP))

    def subtree(self, v: int) -> list:
        out = []
        stack = [v]
        while stack:
            u = stack.pop()
            out.append(u)
            stack.extend(reversed(self.children(u)))
        return out

    def arrays(self):
        return (self.parent, self.child0, self.child1, self.event, self.species, self.daughter, self.time)

    # -- checks ------------------------------------------------------------

    def validate(self) -> None:
        """Raise ``AssertionError`` if a structural invariant fails."""
        sp = self.species_tree
        n = self.n_nodes
        if n == 0:
            return
        has_loss = bool(np.any(self.event == LOSS))
        assert self.parent[0] == -1, "root must be node 0"
        assert self.daughter[0] == 0, "root edge cannot be a daughter edge"
        for v in range(n):
            ch = self.children(v)
            ev = self.event[v]
            p = self.parent[v]
            if p >= 0:
                assert v in self.children(p), f"parent/child mismatch at {v}"
                assert self.time[p] > self.time[v], f"time does not decrease below node {p}"
            if ev == LEAF:
                assert not ch, f"leaf {v} has children"
                assert sp.is_leaf(int(self.species[v])), f"leaf {v} not on a species leaf"
                assert self.time[v] == sp.time(int(self.species[v])), f"leaf {v} not at species leaf time"
            elif ev == LOSS:
                assert not ch, f"loss tip {v} has children"
            elif ev == SPEC:
                s = int(self.species[v])
                assert not sp.is_leaf(s), f"speciation {v} on a species leaf"
                assert self.time[v] == sp.time(s), f"speciation {v} off its species time"
                assert 1 <= len(ch) <= 2
                for c in ch:
                    assert self.daughter[c] == 0, f"speciation child {c} flagged as daughter"
                    assert int(self.species[c]) in sp.children[s], f"child {c} on wrong species edge"
                assert len(ch) == 2 or not has_loss, f"speciation {v} lost a child in a full tree"
            elif ev == DUP:
                assert 1 <= len(ch) <= 2
                flags = [int(self.daughter[c]) for c in ch]
                if len(ch) == 2:
                    assert sorted(flags) == [0, 1], f"duplication {v} must have exactly one daughter child"
                else:
                    assert not has_loss, f"duplication {v} lost a child in a full tree"
                for c in ch:
                    assert self.species[c] == self.species[v], f"duplication child {c} changed species"
            else:
                raise AssertionError(f"unknown event {ev}")
            if ev in (DUP, LOSS):
                s = int(self.species[v])
                lo = sp.time(s)
                hi = sp.time(sp.parent[s]) if sp.parent[s] >= 0 else math.inf
                assert lo < self.time[v] < hi, f"event {v} outside its species edge"
        if self.source is not None:
            assert not has_loss, "pruned tree still has loss tips"

    # -- Newick ------------------------------------------------------------

    def to_newick(self) -> str:
        if self.is_empty:
            return ";"
        labels = self.leaf_labels()

        def render(v):
            ch = self.children(v)
            if ch:
                s = "(" + ",".join(render(c) for c in ch) + ")"
            elif self.event[v] == LEAF:
                s = labels[v]
            else:
                s = "lost"
            s += (f"[&event={EVENT_NAMES[int(self.event[v])]},species={int(self.species[v])},"
                  f"daughter={int(self.daughter[v])}]")
            p = self.parent[v]
            if p >= 0:
                s += ":" + fmt_length(self.time[p] - self.time[v])
            return s

        return render(0) + ";"

    @classmethod
    def from_newick(cls, text: str, species_tree: SpeciesTree) -> "LocusTree":
        """Parse the annotated form written by :meth:`to_newick`.

        """
        text = text.strip()
        if text == ";":
            return empty_locus_tree(species_tree)
        raw = read_newick(text)
        n = len(raw)
        cols = {k: [] for k in ("parent", "c0", "c1", "event", "species", "daughter")}
        pat = re.compile(r"^&event=(\w+),species=(\d+),daughter=([01])$")
        for nd in raw:
            m = pat.match(nd.comment or "")
            if not m:
                raise NewickError("locus node without a valid [&event=..,species=..,daughter=..] annotation",
                                  nd.offset)
            if m.group(1) not in _EVENT_CODES:
                raise NewickError(f"unknown event {m.group(1)!r}", nd.offset)
            if len(nd.children) > 2:
                raise NewickError("locus node with more than two children", nd.offset)
            s = int(m.group(2))
            if s >= species_tree.n_nodes:
                raise NewickError(f"species id {s} not in the species tree", nd.offset)
            cols["parent"].append(nd.parent)
            cols["c0"].append(nd.children[0] if len(nd.children) > 0 else -1)
            cols["c1"].append(nd.children[1] if len(nd.children) > 1 else -1)
            cols["event"].append(_EVENT_CODES[m.group(1)])
            cols["species"].append(s)
            cols["daughter"].append(int(m.group(3)))
        if cols["daughter"][0] != 0:
            raise NewickError("the locus root edge cannot be a daughter edge", raw[0].offset)
        dist = [0.0] * n
        for v in range(1, n):
            if raw[v].length is None:
                raise NewickError("locus branch without length", raw[v].offset)
            dist[v] = dist[raw[v].parent] + raw[v].length
        t_root = species_tree.time(cols["species"][0])
        times = []
        for v in range(n):
            if cols["event"][v] in (LEAF, SPEC):
                times.append(species_tree.time(cols["species"][v]))
            else:
                times.append(t_root - dist[v])
        labels = {}
        names = species_tree.names
        for v, nd in enumerate(raw):
            if cols["event"][v] != LEAF:
                continue
            prefix = names[cols["species"][v]] + "_"
            if not (nd.label.startswith(prefix) and nd.label[len(prefix):].isdigit()):
                raise NewickError(f"leaf label {nd.label!r} is not a copy of species {prefix[:-1]!r}", nd.offset)
            labels[v] = nd.label
        if len(set(labels.values())) != len(labels):
            raise NewickError("duplicate leaf label in locus tree", 0)
        return cls(species_tree, cols["parent"], cols["c0"], cols["c1"], cols["event"], cols["species"],
                   cols["daughter"], times, labels=labels)

    def __repr__(self):
        return f"LocusTree(n_nodes={self.n_nodes}, duplications={self.n_duplications()})"


def empty_locus_tree(species_tree: SpeciesTree) -> LocusTree:
    z = np.zeros(0)
    return LocusTree(species_tree, z, z, z, z, z, z, z, source=z)


def simulate_full_locus_tree(species_tree: SpeciesTree, bd: BDParams, rng=None) -> LocusTree:
    """Simulate duplications and losses from a single copy at the species root.

    Every copy waits an Exponential(lam + mu) time, then duplicates with
    probability lam / (lam + mu) (a fair coin picks the daughter child) or is
    lost. Copies alive at a speciation bifurcate into both child species.
    Loss tips are kept.
    """
    stream = as_stream(rng)
    _, c0, c1, tm = species_tree.arrays()
    n, _, L = K._locus_with_growth(stream.state, c0, c1, tm, bd.lam, bd.mu, 64)
    if n < 0:
        raise OverflowError(f"locus tree exceeded {K.MAX_LOCUS_NODES} nodes")
    return LocusTree(species_tree, L[0][:n], L[1][:n], L[2][:n], L[3][:n], L[4][:n], L[5][:n], L[6][:n])


def prune_losses(full: LocusTree) -> LocusTree:
    """Remove lost copies and every ancestor left without an extant descendant.

    Duplication and speciation nodes that keep one surviving child stay as
    degree-2 nodes with their times and daughter flags, so the top of every
    daughter edge is preserved.
    """
    n = full.n_nodes
    alive = np.zeros(n, dtype=np.bool_)
    if n:
        K.mark_alive(n, full.child0, full.child1, full.event, alive)
    keep = np.flatnonzero(alive)
    if keep.size == 0:
        out = empty_locus_tree(full.species_tree)
        out.full = full
        return out
    new_id = np.full(n, -1, dtype=np.int64)
    new_id[keep] = np.arange(keep.size)
    parent = np.where(full.parent[keep] >= 0, new_id[np.maximum(full.parent[keep], 0)], -1)
    c0 = np.full(keep.size, -1, dtype=np.int64)
    c1 = np.full(keep.size, -1, dtype=np.int64)
    for i, v in enumerate(keep):
        ch = [int(new_id[c]) for c in (full.child0[v], full.child1[v]) if c >= 0 and alive[c]]
        if ch:
            c0[i] = ch[0]
        if len(ch) > 1:
            c1[i] = ch[1]
    labels = None if full._labels is None else {int(new_id[v]): lab for v, lab in full._labels.items()}
    return LocusTree(full.species_tree, parent, c0, c1, full.event[keep], full.species[keep],
                     full.daughter[keep], full.time[keep], source=keep, full=full, labels=labels)


@dataclass(frozen=True)
class CopyCensus:
    """Copy counts of one locus tree.

    Attributes
    ----------
    species_counts : dict
        Species name -> number of extant copies.
    vertex_counts : dict
        Species node id -> number of locus copies at that node (copies that
        leave an internal vertex, or copies at a leaf).
    vertex : int
        The queried species node.
    """

    species_counts: dict
    vertex_counts: dict
    vertex: int

    @property
    def I(self) -> int:  # noqa: E743
        return self.vertex_counts[self.vertex]

    def counts(self, names) -> tuple:
        return tuple(self.species_counts[n] for n in names)


def resolve_vertex(species_tree: SpeciesTree, vertex) -> int:
    """Species node id from an id, a leaf name or an iterable of leaf names (their MRCA)."""
    if isinstance(vertex, (int, np.integer)):
        v = int(vertex)
        if not 0 <= v < species_tree.n_nodes:
            raise KeyError(f"species vertex {v} is not in the species tree")
        return v
    if isinstance(vertex, str):
        return species_tree.node_id(vertex)
    return species_tree.mrca_of(list(vertex))


def census(locus: LocusTree, species_tree: SpeciesTree, vertex) -> CopyCensus:
    """Copy counts per species and locus lineages at every species vertex.

    Pass the full tree to count copies at a vertex that are lost later; the
    observed tree only counts lineages with surviving descendants.
    """
    v = resolve_vertex(species_tree, vertex)
    vc = {s: 0 for s in range(species_tree.n_nodes)}
    for u in range(locus.n_nodes):
        if locus.event[u] in (SPEC, LEAF):
            vc[int(locus.species[u])] += 1
    return CopyCensus(locus.copies_per_species(), vc, v)
