"""Tree types, Newick I/O, quartet restriction and topology enumeration.

Three tree values are used throughout the package:

* :class:`SpeciesTree` -- rooted, strictly binary, positive branch lengths in
  coalescent units, unique leaf names.
* :class:`GeneTree` -- rooted binary, multi-labeled. Leaves carry
  ``(species, copy)`` and are written as ``SPECIES_COPY``.
* :class:`Topology` -- an unrooted binary topology stored as its set of
  nontrivial splits. Candidate species trees and inference outputs are
  topologies.

All of them are immutable once built.
"""

from __future__ import annotations

import enum
import itertools
import math
from functools import lru_cache
from typing import Iterable, Iterator, Sequence

import numpy as np

from .newick import NewickError, fmt_length, read_newick

DEFAULT_ENUMERATION_CAP = 9


class QuartetTopology(enum.IntEnum):
    """Resolved shape of an ordered species quartet (A, B, C, D)."""

    UNRESOLVED = -1
    AB_CD = 0
    AC_BD = 1
    AD_BC = 2

    def __str__(self):
        return _QUARTET_NAMES[self]


_QUARTET_NAMES = {
    QuartetTopology.UNRESOLVED: "unresolved",
    QuartetTopology.AB_CD: "AB|CD",
    QuartetTopology.AC_BD: "AC|BD",
    QuartetTopology.AD_BC: "AD|BC",
}

# pair of positions in (A, B, C, D) -> the split it induces when it is a cherry
_PAIR_TOPOLOGY = {
    (0, 1): 0, (2, 3): 0,
    (0, 2): 1, (1, 3): 1,
    (0, 3): 2, (1, 2): 2,
}


def _snap(t: float, scale: float) -> float:
    return 0.0 if abs(t) <= 1e-12 * max(1.0, scale) else t


def _children_order(children, key):
    return tuple(sorted(children, key=key))


class _RootedTree:
    """Shared machinery for rooted trees stored as preorder node tables."""

    __slots__ = ("_parent", "_children", "_postorder", "_leaf_ids")

    def _init_structure(self, parent: Sequence[int], children: Sequence[Sequence[int]]):
        self._parent = tuple(int(p) for p in parent)
        self._children = tuple(tuple(int(c) for c in ch) for ch in children)
        roots = [i for i, p in enumerate(self._parent) if p < 0]
        if len(roots) != 1 or roots[0] != 0:
            raise ValueError("tree must have a single root stored at index 0")
        order = []
        stack = [0]
        while stack:
            v = stack.pop()
            order.append(v)
            stack.extend(self._children[v])
        if len(order) != len(self._parent):
            raise ValueError("node table is not a single connected tree")
        self._postorder = tuple(reversed(order))
        self._leaf_ids = tuple(self._leaves_in_order())

    def _leaves_in_order(self):
        out = []
        stack = [0]
        while stack:
            v = stack.pop()
            ch = self._children[v]
            if not ch:
                out.append(v)
            else:
                stack.extend(reversed(ch))
        return out

    @property
    def n_nodes(self) -> int:
        return len(self._parent)

    @property
    def root(self) -> int:
        return 0

    @property
    def parent(self) -> tuple:
        return self._parent

    @property
    def children(self) -> tuple:
        return self._children

    @property
    def leaves(self) -> tuple:
        """Leaf ids in left-to-right order."""
        return self._leaf_ids

    def is_leaf(self, v: int) -> bool:
        return not self._children[v]

    def postorder(self) -> tuple:
        return self._postorder

    def ancestors(self, v: int) -> list:
        """``v`` followed by its ancestors up to the root."""
        out = [v]
        while self._parent[v] >= 0:
            v = self._parent[v]
            out.append(v)
        return out

    def mrca(self, nodes: Iterable[int]) -> int:
        nodes = list(nodes)
        common = None
        for v in nodes:
            anc = self.ancestors(v)
            if common is None:
                common = anc
            else:
                s = set(anc)
                common = [u for u in common if u in s]
        if not common:
            raise ValueError("mrca of an empty node set")
        return common[0]

    def leaf_masks(self, index_of) -> list:
        """Bitmask of descendant leaves per node; ``index_of(leaf_id)`` gives the bit."""
        masks = [0] * self.n_nodes
        for v in self._postorder:
            ch = self._children[v]
            if not ch:
                masks[v] = 1 << index_of(v)
            else:
                m = 0
                for c in ch:
                    m |= masks[c]
                masks[v] = m
        return masks

    def _label(self, v):  # pragma: no cover - overridden
        raise NotImplementedError

    def _newick(self, length_of, comment_of=None) -> str:
        keys = {}
        for v in self._postorder:
            ch = self._children[v]
            keys[v] = self._label(v) if not ch else min(keys[c] for c in ch)

        def render(v):
            ch = self._children[v]
            if ch:
                inner = ",".join(render(c) for c in _children_order(ch, keys.__getitem__))
                s = f"({inner})"
            else:
                s = self._label(v)
            if comment_of is not None:
                s += comment_of(v)
            length = length_of(v)
            if length is not None:
                s += ":" + fmt_length(length)
            return s

        return render(0) + ";"


class SpeciesTree(_RootedTree):
    """Rooted binary species tree with branch lengths in coalescent units.

    Nodes are numbered in preorder with the root at 0. ``time(v)`` is the
    distance before present: leaves of an ultrametric tree sit at 0 and the
    root at the depth. There is no stem edge above the root.
    """

    __slots__ = ("_names", "_lengths", "_dist", "_time", "_name_to_id")

    def __init__(self, parent, children, names, lengths):
        self._init_structure(parent, children)
        self._names = tuple(names)
        self._lengths = tuple(0.0 if p < 0 else float(x) for p, x in zip(self._parent, lengths))
        for v, ch in enumerate(self._children):
            if ch and len(ch) != 2:
                raise ValueError(f"species tree must be binary; node {v} has {len(ch)} children")
            if self._parent[v] >= 0:
                x = self._lengths[v]
                if not (math.isfinite(x) and x > 0):
                    raise ValueError(f"branch lengths must be positive and finite, got {x}")
        leaf_names = [self._names[v] for v in self._leaf_ids]
        if any(not nm for nm in leaf_names):
            raise ValueError("every species leaf needs a name")
        if len(set(leaf_names)) != len(leaf_names):
            dup = sorted({n for n in leaf_names if leaf_names.count(n) > 1})
            raise ValueError(f"duplicate species names: {dup}")
        if any("_" in nm for nm in leaf_names):
            raise ValueError("species names must not contain '_' (reserved for copy labels)")
        if len(self._leaf_ids) < 2:
            raise ValueError("species tree needs at least two leaves")
        dist = [0.0] * self.n_nodes
        for v in reversed(self._postorder):
            p = self._parent[v]
            if p >= 0:
                dist[v] = dist[p] + self._lengths[v]
        depth = max(dist[v] for v in self._leaf_ids)
        self._dist = tuple(dist)
        self._time = tuple(_snap(depth - d, depth) for d in dist)
        self._name_to_id = {self._names[v]: v for v in self._leaf_ids}

    @classmethod
    def from_newick(cls, text: str) -> "SpeciesTree":
        return parse_newick(text, kind="species")

    @property
    def names(self) -> tuple:
        """Name per node ('' for internal nodes)."""
        return self._names

    @property
    def species(self) -> tuple:
        """Leaf names in left-to-right order."""
        return tuple(self._names[v] for v in self._leaf_ids)

    @property
    def n_species(self) -> int:
        return len(self._leaf_ids)

    @property
    def lengths(self) -> tuple:
        return self._lengths

    def time(self, v: int) -> float:
        return self._time[v]

    @property
    def times(self) -> tuple:
        return self._time

    def dist_from_root(self, v: int) -> float:
        return self._dist[v]

    def node_id(self, name: str) -> int:
        try:
            return self._name_to_id[name]
        except KeyError:
            raise KeyError(f"unknown species {name!r}") from None

    def mrca_of(self, names: Iterable[str]) -> int:
        return self.mrca(self.node_id(n) for n in names)

    def descendant_species(self, v: int) -> list:
        out = []
        stack = [v]
        while stack:
            u = stack.pop()
            if self.is_leaf(u):
                out.append(self._names[u])
            stack.extend(self._children[u])
        return sorted(out)

    @property
    def min_branch_length(self) -> float:
        return min(self._lengths[v] for v in range(self.n_nodes) if self._parent[v] >= 0)

    @property
    def depth(self) -> float:
        return max(self._dist[v] for v in self._leaf_ids)

    def arrays(self):
        """(parent, child0, child1, time) as numpy arrays for the kernels."""
        n = self.n_nodes
        parent = np.array(self._parent, dtype=np.int64)
        c0 = np.full(n, -1, dtype=np.int64)
        c1 = np.full(n, -1, dtype=np.int64)
        for v, ch in enumerate(self._children):
            if ch:
                c0[v], c1[v] = ch
        return parent, c0, c1, np.array(self._time, dtype=np.float64)

    def _label(self, v):
        return self._names[v]

    def to_newick(self) -> str:
        return self._newick(lambda v: None if v == 0 else self._lengths[v])

    def __eq__(self, other):
        if not isinstance(other, SpeciesTree):
            return NotImplemented
        return self.to_newick() == other.to_newick()

    def __hash__(self):
        return hash(self.to_newick())

    def __repr__(self):
        return f"SpeciesTree({self.to_newick()!r})"


def split_gene_label(label: str) -> tuple[str, int]:
    """``"A_3" -> ("A", 3)``; a label without '_' is copy 0 of that species."""
    if "_" not in label:
        return label, 0
    species, _, idx = label.partition("_")
    if not species or "_" in idx or not idx.isdigit():
        raise ValueError(f"gene label {label!r} does not follow SPECIES_INDEX")
    return species, int(idx)


def gene_label(species: str, copy: int) -> str:
    return f"{species}_{copy}"


class GeneTree(_RootedTree):
    """Multi-labeled rooted binary gene tree.

    ``times`` (distance before present per node) may be ``None`` for trees
    read from Newick without branch lengths; topology-only operations still
    work on those.
    """

    __slots__ = ("_species", "_copy", "_times", "_label_to_id", "_arrays_cache")

    def __init__(self, parent, children, leaf_species, leaf_copy, times=None):
        self._init_structure(parent, children)
        self._species = tuple(leaf_species)
        self._copy = tuple(int(c) if c is not None else -1 for c in leaf_copy)
        for v, ch in enumerate(self._children):
            if ch and len(ch) != 2:
                raise ValueError(f"gene tree must be binary; node {v} has {len(ch)} children")
        if times is not None:
            times = tuple(float(t) for t in times)
            for v in range(self.n_nodes):
                p = self._parent[v]
                if p >= 0 and not times[p] > times[v]:
                    raise ValueError("parent time must exceed child time")
        self._times = times
        self._label_to_id = {}
        for v in self._leaf_ids:
            sp = self._species[v]
            if not sp:
                raise ValueError("gene leaf without species")
            lab = gene_label(sp, self._copy[v])
            if lab in self._label_to_id:
                raise ValueError(f"duplicate gene leaf label {lab!r}")
            self._label_to_id[lab] = v
        self._arrays_cache = None

    @classmethod
    def from_newick(cls, text: str) -> "GeneTree":
        return parse_newick(text, kind="gene")

    @property
    def times(self):
        return self._times

    def time(self, v: int) -> float:
        if self._times is None:
            raise ValueError("gene tree has no branch lengths")
        return self._times[v]

    def length(self, v: int):
        if self._times is None or self._parent[v] < 0:
            return None
        return self._times[self._parent[v]] - self._times[v]

    def leaf_species(self, v: int) -> str:
        return self._species[v]

    def leaf_copy(self, v: int) -> int:
        return self._copy[v]

    def label(self, v: int) -> str:
        return gene_label(self._species[v], self._copy[v])

    @property
    def labels(self) -> tuple:
        return tuple(self.label(v) for v in self._leaf_ids)

    def leaf_id(self, label: str) -> int:
        try:
            return self._label_to_id[label]
        except KeyError:
            raise KeyError(f"gene tree has no leaf {label!r}") from None

    def copies_by_species(self) -> dict:
        """species -> list of leaf ids (left-to-right)."""
        out: dict = {}
        for v in self._leaf_ids:
            out.setdefault(self._species[v], []).append(v)
        return out

    @property
    def species_set(self) -> frozenset:
        return frozenset(self._species[v] for v in self._leaf_ids)

    @property
    def n_leaves(self) -> int:
        return len(self._leaf_ids)

    def arrays(self, species_index: dict):
        """(parent, child0, child1, leaf_species_index) for the counting kernels.

        Leaves whose species is not in ``species_index`` get index -1.
        """
        key = tuple(sorted(species_index.items()))
        if self._arrays_cache is not None and self._arrays_cache[0] == key:
            return self._arrays_cache[1]
        n = self.n_nodes
        parent = np.array(self._parent, dtype=np.int64)
        c0 = np.full(n, -1, dtype=np.int64)
        c1 = np.full(n, -1, dtype=np.int64)
        sp = np.full(n, -1, dtype=np.int64)
        for v, ch in enumerate(self._children):
            if ch:
                c0[v], c1[v] = ch
            else:
                sp[v] = species_index.get(self._species[v], -1)
        out = (parent, c0, c1, sp)
        self._arrays_cache = (key, out)
        return out

    def _label(self, v):
        return self.label(v)

    def to_newick(self) -> str:
        return self._newick(self.length)

    def __eq__(self, other):
        if not isinstance(other, GeneTree):
            return NotImplemented
        return self.to_newick() == other.to_newick()

    def __hash__(self):
        return hash(self.to_newick())

    def __repr__(self):
        return f"GeneTree({self.to_newick()!r})"


# --------------------------------------------------------------------------
# Unrooted topologies


def _popcount(x: int) -> int:
    return bin(x).count("1")


class Topology:
    """Unrooted binary topology on a sorted taxon tuple, stored as splits.

    Each nontrivial split is a bitmask over ``taxa`` giving the side that does
    not contain ``taxa[0]``.
    """

    __slots__ = ("taxa", "splits", "_index")

    def __init__(self, taxa: Sequence[str], splits: Iterable[int]):
        taxa = tuple(taxa)
        if list(taxa) != sorted(taxa) or len(set(taxa)) != len(taxa):
            raise ValueError("taxa must be sorted and unique")
        self.taxa = taxa
        self.splits = frozenset(int(s) for s in splits)
        self._index = {t: i for i, t in enumerate(taxa)}

    @classmethod
    def from_tree(cls, tree) -> "Topology":
        """Unrooted topology of a species tree, single-copy gene tree or Topology."""
        if isinstance(tree, Topology):
            return tree
        if isinstance(tree, SpeciesTree):
            names = [tree.names[v] for v in tree.leaves]
            name_of = tree.names.__getitem__
        elif isinstance(tree, GeneTree):
            names = [tree.leaf_species(v) for v in tree.leaves]
            if len(set(names)) != len(names):
                raise ValueError("gene tree has several copies of a species; restrict it first")
            name_of = tree.leaf_species
        else:
            raise TypeError(f"cannot take the topology of {type(tree).__name__}")
        taxa = tuple(sorted(names))
        index = {t: i for i, t in enumerate(taxa)}
        masks = tree.leaf_masks(lambda v: index[name_of(v)])
        full = (1 << len(taxa)) - 1
        n = len(taxa)
        splits = set()
        for v in range(tree.n_nodes):
            if tree.parent[v] < 0:
                continue
            m = masks[v]
            if m & 1:
                m ^= full
            if 2 <= _popcount(m) <= n - 2:
                splits.add(m)
        return cls(taxa, splits)

    @classmethod
    def from_newick(cls, text: str) -> "Topology":
        return parse_newick(text, kind="topology")

    @property
    def n_taxa(self) -> int:
        return len(self.taxa)

    def quartet(self, a: str, b: str, c: str, d: str) -> QuartetTopology:
        """Induced topology on the ordered species quartet (a, b, c, d)."""
        idx = [self._index[x] for x in (a, b, c, d)]
        return QuartetTopology(_quartet_from_splits(self.splits, idx))

    def split_sets(self) -> set:
        """Splits as frozensets of taxon names (side without ``taxa[0]``)."""
        return {frozenset(t for i, t in enumerate(self.taxa) if s >> i & 1) for s in self.splits}

    def to_newick(self) -> str:
        """Canonical Newick rooted on the pendant edge of ``taxa[0]``."""
        n = len(self.taxa)
        if n == 1:
            return f"{self.taxa[0]};"
        splits = sorted(self.splits, key=_popcount)

        def render(mask):
            if _popcount(mask) == 1:
                return self.taxa[mask.bit_length() - 1]
            inside = [s for s in splits if s & mask == s and s != mask]
            maximal = [s for s in inside if not any(s != t and s & t == s for t in inside)]
            parts = list(maximal)
            rest = mask
            for s in maximal:
                rest &= ~s
            i = 0
            while rest:
                if rest & 1:
                    parts.append(1 << i)
                rest >>= 1
                i += 1
            parts.sort(key=lambda m: (m & -m).bit_length())
            return "(" + ",".join(render(p) for p in parts) + ")"

        full = (1 << n) - 1
        return f"({self.taxa[0]},{render(full ^ 1)});"

    def relabel(self, mapping: dict) -> "Topology":
        """Topology with taxa renamed through ``mapping``."""
        text = self.to_newick()
        tree = read_newick(text)
        for node in tree:
            if not node.children:
                node.label = mapping[node.label]
        return _topology_from_raw(tree)

    def __eq__(self, other):
        if not isinstance(other, Topology):
            return NotImplemented
        return self.taxa == other.taxa and self.splits == other.splits

    def __hash__(self):
        return hash((self.taxa, self.splits))

    def __repr__(self):
        return f"Topology({self.to_newick()!r})"


# code of (a,b,c,d) membership bits -> quartet topology index
_SIDE_TABLE = np.full(16, -1, dtype=np.int8)
for _bits, _topo in ((0b0011, 0), (0b1100, 0), (0b0101, 1), (0b1010, 1), (0b1001, 2), (0b0110, 2)):
    _SIDE_TABLE[_bits] = _topo


def _quartet_from_splits(splits, idx) -> int:
    a, b, c, d = idx
    for s in splits:
        code = (s >> a & 1) | (s >> b & 1) << 1 | (s >> c & 1) << 2 | (s >> d & 1) << 3
        t = _SIDE_TABLE[code]
        if t >= 0:
            return int(t)
    return -1


# --------------------------------------------------------------------------
# Newick entry points


def _topology_from_raw(raw) -> Topology:
    names = [nd.label for nd in raw if not nd.children]
    if len(set(names)) != len(names):
        raise NewickError("duplicate leaf label in topology")
    taxa = tuple(sorted(names))
    index = {t: i for i, t in enumerate(taxa)}
    n = len(taxa)
    full = (1 << n) - 1
    masks = [0] * len(raw)
    for v in range(len(raw) - 1, -1, -1):
        nd = raw[v]
        if not nd.children:
            masks[v] = 1 << index[nd.label]
        else:
            for c in nd.children:
                masks[v] |= masks[c]
    splits = set()
    for v in range(1, len(raw)):
        m = masks[v]
        if m & 1:
            m ^= full
        if 2 <= _popcount(m) <= n - 2:
            splits.add(m)
    return Topology(taxa, splits)


def parse_newick(text: str, kind: str = "species"):
    """Parse one Newick statement.

    ``kind`` is ``"species"`` (-> :class:`SpeciesTree`), ``"gene"``
    (-> :class:`GeneTree`, leaf labels ``SPECIES_INDEX``) or ``"topology"``
    (-> :class:`Topology`, lengths ignored, polytomy at the root allowed).
    """
    raw = read_newick(text.strip())
    if kind == "topology":
        return _topology_from_raw(raw)
    parent = [nd.parent for nd in raw]
    children = [nd.children for nd in raw]
    if kind == "species":
        for nd in raw:
            if nd.children and len(nd.children) != 2:
                raise NewickError(
                    f"species tree must be binary (node with {len(nd.children)} children)", nd.offset
                )
            if nd.parent >= 0 and nd.length is None:
                raise NewickError("species tree branch without length", nd.offset)
            if nd.parent >= 0 and not nd.length > 0:
                raise NewickError(f"branch length must be positive, got {nd.length}", nd.offset)
        if raw[0].length not in (None, 0.0):
            raise NewickError("species tree root must not carry a stem length", raw[0].offset)
        seen = {}
        for nd in raw:
            if not nd.children:
                if nd.label in seen:
                    raise NewickError(f"duplicate species leaf {nd.label!r}", nd.offset)
                seen[nd.label] = nd
        try:
            return SpeciesTree(parent, children, [nd.label if not nd.children else "" for nd in raw],
                               [nd.length or 0.0 for nd in raw])
        except ValueError as exc:
            raise NewickError(str(exc), 0) from None
    if kind == "gene":
        species, copies = [], []
        for nd in raw:
            if nd.children:
                if len(nd.children) != 2:
                    raise NewickError("gene tree must be binary", nd.offset)
                species.append("")
                copies.append(None)
            else:
                try:
                    sp, cp = split_gene_label(nd.label)
                except ValueError as exc:
                    raise NewickError(str(exc), nd.offset) from None
                species.append(sp)
                copies.append(cp)
        has_len = [nd.length is not None for nd in raw[1:]]
        times = None
        if any(has_len):
            if not all(has_len):
                raise NewickError("gene tree has lengths on some branches only", 0)
            dist = [0.0] * len(raw)
            for v in range(1, len(raw)):
                if raw[v].length < 0:
                    raise NewickError("negative branch length", raw[v].offset)
                dist[v] = dist[raw[v].parent] + raw[v].length
            h = max(dist[v] for v in range(len(raw)) if not raw[v].children)
            times = [_snap(h - d, h) for d in dist]
        try:
            return GeneTree(parent, children, species, copies, times)
        except ValueError as exc:
            raise NewickError(str(exc), 0) from None
    raise ValueError(f"unknown tree kind {kind!r}")


def write_newick(tree) -> str:
    """Canonical Newick: children ordered by smallest descendant leaf label."""
    return tree.to_newick()


def read_tree_file(path, kind: str = "gene") -> list:
    """Read one tree per non-empty line."""
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(parse_newick(line, kind=kind))
    return out


# --------------------------------------------------------------------------
# Quartet restriction


def restrict_to_quartet(gene: GeneTree, copies: Sequence) -> QuartetTopology:
    """Unrooted topology induced by four gene leaves, one per species A, B, C, D.

    ``copies`` holds leaf labels (``"A_0"``) or leaf ids, in A, B, C, D order.
    """
    if len(copies) != 4:
        raise ValueError("need exactly four copies")
    ids = [gene.leaf_id(c) if isinstance(c, str) else int(c) for c in copies]
    for v in ids:
        if v < 0 or v >= gene.n_nodes or not gene.is_leaf(v):
            raise KeyError(f"{v} is not a leaf of the gene tree")
    if len({gene.leaf_species(v) for v in ids}) != 4:
        raise ValueError("the four copies must come from four distinct species")
    paths = [gene.ancestors(v) for v in ids]
    path_sets = [set(p) for p in paths]
    cherries = []
    for i, j in itertools.combinations(range(4), 2):
        m = next(u for u in paths[i] if u in path_sets[j])
        below = sum(1 for k in range(4) if m in path_sets[k])
        if below == 2:
            cherries.append((i, j))
    if not cherries:
        return QuartetTopology.UNRESOLVED
    return QuartetTopology(_PAIR_TOPOLOGY[cherries[0]])


# --------------------------------------------------------------------------
# Enumeration


@lru_cache(maxsize=None)
def _split_tables(n: int) -> tuple:
    """All (2n-5)!! unrooted binary topologies on taxa 0..n-1, as split tuples.

    Stepwise leaf addition: every edge of every tree on the first k taxa gets
    taxon k grafted onto it. Edges are tracked by the side that excludes
    taxon 0.
    """
    trees = [[0b110, 0b010, 0b100]]
    for k in range(3, n):
        bit = 1 << k
        grown = []
        for edges in trees:
            for e in edges:
                out = []
                for t in edges:
                    if t == e:
                        out.append(t)
                        out.append(t | bit)
                    elif t & e == e:
                        out.append(t | bit)
                    else:
                        out.append(t)
                out.append(bit)
                grown.append(out)
        trees = grown
    result = []
    for edges in trees:
        result.append(tuple(sorted(s for s in edges if 2 <= _popcount(s) <= n - 2)))
    return tuple(result)


def double_factorial(m: int) -> int:
    out = 1
    while m > 1:
        out *= m
        m -= 2
    return out


def enumerate_unrooted_topologies(species: Iterable[str], cap: int = DEFAULT_ENUMERATION_CAP) -> Iterator[Topology]:
    """Yield every unrooted binary topology on ``species`` in a fixed order."""
    taxa = tuple(sorted(set(species)))
    n = len(taxa)
    if n < 4:
        raise ValueError(f"need at least 4 species, got {n}")
    if n > cap:
        raise ValueError(
            f"{n} species exceeds the enumeration cap of {cap} "
            f"({double_factorial(2 * n - 5)} candidates); raise the cap explicitly"
        )
    for splits in _split_tables(n):
        yield Topology(taxa, splits)


@lru_cache(maxsize=None)
def quartet_index(n: int) -> np.ndarray:
    """All 4-subsets of ``range(n)`` in lexicographic order, shape (C(n,4), 4)."""
    return np.array(list(itertools.combinations(range(n), 4)), dtype=np.int64).reshape(-1, 4)


@lru_cache(maxsize=None)
def candidate_quartet_matrix(n: int) -> np.ndarray:
    """Induced quartet topology index of every candidate on every quartet.

    Shape ``(n_candidates, C(n, 4))``, rows follow the enumeration order.
    """
    masks = np.array(_split_tables(n), dtype=np.int64).reshape(-1, n - 3)
    quartets = quartet_index(n)
    out = np.full((masks.shape[0], quartets.shape[0]), -1, dtype=np.int8)
    for q, (a, b, c, d) in enumerate(quartets):
        code = ((masks >> a) & 1) | ((masks >> b) & 1) << 1 | ((masks >> c) & 1) << 2 | ((masks >> d) & 1) << 3
        out[:, q] = _SIDE_TABLE[code].max(axis=1)
    return out


def unrooted_equal(t1, t2) -> bool:
    """True iff two trees on the same leaf set share their unrooted topology."""
    a = Topology.from_tree(t1)
    b = Topology.from_tree(t2)
    if a.taxa != b.taxa:
        raise ValueError(f"leaf sets differ: {sorted(set(a.taxa) ^ set(b.taxa))}")
    return a.splits == b.splits


def min_branch_length(species: SpeciesTree) -> float:
    """Shortest branch of the species tree (f)."""
    return species.min_branch_length


def min_internal_branch(species: SpeciesTree) -> float:
    """Shortest branch between two internal nodes; ``inf`` if there is none."""
    vals = [species.lengths[v] for v in range(species.n_nodes)
            if species.parent[v] >= 0 and not species.is_leaf(v)]
    return min(vals) if vals else math.inf


def depth(species: SpeciesTree) -> float:
    """Longest root-to-leaf path (Delta)."""
    return species.depth
