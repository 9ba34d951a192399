"""Quartet topology tallies from multi-labeled gene trees.

For a species quartet (A, B, C, D) a tally counts how often each of the
three unrooted shapes AB|CD, AC|BD, AD|BC is induced:

* ASTRAL-one: one copy per species is drawn uniformly per gene tree and the
  induced shape of those four copies is counted once.
* ASTRAL-multi: every 4-tuple holding one copy of each of A, B, C, D counts,
  so a gene tree contributes up to M = |A| |B| |C| |D|.

Tuples that take two copies from the same species are left out. In every
candidate species tree extended by attaching each species' copies as a
polytomy at its leaf, such a tuple induces the same shape, so it adds the
same amount to every candidate score and cannot change the best tree.

Multi counts are computed exactly by a dynamic program over the gene tree:
for each node the number of copy pairs whose MRCA it is, combined with
subtree, ancestor and complement sums. ``method="enumerate"`` walks the
tuples literally instead (with uniform subsampling above a cap).
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass, field, replace
from statistics import NormalDist
from typing import Iterable, Sequence

import numpy as np

from . import _kernels as K
from .coalescent_sim import pick_copies
from ._rng import Stream, as_stream, tag_key
from .trees import GeneTree, QuartetTopology, quartet_index, restrict_to_quartet

DEFAULT_TUPLE_CAP = 10**6
TALLY_COLUMNS = ("quartet", "n1", "n2", "n3", "usable", "skipped", "mode", "sampled", "seed")


@dataclass(frozen=True)
class QuartetTally:
    """Counts of the three resolved shapes of an ordered species quartet.

    Attributes
    ----------
    quartet : tuple of str
        Species (A, B, C, D).
    counts : tuple
        (n1, n2, n3) for AB|CD, AC|BD, AD|BC. Integers unless ``sampled``.
    usable, skipped : int
        Gene trees with / without a copy of all four species.
    mode : str
        ``"one"`` or ``"multi"``.
    sampled : bool
        Some multi count was estimated from a tuple subsample.
    seed : int or None
    """

    quartet: tuple
    counts: tuple = (0, 0, 0)
    usable: int = 0
    skipped: int = 0
    mode: str = "one"
    sampled: bool = False
    seed: int | None = None

    @property
    def n1(self):
        return self.counts[0]

    @property
    def n2(self):
        return self.counts[1]

    @property
    def n3(self):
        return self.counts[2]

    @property
    def total(self):
        return sum(self.counts)

    def merge(self, other: "QuartetTally") -> "QuartetTally":
        """Sum of two partial tallies over disjoint gene tree sets."""
        if other.quartet != self.quartet or other.mode != self.mode:
            raise ValueError("can only merge tallies of the same quartet and mode")
        return replace(
            self,
            counts=tuple(a + b for a, b in zip(self.counts, other.counts)),
            usable=self.usable + other.usable,
            skipped=self.skipped + other.skipped,
            sampled=self.sampled or other.sampled,
        )

    def as_row(self) -> dict:
        return {
            "quartet": "".join(f"{s}," for s in self.quartet)[:-1],
            "n1": _fmt_count(self.counts[0]),
            "n2": _fmt_count(self.counts[1]),
            "n3": _fmt_count(self.counts[2]),
            "usable": self.usable,
            "skipped": self.skipped,
            "mode": self.mode,
            "sampled": int(self.sampled),
            "seed": "" if self.seed is None else self.seed,
        }


def _fmt_count(x):
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def _check_quartet(quartet: Sequence[str]) -> tuple:
    q = tuple(quartet)
    if len(q) != 4 or len(set(q)) != 4:
        raise ValueError(f"a quartet needs four distinct species, got {q}")
    return q


def _seed_of(rng):
    """Integer seed and stream key family for the tally functions."""
    if isinstance(rng, Stream):
        return None, rng.spawn_key()
    if isinstance(rng, (int, np.integer)):
        return int(rng), tag_key(int(rng), "tally-one")
    return None, as_stream(rng).spawn_key()


def tally_one(genes: Iterable, quartet: Sequence[str], rng=None, replicate_ids: Sequence[int] | None = None) -> QuartetTally:
    """ASTRAL-one tally: one uniform copy per species per gene tree.

    Gene tree ``i`` draws from its own stream, indexed by ``replicate_ids[i]``
    (default ``i``), so permuting the input together with its ids leaves the
    tally unchanged. ``None`` entries (families with no surviving copy) are
    skipped.
    """
    q = _check_quartet(quartet)
    seed, key = _seed_of(rng)
    counts = [0, 0, 0]
    usable = skipped = 0
    genes = list(genes)
    ids = range(len(genes)) if replicate_ids is None else list(replicate_ids)
    if len(ids) != len(genes):
        raise ValueError("replicate_ids must match the number of gene trees")
    for gene, rid in zip(genes, ids):
        if gene is None or not set(q) <= gene.species_set:
            skipped += 1
            continue
        copies = pick_copies(gene, q, Stream(key, int(rid)))
        t = restrict_to_quartet(gene, copies)
        counts[int(t)] += 1
        usable += 1
    return QuartetTally(q, tuple(counts), usable, skipped, "one", False, seed)


def _enumerate_counts(gene: GeneTree, q: tuple, cap: int, stream: Stream | None):
    by = gene.copies_by_species()
    lists = [by[s] for s in q]
    total = math.prod(len(x) for x in lists)
    counts = [0, 0, 0]
    if total <= cap:
        for tup in itertools.product(*lists):
            counts[int(restrict_to_quartet(gene, tup))] += 1
        return tuple(counts), False
    if stream is None:
        raise ValueError("subsampling tuples needs a random stream")
    for _ in range(cap):
        tup = [x[stream.integers(len(x))] for x in lists]
        counts[int(restrict_to_quartet(gene, tup))] += 1
    scale = total / cap
    return tuple(c * scale for c in counts), True


def _dp_counts(gene: GeneTree, q: tuple) -> tuple:
    index = {s: i for i, s in enumerate(q)}
    _, c0, c1, leaf_taxon = gene.arrays(index)
    order = np.array(gene.postorder(), dtype=np.int64)
    weight = (leaf_taxon >= 0).astype(np.int64)
    out = np.zeros((1, 3), dtype=np.int64)
    K.tally_all_quartets(order, c0, c1, leaf_taxon, weight, 4, np.arange(4, dtype=np.int64).reshape(1, 4), out)
    return tuple(int(x) for x in out[0])


def tally_multi(genes: Iterable, quartet: Sequence[str], method: str = "dp", cap: int = DEFAULT_TUPLE_CAP,
                random_state=None) -> QuartetTally:
    """ASTRAL-multi tally: every one-copy-per-species 4-tuple counts once.

    Parameters
    ----------
    method : {"dp", "enumerate"}
        ``"dp"`` counts exactly for any number of tuples. ``"enumerate"``
        restricts each tuple; above ``cap`` tuples per gene tree it draws
        ``cap`` tuples uniformly and scales the counts, flagging the tally as
        sampled.
    """
    q = _check_quartet(quartet)
    if method not in ("dp", "enumerate"):
        raise ValueError(f"unknown method {method!r}")
    stream = None if random_state is None else as_stream(random_state)
    counts = [0, 0, 0]
    usable = skipped = 0
    sampled = False
    for gene in genes:
        if gene is None or not set(q) <= gene.species_set:
            skipped += 1
            continue
        if method == "dp":
            c = _dp_counts(gene, q)
        else:
            c, s = _enumerate_counts(gene, q, int(cap), stream)
            sampled = sampled or s
        counts = [a + b for a, b in zip(counts, c)]
        usable += 1
    return QuartetTally(q, tuple(counts), usable, skipped, "multi", sampled,
                        random_state if isinstance(random_state, int) else None)


@dataclass(frozen=True)
class Dominant:
    """Most frequent shape of a tally.

    ``topology`` is UNRESOLVED when the top count is shared; ``tied`` then
    lists the shapes sharing it. ``ci`` is a normal-approximation interval
    for the margin.
    """

    topology: QuartetTopology
    margin: float
    ci: tuple
    tied: frozenset = field(default_factory=frozenset)


def dominant(tally: QuartetTally, confidence: float = 0.95) -> Dominant:
    """Argmax shape, margin ``(n_max - n_second) / usable`` and its interval.

    The interval treats the shape shares ``n_i / total`` as multinomial
    proportions and rescales to the margin's units.
    """
    if tally.usable < 1:
        raise ValueError("tally has no usable gene trees")
    c = [float(x) for x in tally.counts]
    order = sorted(range(3), key=lambda i: -c[i])
    top = [i for i in range(3) if c[i] == c[order[0]]]
    margin = (c[order[0]] - c[order[1]]) / tally.usable
    total = sum(c)
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    if total > 0:
        p1, p2 = c[order[0]] / total, c[order[1]] / total
        n_eff = tally.usable if tally.mode == "one" else total
        half = z * math.sqrt(max(p1 + p2 - (p1 - p2) ** 2, 0.0) / n_eff) * total / tally.usable
    else:
        half = math.inf
    ci = (margin - half, margin + half)
    if len(top) > 1:
        return Dominant(QuartetTopology.UNRESOLVED, 0.0, ci, frozenset(QuartetTopology(i) for i in top))
    return Dominant(QuartetTopology(order[0]), margin, ci, frozenset())


# --------------------------------------------------------------------------
# All quartets at once


@dataclass(frozen=True)
class TallyTable:
    """Tallies of every quartet of a sorted taxon set.

    ``counts[q]`` belongs to the q-th 4-subset in lexicographic order of
    taxon indices, with shapes relative to that sorted order.
    """

    taxa: tuple
    counts: np.ndarray
    usable: np.ndarray
    skipped: np.ndarray
    mode: str
    sampled: bool = False
    seed: int | None = None

    @property
    def quartets(self) -> list:
        return [tuple(self.taxa[i] for i in row) for row in quartet_index(len(self.taxa))]

    def tally(self, q: int) -> QuartetTally:
        c = self.counts[q]
        vals = tuple(float(x) for x in c) if self.sampled else tuple(int(x) for x in c)
        return QuartetTally(self.quartets[q], vals, int(self.usable[q]), int(self.skipped[q]), self.mode,
                            self.sampled, self.seed)

    def tallies(self) -> list:
        return [self.tally(q) for q in range(self.counts.shape[0])]


def taxa_of(genes: Iterable) -> tuple:
    out = set()
    for g in genes:
        if g is not None:
            out |= g.species_set
    return tuple(sorted(out))


def select_one_copy(gene: GeneTree, taxa: Sequence[str], stream: Stream) -> dict:
    """One uniform copy (leaf id) per present species, drawn in taxon order."""
    by = gene.copies_by_species()
    out = {}
    for s in taxa:
        ids = sorted(by.get(s, []), key=gene.leaf_copy)
        if ids:
            out[s] = ids[stream.integers(len(ids))]
    return out


def tally_table(genes: Sequence, taxa: Sequence[str] | None = None, mode: str = "one", random_state=None,
                method: str = "dp", cap: int = DEFAULT_TUPLE_CAP) -> TallyTable:
    """Tallies for all quartets of ``taxa`` (default: every species in ``genes``).

    In ``"one"`` mode a single copy selection per gene tree is shared by all
    quartets; gene tree ``i`` draws it from stream ``i`` of the seed.
    """
    genes = list(genes)
    taxa = tuple(sorted(taxa)) if taxa is not None else taxa_of(genes)
    n = len(taxa)
    if n < 4:
        raise ValueError(f"need at least 4 species, got {n}")
    if mode not in ("one", "multi"):
        raise ValueError(f"unknown mode {mode!r}")
    quartets = quartet_index(n)
    index = {s: i for i, s in enumerate(taxa)}
    counts = np.zeros((len(quartets), 3), dtype=np.int64)
    presence = np.zeros((len(genes), n), dtype=bool)
    seed = None
    key = 0
    if mode == "one":
        seed, key = _seed_of(random_state)
    sampled = False
    fcounts = None
    for i, gene in enumerate(genes):
        if gene is None:
            continue
        for s in gene.species_set:
            if s in index:
                presence[i, index[s]] = True
        _, c0, c1, leaf_taxon = gene.arrays(index)
        order = np.array(gene.postorder(), dtype=np.int64)
        if mode == "one":
            chosen = select_one_copy(gene, taxa, Stream(key, i))
            weight = np.zeros(gene.n_nodes, dtype=np.int64)
            weight[list(chosen.values())] = 1
            K.tally_all_quartets(order, c0, c1, leaf_taxon, weight, n, quartets, counts)
        elif method == "dp":
            weight = (leaf_taxon >= 0).astype(np.int64)
            K.tally_all_quartets(order, c0, c1, leaf_taxon, weight, n, quartets, counts)
        else:
            stream = None if random_state is None else Stream(as_stream(random_state).spawn_key(), i)
            for qi, row in enumerate(quartets):
                q = tuple(taxa[j] for j in row)
                if not set(q) <= gene.species_set:
                    continue
                c, s = _enumerate_counts(gene, q, int(cap), stream)
                if s:
                    sampled = True
                    if fcounts is None:
                        fcounts = np.zeros(counts.shape, dtype=float)
                    fcounts[qi] += c
                else:
                    counts[qi] += c
    usable = presence[:, quartets].all(axis=2).sum(axis=0)
    skipped = len(genes) - usable
    if sampled:
        counts = counts.astype(float) + fcounts
    counts.setflags(write=False)
    return TallyTable(taxa, counts, usable, skipped, mode, sampled, seed)


def write_tallies_csv(fh, tallies: Iterable[QuartetTally]) -> None:
    """Write tallies as CSV with the columns of ``TALLY_COLUMNS``."""
    w = csv.DictWriter(fh, fieldnames=TALLY_COLUMNS, lineterminator="\n")
    w.writeheader()
    for t in tallies:
        w.writerow(t.as_row())
