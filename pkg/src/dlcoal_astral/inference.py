"""Exact quartet-score species tree search (ASTRAL-one and ASTRAL-multi).

Every unrooted binary topology on the species set is scored as the sum over
species quartets of the tally entry matching the topology's induced quartet.
The search is exhaustive, so it is limited to a few species (9 by default,
135135 candidates).
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .quartets import DEFAULT_TUPLE_CAP, QuartetTally, TallyTable, tally_table, taxa_of
from .trees import (DEFAULT_ENUMERATION_CAP, QuartetTopology, SpeciesTree, Topology, candidate_quartet_matrix,
                    double_factorial, enumerate_unrooted_topologies, parse_newick)

RESULT_COLUMNS = ("rank", "candidate", "score", "tie")


class SpeciesCapError(ValueError):
    """Species count above the exhaustive-search cap."""


@dataclass(frozen=True)
class InferenceResult:
    """Outcome of an exact search.

    Attributes
    ----------
    tree : Topology
        Best candidate; among equal scores the one with the smallest
        canonical Newick string.
    score : int or float
    ties : tuple of Topology
        Every candidate reaching ``score``, in canonical Newick order
        (``tree`` first).
    table : TallyTable
    mode : str
    scores : ndarray
        Score of each candidate in enumeration order.
    """

    tree: Topology
    score: float
    ties: tuple
    table: TallyTable
    mode: str
    scores: np.ndarray

    @property
    def tied(self) -> bool:
        return len(self.ties) > 1

    def ranking(self) -> list:
        """(rank, newick, score, tie) rows, best first, ties by Newick."""
        cands = list(enumerate_unrooted_topologies(self.table.taxa, cap=max(len(self.table.taxa), 4)))
        rows = sorted(((-self.scores[i], cands[i].to_newick()) for i in range(len(cands))))
        out = []
        for r, (neg, nwk) in enumerate(rows, 1):
            s = -neg
            out.append((r, nwk, _as_number(s), int(s == self.score and self.tied)))
        return out

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for row in self.ranking():
            w.writerow(row)


def _as_number(x):
    xf = float(x)
    return int(xf) if xf.is_integer() else xf


def _check_species(taxa: Sequence[str], cap: int) -> tuple:
    taxa = tuple(sorted(set(taxa)))
    n = len(taxa)
    if n < 4:
        raise ValueError(f"need at least 4 species, got {n}")
    if n > cap:
        raise SpeciesCapError(
            f"{n} species exceed the exhaustive-search cap of {cap} "
            f"({double_factorial(2 * n - 5)} candidates); raise it with --cap"
        )
    return taxa


def candidate_scores(table: TallyTable) -> np.ndarray:
    """Score of every candidate topology (enumeration order) against ``table``."""
    n = len(table.taxa)
    m = candidate_quartet_matrix(n)
    counts = np.asarray(table.counts)
    cols = np.arange(counts.shape[0])
    if counts.dtype.kind == "f":
        return counts[cols[None, :], m].sum(axis=1)
    return counts[cols[None, :], m].sum(axis=1, dtype=np.int64)


def search(table: TallyTable, cap: int = DEFAULT_ENUMERATION_CAP) -> InferenceResult:
    """Exhaustive maximization of the quartet score over ``table``'s taxa."""
    taxa = _check_species(table.taxa, cap)
    if int(np.max(table.usable, initial=0)) == 0:
        raise ValueError("no gene tree has a copy of four distinct species")
    scores = candidate_scores(table)
    best = scores.max()
    idx = np.flatnonzero(scores == best)
    cands = list(enumerate_unrooted_topologies(taxa, cap=cap))
    ties = sorted((cands[i] for i in idx), key=lambda t: t.to_newick())
    scores.setflags(write=False)
    return InferenceResult(ties[0], _as_number(best), tuple(ties), table, table.mode, scores)


def astral_one_exact(genes: Sequence, species: Iterable[str] | None = None, rng=None,
                     cap: int = DEFAULT_ENUMERATION_CAP) -> InferenceResult:
    """ASTRAL-one exact search; one copy selection per gene tree shared by all quartets."""
    genes = list(genes)
    taxa = _check_species(species if species is not None else taxa_of(genes), cap)
    return search(tally_table(genes, taxa, mode="one", random_state=rng), cap)


def astral_multi_exact(genes: Sequence, species: Iterable[str] | None = None, cap: int = DEFAULT_ENUMERATION_CAP,
                       method: str = "dp", tuple_cap: int = DEFAULT_TUPLE_CAP, rng=None) -> InferenceResult:
    """ASTRAL-multi exact search; every one-copy-per-species tuple counts."""
    genes = list(genes)
    taxa = _check_species(species if species is not None else taxa_of(genes), cap)
    table = tally_table(genes, taxa, mode="multi", method=method, cap=tuple_cap, random_state=rng)
    return search(table, cap)


def _as_topology(candidate) -> Topology:
    if isinstance(candidate, str):
        candidate = parse_newick(candidate, kind="topology")
    return Topology.from_tree(candidate)


def score(candidate, table, mode: str | None = None):
    """Quartet score of one candidate.

    Parameters
    ----------
    candidate : Topology, SpeciesTree or Newick str
    table : TallyTable or iterable of QuartetTally
        Must hold a tally for every 4-subset of the candidate's taxa.
    mode : str, optional
        If given, every tally must have been built in this mode.
    """
    topo = _as_topology(candidate)
    if isinstance(table, TallyTable):
        tallies = table.tallies()
    else:
        tallies = list(table)
    by_set = {}
    for t in tallies:
        if not isinstance(t, QuartetTally):
            raise TypeError("table entries must be QuartetTally")
        if mode is not None and t.mode != mode:
            raise ValueError(f"tally for {t.quartet} is in mode {t.mode!r}, expected {mode!r}")
        by_set[frozenset(t.quartet)] = t
    total = 0
    for q in itertools.combinations(topo.taxa, 4):
        t = by_set.get(frozenset(q))
        if t is None:
            raise KeyError(f"no tally for quartet {q}")
        shape = topo.quartet(*t.quartet)
        if shape != QuartetTopology.UNRESOLVED:
            total += t.counts[int(shape)]
    return total


class _AstralBase(BaseEstimator):
    mode = ""

    def _table(self, genes, taxa):  # pragma: no cover - overridden
        raise NotImplementedError

    def fit(self, X, y=None):
        """Search the best species topology for the gene trees ``X``.

        ``X`` is a sequence of GeneTree (``None`` entries count as families
        without copies).
        """
        genes = list(X)
        taxa = _check_species(self.species if self.species is not None else taxa_of(genes), self.cap)
        self.result_ = search(self._table(genes, taxa), self.cap)
        self.species_tree_ = self.result_.tree
        self.score_ = self.result_.score
        self.ties_ = self.result_.ties
        self.tallies_ = self.result_.table
        return self

    def predict(self, X=None) -> Topology:
        return self.species_tree_


class AstralOne(_AstralBase):
    """Exact ASTRAL-one: one uniformly drawn copy per species and gene tree.

    Parameters
    ----------
    species : sequence of str, optional
        Species set; default is every species seen in the gene trees.
    cap : int
        Largest species count for the exhaustive search.
    random_state : int or None
        Seed of the copy selection.
    """

    mode = "one"

    def __init__(self, species=None, cap=DEFAULT_ENUMERATION_CAP, random_state=None):
        self.species = species
        self.cap = cap
        self.random_state = random_state

    def _table(self, genes, taxa):
        return tally_table(genes, taxa, mode="one", random_state=self.random_state)


class AstralMulti(_AstralBase):
    """Exact ASTRAL-multi: all one-copy-per-species tuples of every gene tree.

    Parameters
    ----------
    species : sequence of str, optional
    cap : int
    method : {"dp", "enumerate"}
        Exact tuple counting or literal enumeration (subsampled above
        ``tuple_cap`` tuples per gene tree and quartet).
    tuple_cap : int
    random_state : int or None
        Only used when enumeration subsamples.
    """

    mode = "multi"

    def __init__(self, species=None, cap=DEFAULT_ENUMERATION_CAP, method="dp", tuple_cap=DEFAULT_TUPLE_CAP,
                 random_state=None):
        self.species = species
        self.cap = cap
        self.method = method
        self.tuple_cap = tuple_cap
        self.random_state = random_state

    def _table(self, genes, taxa):
        return tally_table(genes, taxa, mode="multi", method=self.method, cap=self.tuple_cap,
                           random_state=self.random_state)


def as_species_topology(tree) -> Topology:
    """Unrooted topology of a SpeciesTree, Topology or Newick string."""
    if isinstance(tree, SpeciesTree):
        return Topology.from_tree(tree)
    return _as_topology(tree)
