"""Align DNA samples to mRNA samples through local-eQTL genotypes.

Each strong local eQTL gives an observed genotype per DNA sample (from the
multipoint probabilities) and, through a k-nearest-neighbour classifier on
the probe expression, an inferred genotype per mRNA sample. The proportion
of agreeing eQTL genotypes is the DNA/mRNA similarity.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .expr_align import decide_labels, resolve_targets
from .genoprob import GenoProbTensor, observed_genotype
from .model import DataError, ExpressionSet, Genotype, ProbeAnnotation, SimilarityMatrix
from .scan import select_local_eqtl

log = logging.getLogger(__name__)


class InsufficientTraining(ValueError):
    pass


class NoLocalEqtl(DataError):
    pass


def observe_eqtl_genotypes(probs: GenoProbTensor, eqtls: Sequence, p_min: float = 0.99) -> np.ndarray:
    """samples x eQTL grid of observed genotypes (-1 where no genotype exceeds ``p_min``)."""
    out = np.full((len(probs.sample_ids), len(eqtls)), -1, dtype=np.int8)
    for k, q in enumerate(eqtls):
        out[:, k] = observed_genotype(probs.at(q.chrom, q.locus), p_min)
    return out


@dataclass(frozen=True)
class KnnClassifier:
    ids: tuple  # training ids, sorted
    coords: np.ndarray  # n x d
    labels: np.ndarray  # genotype codes
    k: int = 40
    vote_min: float = 0.8


def fit_knn(coords, labels, ids: Sequence[str], k: int = 40, vote_min: float = 0.8) -> KnnClassifier:
    """Store the labelled training set, sorted by id so distance ties resolve by id.

    Rows with a missing label or any missing coordinate are left out.
    """
    coords = np.asarray(coords, dtype=float)
    if coords.ndim == 1:
        coords = coords[:, None]
    labels = np.asarray(labels)
    ok = (labels != Genotype.MISSING) & ~np.isnan(coords).any(axis=1)
    idx = [i for i in np.flatnonzero(ok)]
    if len(idx) < k:
        raise InsufficientTraining(f"{len(idx)} labelled training samples, need at least {k}")
    idx.sort(key=lambda i: ids[i])
    X = coords[idx]
    X.flags.writeable = False
    y = labels[idx].astype(np.int8)
    y.flags.writeable = False
    return KnnClassifier(tuple(ids[i] for i in idx), X, y, k, vote_min)


def infer_genotype(clf: KnnClassifier, query) -> np.ndarray:
    """Majority genotype among the ``k`` nearest training points when its share exceeds ``vote_min``.

    ``query`` is n x d (or a 1-d vector for one-dimensional classifiers);
    queries with any missing coordinate get a missing genotype.
    """
    Q = np.asarray(query, dtype=float)
    if Q.ndim == 1:
        Q = Q[:, None] if clf.coords.shape[1] == 1 else Q[None, :]
    out = np.full(len(Q), -1, dtype=np.int8)
    ok = ~np.isnan(Q).any(axis=1)
    if not ok.any():
        return out
    Qk = Q[ok]
    d2 = ((Qk[:, None, :] - clf.coords[None, :, :]) ** 2).sum(axis=2)
    nn = np.argsort(d2, axis=1, kind="stable")[:, :clf.k]
    votes = np.stack([(clf.labels[nn] == g).sum(axis=1) for g in range(3)], axis=1)
    best = votes.argmax(axis=1)
    top = votes.max(axis=1)
    res = np.where(top > clf.vote_min * clf.k, best, -1).astype(np.int8)
    out[ok] = res
    return out


def match_proportion(observed, inferred) -> float:
    """Share of agreeing genotypes among eQTL where both are called; NaN if none are."""
    o = np.asarray(observed)
    i = np.asarray(inferred)
    both = (o >= 0) & (i >= 0)
    n = both.sum()
    return float((o[both] == i[both]).sum() / n) if n else float("nan")


def match_counts(observed: np.ndarray, inferred: np.ndarray):
    """Pairwise (matches, comparisons) between rows of two genotype grids over the same eQTL."""
    def onehot(g):
        return np.concatenate([(g == c) for c in range(3)], axis=1).astype(float)

    matches = onehot(observed) @ onehot(inferred).T
    comps = (observed >= 0).astype(float) @ (inferred >= 0).astype(float).T
    return matches, comps


def _ratio(m, c):
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(c > 0, m / np.where(c > 0, c, 1.0), np.nan)


def two_pass_classifiers(coords: Sequence[np.ndarray], observed: np.ndarray, ids: Sequence[str],
                         k: int = 40, vote_min: float = 0.8, filter_min: float = 0.7):
    """Inferred eQTL genotypes for every sample after one round of training-set cleaning.

    ``coords[e]`` is samples x d expression for eQTL ``e``; ``observed`` is
    samples x eQTL observed genotypes for the same samples (the DNA with the
    same label). Samples whose first-pass self match is below ``filter_min``
    are dropped from training for the second pass but are still classified.

    Returns ``(inferred, kept_eqtl, self_match_pass1, excluded_ids)``.
    """
    ids = list(ids)
    n, E = observed.shape

    def run(train_ok):
        inferred = np.full((n, E), -1, dtype=np.int8)
        kept = np.zeros(E, dtype=bool)
        for e in range(E):
            lab = np.where(train_ok, observed[:, e], -1)
            try:
                clf = fit_knn(coords[e], lab, ids, k, vote_min)
            except InsufficientTraining:
                continue
            kept[e] = True
            inferred[:, e] = infer_genotype(clf, coords[e])
        return inferred, kept

    inf1, kept1 = run(np.ones(n, dtype=bool))
    self1 = np.array([match_proportion(observed[i, kept1], inf1[i, kept1]) for i in range(n)])
    bad = self1 < filter_min  # NaN compares False: unverifiable samples stay in
    if not bad.any():
        return inf1, kept1, self1, []
    inf2, kept2 = run(~bad)
    return inf2, kept2, self1, [ids[i] for i in np.flatnonzero(bad)]


@dataclass
class TissueGenoAlignment:
    tissue: str
    eqtls: list
    dna_ids: tuple
    rna_ids: tuple
    observed: np.ndarray  # dna x eqtl
    inferred: np.ndarray  # rna x eqtl
    matches: np.ndarray  # dna x rna
    comparisons: np.ndarray
    excluded: list = field(default_factory=list)

    def similarity(self) -> SimilarityMatrix:
        return SimilarityMatrix(self.dna_ids, self.rna_ids, _ratio(self.matches, self.comparisons), (0.0, 1.0))


def align_tissue(expr: ExpressionSet, annot: ProbeAnnotation, probs: GenoProbTensor,
                 lod_select: float = 100.0, p_min: float = 0.99, k: int = 40, vote_min: float = 0.8,
                 filter_min: float = 0.7) -> TissueGenoAlignment:
    eqtls = select_local_eqtl(expr, annot, probs, probs.grid, lod_select)
    observed = observe_eqtl_genotypes(probs, eqtls, p_min)
    dna_idx = probs.index()
    # observed genotype for each mRNA sample under its own label
    obs_for_rna = np.full((len(expr.sample_ids), len(eqtls)), -1, dtype=np.int8)
    for i, s in enumerate(expr.sample_ids):
        if s in dna_idx:
            obs_for_rna[i] = observed[dna_idx[s]]
    pidx = expr.probe_index()
    coords = [expr.values[:, [pidx[p] for p in q.probe_ids]] for q in eqtls]
    inferred, kept, _, excluded = two_pass_classifiers(coords, obs_for_rna, expr.sample_ids, k, vote_min,
                                                       filter_min)
    dropped = [q.probe_ids for q, kk in zip(eqtls, kept) if not kk]
    if dropped:
        log.warning("%s: %d eQTL dropped for lack of training samples", expr.tissue, len(dropped))
    eqtls = [q for q, kk in zip(eqtls, kept) if kk]
    observed, inferred = observed[:, kept], inferred[:, kept]
    m, c = match_counts(observed, inferred)
    return TissueGenoAlignment(expr.tissue, eqtls, probs.sample_ids, expr.sample_ids, observed, inferred,
                               m, c, excluded)


def combine_tissues(alignments: Sequence[TissueGenoAlignment]) -> SimilarityMatrix:
    """Pooled matches over pooled comparisons across tissues (not an average of proportions)."""
    alignments = list(alignments)
    rows, cols = [], []
    rseen, cseen = set(), set()
    for a in alignments:
        for r in a.dna_ids:
            if r not in rseen:
                rseen.add(r)
                rows.append(r)
        for c in a.rna_ids:
            if c not in cseen:
                cseen.add(c)
                cols.append(c)
    ri = {r: i for i, r in enumerate(rows)}
    ci = {c: j for j, c in enumerate(cols)}
    M = np.zeros((len(rows), len(cols)))
    C = np.zeros((len(rows), len(cols)))
    for a in alignments:
        ix = np.ix_([ri[r] for r in a.dna_ids], [ci[c] for c in a.rna_ids])
        M[ix] += a.matches
        C[ix] += a.comparisons
    return SimilarityMatrix(rows, cols, _ratio(M, C), (0.0, 1.0))


def decide_dna_labels(sim: SimilarityMatrix, self_min: float = 0.8, other_min: float = 0.8,
                      gap_min: float = 0.2, dup_pairs=None) -> list:
    decisions = decide_labels(sim, self_min, other_min, gap_min)
    return resolve_targets(decisions, dup_pairs)


@dataclass
class DnaAlignment:
    tissues: dict  # tissue -> TissueGenoAlignment
    combined: SimilarityMatrix
    decisions: list


def align_dna(expr: Sequence[ExpressionSet], annot: ProbeAnnotation, probs: GenoProbTensor,
              lod_select: float = 100.0, p_min: float = 0.99, k: int = 40, vote_min: float = 0.8,
              filter_min: float = 0.7, self_min: float = 0.8, other_min: float = 0.8, gap_min: float = 0.2,
              dup_pairs=None, threads: Optional[int] = None) -> DnaAlignment:
    expr = list(expr)

    def work(e):
        return align_tissue(e, annot, probs, lod_select, p_min, k, vote_min, filter_min)

    with ThreadPoolExecutor(max_workers=threads) as pool:
        per = list(pool.map(work, expr))
    if expr and not any(a.eqtls for a in per):
        # nothing to compare DNA against: every row would be dropped as unverifiable
        raise NoLocalEqtl(f"no tissue has a local eQTL with LOD > {lod_select:g} and enough training samples; "
                          "lower lod_select in the manifest thresholds")
    combined = combine_tissues(per)
    decisions = decide_dna_labels(combined, self_min, other_min, gap_min, dup_pairs)
    return DnaAlignment({a.tissue: a for a in per}, combined, decisions)
