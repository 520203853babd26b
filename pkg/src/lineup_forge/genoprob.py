"""Pseudomarker grids and multipoint F2 genotype probabilities.

Probabilities are computed per chromosome with a three-state hidden Markov
model (BB, BR, RR) whose transitions follow the Carter-Falconer map
function. X chromosomes are skipped.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import brentq

from .model import GeneticMap, Genotype, GenotypeMatrix

F2_PRIOR = np.array([0.25, 0.5, 0.25])
_R_MAX = math.nextafter(0.5, 0.0)


def cf_map_distance(r: float) -> float:
    """Carter-Falconer map distance, in Morgans, for recombination fraction ``r``."""
    if not 0.0 <= r < 0.5:
        raise ValueError(f"recombination fraction must lie in [0, 0.5), got {r}")
    return 0.25 * (math.atanh(2.0 * r) + math.atan(2.0 * r))


@lru_cache(maxsize=65536)
def cf_rec_fraction(d: float) -> float:
    """Inverse of :func:`cf_map_distance`; ``d`` in Morgans.

    There is no closed form, so the root is bracketed on [0, 0.5) and found
    with Brent's method. Distances too large to resolve below 0.5 in double
    precision return the largest float below 0.5.
    """
    if d < 0:
        raise ValueError(f"map distance must be nonnegative, got {d}")
    if d == 0:
        return 0.0
    if cf_map_distance(_R_MAX) <= d:
        return _R_MAX
    r = brentq(lambda x: cf_map_distance(x) - d, 0.0, _R_MAX, xtol=1e-17, rtol=4 * np.finfo(float).eps,
               maxiter=500)
    return min(r, _R_MAX)


def f2_transition(r: float) -> np.ndarray:
    """Transition matrix ``T[i, j] = P(next = j | current = i)`` over (BB, BR, RR)."""
    s = 1.0 - r
    return np.array([
        [s * s, 2 * r * s, r * r],
        [r * s, s * s + r * r, r * s],
        [r * r, 2 * r * s, s * s],
    ])


def emission_table(error_rate: float) -> np.ndarray:
    """Rows indexed by observed code + 1 (missing, BB, BR, RR); columns by true genotype."""
    e = error_rate
    em = np.full((4, 3), e / 2.0)
    em[0, :] = 1.0
    em[1 + np.arange(3), np.arange(3)] = 1.0 - e
    return em


@dataclass(frozen=True)
class ChromGrid:
    chrom: str
    locus_ids: tuple
    positions: np.ndarray
    is_pseudo: np.ndarray
    is_x: bool = False

    def __len__(self):
        return len(self.locus_ids)

    def nearest(self, pos: float) -> int:
        """Index of the locus closest to ``pos``; ties go to the lower position."""
        d = np.abs(self.positions - pos)
        return int(np.flatnonzero(d == d.min())[0])


@dataclass(frozen=True)
class PositionGrid:
    chromosomes: tuple  # of ChromGrid

    def __getitem__(self, chrom: str) -> ChromGrid:
        for c in self.chromosomes:
            if c.chrom == chrom:
                return c
        raise KeyError(chrom)

    def __contains__(self, chrom: str) -> bool:
        return any(c.chrom == chrom for c in self.chromosomes)

    @property
    def autosomes(self) -> list:
        return [c for c in self.chromosomes if not c.is_x]


def _pseudo_id(chrom: str, pos: float) -> str:
    return f"c{chrom}.loc{pos:.6g}"


def insert_pseudomarkers(gmap: GeneticMap, step: float = 0.5) -> PositionGrid:
    """Fill every marker interval longer than ``step`` cM with evenly spaced pseudomarkers.

    An interval of length L gets ``ceil(L / step) - 1`` interior points, so
    no gap on the resulting grid exceeds ``step``.
    """
    out = []
    for c in gmap.chromosomes:
        ids, pos, pseudo = [], [], []
        for i, (m, p) in enumerate(zip(c.marker_ids, c.positions)):
            if i > 0:
                a = c.positions[i - 1]
                length = p - a
                if length > step:
                    k = math.ceil(length / step - 1e-9) - 1
                    for j in range(1, k + 1):
                        q = a + length * j / (k + 1)
                        ids.append(_pseudo_id(c.name, q))
                        pos.append(q)
                        pseudo.append(True)
            ids.append(m)
            pos.append(float(p))
            pseudo.append(False)
        out.append(ChromGrid(c.name, tuple(ids), np.array(pos), np.array(pseudo, dtype=bool), c.is_x))
    return PositionGrid(tuple(out))


@dataclass(frozen=True)
class GenoProbTensor:
    sample_ids: tuple
    grid: PositionGrid
    probs: dict  # chrom -> array (samples, loci, 3)

    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.sample_ids)}

    def at(self, chrom: str, locus: int) -> np.ndarray:
        """samples x 3 probabilities at one grid locus."""
        return self.probs[chrom][:, locus, :]


def transitions_for(grid: ChromGrid) -> np.ndarray:
    """Stack of transition matrices between consecutive grid loci."""
    gaps = np.diff(grid.positions) / 100.0
    return np.array([f2_transition(cf_rec_fraction(float(g))) for g in gaps]).reshape(-1, 3, 3)


def forward_backward(obs: np.ndarray, trans: np.ndarray, em: np.ndarray) -> np.ndarray:
    """Posterior genotype probabilities for each row of ``obs`` (samples x loci).

    ``obs`` holds genotype codes with -1 for missing. Forward and backward
    vectors are renormalised at every locus to avoid underflow.
    """
    n, L = obs.shape
    if L == 0:
        raise ValueError("empty chromosome")
    emit = em[obs.astype(np.intp) + 1]  # n x L x 3
    alpha = np.empty((n, L, 3))
    a = F2_PRIOR * emit[:, 0]
    alpha[:, 0] = a / a.sum(axis=1, keepdims=True)
    for l in range(1, L):
        a = (alpha[:, l - 1] @ trans[l - 1]) * emit[:, l]
        alpha[:, l] = a / a.sum(axis=1, keepdims=True)
    beta = np.empty((n, L, 3))
    beta[:, L - 1] = 1.0
    for l in range(L - 2, -1, -1):
        b = (emit[:, l + 1] * beta[:, l + 1]) @ trans[l].T
        beta[:, l] = b / b.sum(axis=1, keepdims=True)
    post = alpha * beta
    return post / post.sum(axis=2, keepdims=True)


def calc_genoprob(geno: GenotypeMatrix, grid: PositionGrid, error_rate: float = 0.002) -> GenoProbTensor:
    """Multipoint genotype probabilities at every autosomal grid locus."""
    em = emission_table(error_rate)
    col = {m: j for j, m in enumerate(geno.marker_ids)}
    n = geno.n_samples
    probs = {}
    for cg in grid.autosomes:
        if len(cg) == 0:
            raise ValueError(f"empty chromosome {cg.chrom}")
        obs = np.full((n, len(cg)), -1, dtype=np.int8)
        for l, lid in enumerate(cg.locus_ids):
            j = col.get(lid)
            if j is not None and not cg.is_pseudo[l]:
                obs[:, l] = geno.calls[:, j]
        p = forward_backward(obs, transitions_for(cg), em)
        p.flags.writeable = False
        probs[cg.chrom] = p
    return GenoProbTensor(geno.sample_ids, grid, probs)


def observed_genotype(probs: np.ndarray, p_min: float = 0.99) -> np.ndarray:
    """Most probable genotype where its probability exceeds ``p_min``, else missing (-1)."""
    g = probs.argmax(axis=-1).astype(np.int8)
    g[probs.max(axis=-1) <= p_min] = Genotype.MISSING
    return g
