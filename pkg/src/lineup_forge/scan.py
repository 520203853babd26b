"""Haley-Knott regression: single-locus LOD scores and genome scans."""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import norm, rankdata

from .genoprob import GenoProbTensor, PositionGrid
from .model import ExpressionSet, ProbeAnnotation, ProbeInfo


class RankDeficientWarning(UserWarning):
    pass


def normal_quantile_transform(values) -> np.ndarray:
    """Replace each value by the normal quantile of its (average) rank; NaN is kept."""
    x = np.asarray(values, dtype=float)
    ok = ~np.isnan(x)
    n = int(ok.sum())
    if n == 0:
        raise ValueError("normal_quantile_transform: all values missing")
    out = np.full(x.shape, np.nan)
    out[ok] = norm.ppf((rankdata(x[ok]) - 0.5) / n)
    return out


def sex_code(sex: Sequence[str]) -> np.ndarray:
    """female -> 0, male -> 1, unknown -> NaN."""
    m = {"female": 0.0, "male": 1.0}
    return np.array([m.get(s, np.nan) for s in sex])


def _designs(p: np.ndarray, cov: Optional[np.ndarray], interactive: bool):
    n = p.shape[0]
    one = np.ones((n, 1))
    geno = p[:, 1:3]
    if cov is None:
        return np.hstack([one, geno]), one
    c = cov.reshape(n, 1)
    null = np.hstack([one, c])
    if interactive:
        return np.hstack([one, c, geno, c * geno]), null
    return np.hstack([one, c, geno]), null


def _rss(X: np.ndarray, Y: np.ndarray):
    beta, _, rank, _ = np.linalg.lstsq(X, Y, rcond=None)
    resid = Y - X @ beta
    return (resid ** 2).sum(axis=0), rank < X.shape[1]


def _lod(n: int, rss0, rss1, ysq) -> np.ndarray:
    rss0 = np.atleast_1d(np.asarray(rss0, dtype=float))
    rss1 = np.atleast_1d(np.asarray(rss1, dtype=float))
    ysq = np.broadcast_to(np.asarray(ysq, dtype=float), rss0.shape)
    out = np.zeros_like(rss0)
    # phenotype fully explained by the null model: no evidence either way
    live = rss0 > 1e-20 * np.maximum(ysq, 1e-300)
    # saturated fit (e.g. no more samples than parameters): residual is rounding noise
    exact = live & (rss1 <= 1e-20 * np.maximum(ysq, 1e-300))
    fit = live & ~exact
    with np.errstate(divide="ignore"):
        out[fit] = n / 2.0 * np.log10(rss0[fit] / rss1[fit])
    out[exact] = np.inf
    return np.maximum(out, 0.0)


def hk_lod_at(pheno, probs, covariate=None, interactive: bool = False) -> float:
    """LOD score for one phenotype at one locus.

    ``probs`` is samples x 3 genotype probabilities. ``covariate`` is an
    optional numeric vector (e.g. from :func:`sex_code`); with
    ``interactive`` the genotype effects may differ by covariate value.
    Samples with a missing phenotype or covariate are dropped.
    """
    y = np.asarray(pheno, dtype=float)
    p = np.asarray(probs, dtype=float)
    ok = ~np.isnan(y)
    cov = None
    if covariate is not None:
        cov = np.asarray(covariate, dtype=float)
        ok &= ~np.isnan(cov)
        cov = cov[ok]
    y, p = y[ok], p[ok]
    X1, X0 = _designs(p, cov, interactive)
    rss1, deficient = _rss(X1, y[:, None])
    rss0, _ = _rss(X0, y[:, None])
    if deficient:
        warnings.warn("rank-deficient design; pseudo-inverse fit used", RankDeficientWarning, stacklevel=2)
    return float(_lod(len(y), rss0, rss1, (y ** 2).sum())[0])


def lod_many(Y: np.ndarray, p: np.ndarray, cov=None, interactive=False) -> np.ndarray:
    """LOD for each column of ``Y`` (complete data, no NaN) at one locus."""
    X1, X0 = _designs(p, cov, interactive)
    rss1, _ = _rss(X1, Y)
    rss0, _ = _rss(X0, Y)
    return _lod(Y.shape[0], rss0, rss1, (Y ** 2).sum(axis=0))


@dataclass(frozen=True)
class LocalEqtl:
    tissue: str
    chrom: str
    locus: int
    locus_id: str
    position: float
    probe_ids: tuple
    lods: tuple


def _shared_rows(expr: ExpressionSet, probs: GenoProbTensor):
    pidx = probs.index()
    keep = [i for i, s in enumerate(expr.sample_ids) if s in pidx]
    return keep, [pidx[expr.sample_ids[i]] for i in keep]


def select_local_eqtl(expr: ExpressionSet, annot: ProbeAnnotation, probs: GenoProbTensor,
                      grid: Optional[PositionGrid] = None, lod_select: float = 100.0,
                      max_probes: int = 3) -> list:
    """Probes with a strong association at the grid locus nearest their own location.

    Each located autosomal probe is tested at a single locus. Probes above
    ``lod_select`` are grouped by locus; when more than ``max_probes`` share a
    locus only the strongest are kept.
    """
    grid = grid or probs.grid
    erows, prows = _shared_rows(expr, probs)
    if not erows:
        return []
    by_locus = {}
    for j, pid in enumerate(expr.probe_ids):
        info = annot.lookup().get(pid)
        if info is None or not info.located or info.chromosome not in probs.probs:
            continue
        cg = grid[info.chromosome]
        by_locus.setdefault((info.chromosome, cg.nearest(info.position)), []).append(j)

    vals = expr.values[erows]
    out = []
    for (chrom, locus), cols in sorted(by_locus.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        p = probs.probs[chrom][prows, locus, :]
        Y = vals[:, cols]
        complete = ~np.isnan(Y).any(axis=0)
        lods = np.zeros(len(cols))
        if complete.any():
            lods[complete] = lod_many(Y[:, complete], p)
        for k in np.flatnonzero(~complete):
            lods[k] = hk_lod_at(Y[:, k], p) if (~np.isnan(Y[:, k])).sum() > 3 else 0.0
        hits = [(lods[k], expr.probe_ids[cols[k]]) for k in range(len(cols)) if lods[k] > lod_select]
        if not hits:
            continue
        hits.sort(key=lambda t: (-t[0], t[1]))
        hits = hits[:max_probes]
        cg = grid[chrom]
        out.append(LocalEqtl(expr.tissue, chrom, locus, cg.locus_ids[locus], float(cg.positions[locus]),
                             tuple(h[1] for h in hits), tuple(float(h[0]) for h in hits)))
    return out


def support_interval(positions, lod, drop: float = 2.0):
    """Peak index and the contiguous grid range around it with LOD >= peak - ``drop``."""
    lod = np.asarray(lod, dtype=float)
    k = int(np.argmax(lod))
    cut = lod[k] - drop
    lo = k
    while lo > 0 and lod[lo - 1] >= cut:
        lo -= 1
    hi = k
    while hi < len(lod) - 1 and lod[hi + 1] >= cut:
        hi += 1
    return k, (float(positions[lo]), float(positions[hi]))


@dataclass(frozen=True)
class ChromScan:
    chrom: str
    locus_ids: tuple
    positions: np.ndarray
    lod: np.ndarray
    peak: int
    peak_lod: float
    interval: tuple  # (lo cM, hi cM)

    @property
    def peak_position(self) -> float:
        return float(self.positions[self.peak])


@dataclass(frozen=True)
class ScanResult:
    chroms: tuple  # of ChromScan
    n: int = 0

    def __getitem__(self, chrom: str) -> ChromScan:
        for c in self.chroms:
            if c.chrom == chrom:
                return c
        raise KeyError(chrom)

    @property
    def max_lod(self) -> float:
        return max((c.peak_lod for c in self.chroms), default=0.0)

    def peaks_above(self, threshold: float) -> list:
        return [c.chrom for c in self.chroms if c.peak_lod > threshold]

    def rows(self):
        for c in self.chroms:
            for lid, pos, v in zip(c.locus_ids, c.positions, c.lod):
                yield lid, c.chrom, float(pos), float(v)


def genome_scan(pheno, probs: GenoProbTensor, grid: Optional[PositionGrid] = None, sex=None,
                interactive: bool = True, drop: float = 2.0) -> ScanResult:
    """Haley-Knott LOD curves over every autosomal grid locus.

    ``pheno`` and ``sex`` are aligned to ``probs.sample_ids``. With ``sex``
    given, samples of unknown sex are dropped and sex enters as a covariate
    (interacting with genotype when ``interactive``).
    """
    grid = grid or probs.grid
    y = np.asarray(pheno, dtype=float)
    ok = ~np.isnan(y)
    cov = None
    if sex is not None:
        cov = sex_code(sex)
        ok &= ~np.isnan(cov)
        cov = cov[ok]
    y = y[ok]
    X0 = _designs(np.zeros((len(y), 3)), cov, interactive)[1]
    rss0, _ = _rss(X0, y[:, None])
    ysq = (y ** 2).sum()
    chroms = []
    for cg in grid.autosomes:
        P = probs.probs[cg.chrom][ok]
        lod = np.empty(len(cg))
        for l in range(len(cg)):
            X1 = _designs(P[:, l, :], cov, interactive)[0]
            rss1, _ = _rss(X1, y[:, None])
            lod[l] = _lod(len(y), rss0, rss1, ysq)[0]
        k, iv = support_interval(cg.positions, lod, drop)
        chroms.append(ChromScan(cg.chrom, cg.locus_ids, cg.positions, lod, k, float(lod[k]), iv))
    return ScanResult(tuple(chroms), int(len(y)))


def classify_local_trans(scan: ScanResult, probe: ProbeInfo, lod_peak: float = 5.0) -> dict:
    """Label each chromosome's peak 'local', 'trans' or 'none' for one probe."""
    out = {}
    for c in scan.chroms:
        if not probe.located or c.peak_lod < lod_peak:
            out[c.chrom] = "none"
        elif c.chrom == probe.chromosome and c.interval[0] <= probe.position <= c.interval[1]:
            out[c.chrom] = "local"
        else:
            out[c.chrom] = "trans"
    return out
