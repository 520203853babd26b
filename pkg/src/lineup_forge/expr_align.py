"""Align expression arrays across tissues.

For each tissue pair the probes that correlate strongly across animals are
used to correlate every array in one tissue with every array in the other.
Per tissue, these are combined by the median over partner tissues and each
row of the resulting similarity matrix is judged.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .model import ExpressionSet, RelabelDecision, SimilarityMatrix


def pearson(x, y, mask=None) -> float:
    """Correlation over pairwise-complete entries; NaN if fewer than 3 pairs or no variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = ~(np.isnan(x) | np.isnan(y))
    if mask is not None:
        ok &= np.asarray(mask, dtype=bool)
    if ok.sum() < 3:
        return float("nan")
    xc = x[ok] - x[ok].mean()
    yc = y[ok] - y[ok].mean()
    sxx, syy = (xc * xc).sum(), (yc * yc).sum()
    if sxx <= 0 or syy <= 0:
        return float("nan")
    return float(np.clip((xc * yc).sum() / np.sqrt(sxx * syy), -1.0, 1.0))


def row_correlations(X: np.ndarray, Y: np.ndarray, min_pairs: int = 3) -> np.ndarray:
    """Pearson correlation of every row of X with every row of Y (NaN = missing)."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    mx, my = ~np.isnan(X), ~np.isnan(Y)
    if mx.all() and my.all():
        xc = X - X.mean(axis=1, keepdims=True)
        yc = Y - Y.mean(axis=1, keepdims=True)
        nx = np.sqrt((xc * xc).sum(axis=1))
        ny = np.sqrt((yc * yc).sum(axis=1))
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (xc @ yc.T) / np.outer(nx, ny)
        bad = np.outer(nx <= 1e-12 * (1 + np.abs(X).max(axis=1)), np.ones(len(Y), bool))
        bad |= np.outer(np.ones(len(X), bool), ny <= 1e-12 * (1 + np.abs(Y).max(axis=1)))
        if X.shape[1] < min_pairs:
            bad[:] = True
        r[bad] = np.nan
        return np.clip(r, -1.0, 1.0)
    mxf, myf = mx.astype(float), my.astype(float)
    x0, y0 = np.where(mx, X, 0.0), np.where(my, Y, 0.0)
    n = mxf @ myf.T
    sx, sy = x0 @ myf.T, mxf @ y0.T
    sxx, syy = (x0 * x0) @ myf.T, mxf @ (y0 * y0).T
    sxy = x0 @ y0.T
    with np.errstate(divide="ignore", invalid="ignore"):
        cov = sxy - sx * sy / n
        vx = sxx - sx * sx / n
        vy = syy - sy * sy / n
        r = cov / np.sqrt(vx * vy)
    bad = (n < min_pairs) | (vx <= 1e-12 * np.maximum(sxx, 1e-300)) | (vy <= 1e-12 * np.maximum(syy, 1e-300))
    r[bad] = np.nan
    return np.clip(r, -1.0, 1.0)


def column_correlations(X: np.ndarray, Y: np.ndarray, min_pairs: int = 3) -> np.ndarray:
    """Correlation between matching columns of X and Y across rows, pairwise-complete."""
    ok = ~(np.isnan(X) | np.isnan(Y))
    n = ok.sum(axis=0).astype(float)
    x0, y0 = np.where(ok, X, 0.0), np.where(ok, Y, 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mxv, myv = x0.sum(axis=0) / n, y0.sum(axis=0) / n
        xc, yc = np.where(ok, X - mxv, 0.0), np.where(ok, Y - myv, 0.0)
        sxx, syy = (xc * xc).sum(axis=0), (yc * yc).sum(axis=0)
        r = (xc * yc).sum(axis=0) / np.sqrt(sxx * syy)
    r[(n < min_pairs) | (sxx <= 0) | (syy <= 0)] = np.nan
    return np.clip(r, -1.0, 1.0)


@dataclass(frozen=True)
class TissuePairProbes:
    tissues: tuple  # (s, t)
    probe_ids: tuple
    correlations: tuple


def select_correlated_probes(expr_s: ExpressionSet, expr_t: ExpressionSet,
                             threshold: float = 0.75) -> TissuePairProbes:
    """Probes whose between-tissue correlation across shared animals exceeds ``threshold``."""
    tidx = expr_t.index()
    samples = [s for s in expr_s.sample_ids if s in tidx]
    tp = expr_t.probe_index()
    probes = [p for p in expr_s.probe_ids if p in tp]
    if len(samples) < 3 or not probes:
        return TissuePairProbes((expr_s.tissue, expr_t.tissue), (), ())
    X = expr_s.rows(samples)[:, [expr_s.probe_index()[p] for p in probes]]
    Y = expr_t.rows(samples)[:, [tp[p] for p in probes]]
    r = column_correlations(X, Y)
    keep = [k for k in range(len(probes)) if r[k] > threshold]
    return TissuePairProbes((expr_s.tissue, expr_t.tissue), tuple(probes[k] for k in keep),
                            tuple(float(r[k]) for k in keep))


def cross_tissue_similarity(expr_s: ExpressionSet, expr_t: ExpressionSet,
                            probes: TissuePairProbes) -> SimilarityMatrix:
    """Correlation of each tissue-s array with each tissue-t array over the selected probes."""
    if not probes.probe_ids:
        raise ValueError(f"no selected probes for {expr_s.tissue}/{expr_t.tissue}")
    X = expr_s.probe_columns(probes.probe_ids)
    Y = expr_t.probe_columns(probes.probe_ids)
    return SimilarityMatrix(expr_s.sample_ids, expr_t.sample_ids, row_correlations(X, Y))


def combine_median(similarities: Sequence[SimilarityMatrix]) -> SimilarityMatrix:
    """Entrywise median over the available tissue pairs.

    All inputs share the same rows; columns are the union of their columns
    in order of first appearance. Cells with no available pair stay missing.
    """
    similarities = list(similarities)
    rows = similarities[0].row_ids
    cols, seen = [], set()
    for sm in similarities:
        if sm.row_ids != rows:
            raise ValueError("combine_median needs matrices with identical rows")
        for c in sm.col_ids:
            if c not in seen:
                seen.add(c)
                cols.append(c)
    cidx = {c: j for j, c in enumerate(cols)}
    stack = np.full((len(similarities), len(rows), len(cols)), np.nan)
    for k, sm in enumerate(similarities):
        stack[k][:, [cidx[c] for c in sm.col_ids]] = sm.scores
    avail = ~np.isnan(stack)
    med = np.full((len(rows), len(cols)), np.nan)
    any_avail = avail.any(axis=0)
    if any_avail.any():
        med[any_avail] = np.nanmedian(stack[:, any_avail], axis=0)
    return SimilarityMatrix(rows, cols, med, similarities[0].value_range)


def _row_evidence(sim: SimilarityMatrix, i: int, cidx: dict):
    sid = sim.row_ids[i]
    row = sim.scores[i]
    j_self = cidx.get(sid)
    self_val = float(row[j_self]) if j_self is not None else float("nan")
    cand = [(float(v), c) for c, v in zip(sim.col_ids, row) if c != sid and not np.isnan(v)]
    # highest first, ties to the lexicographically smaller id
    cand.sort(key=lambda t: (-t[0], t[1]))
    mx = cand[0][0] if cand else float("nan")
    second = cand[1][0] if len(cand) > 1 else float("nan")
    arg = cand[0][1] if cand else None
    return self_val, mx, second, arg


# thresholds are met by values equal to them up to rounding (1.0 - 0.8 < 0.2 in floating point)
_TOL = 1e-9


def decide_labels(sim: SimilarityMatrix, self_min: float = 0.8, other_min: float = 0.8,
                  gap_min: float = 0.1) -> list:
    """One :class:`RelabelDecision` per row of a self-vs-other similarity matrix.

    Rows the diagonal supports are correct. Otherwise a row whose two
    largest off-diagonal values both reach ``other_min`` but are within
    ``gap_min`` of each other is treated as a possible mixture and never
    relabelled.
    """
    cidx = {c: j for j, c in enumerate(sim.col_ids)}
    out = []
    for i, sid in enumerate(sim.row_ids):
        self_val, mx, second, arg = _row_evidence(sim, i, cidx)
        ev = (self_val, mx, second, arg)
        strong = not np.isnan(mx) and mx >= other_min - _TOL
        clear = np.isnan(second) or mx - second >= gap_min - _TOL
        mixture = strong and not clear and second >= other_min - _TOL
        if not np.isnan(self_val) and (np.isnan(mx) or self_val >= mx):
            out.append(RelabelDecision(sid, "correct", None, ev))
        elif not np.isnan(self_val) and self_val >= self_min - _TOL:
            out.append(RelabelDecision(sid, "correct", None, ev, ("self_below_max",)))
        elif mixture:
            out.append(RelabelDecision(sid, "unfixable", None, ev, ("possible_mixture",)))
        elif strong and clear:
            out.append(RelabelDecision(sid, "fixable", arg, ev))
        elif np.isnan(self_val) and not strong:
            out.append(RelabelDecision(sid, "unverifiable", None, ev))
        else:
            out.append(RelabelDecision(sid, "unfixable", None, ev, ("no_clear_match",) if strong else ()))
    return out


def resolve_targets(decisions: Sequence[RelabelDecision], dup_pairs=None) -> list:
    """Settle fixable decisions that point at a label already in use.

    A fixable row whose target keeps its own label (or is claimed by a
    stronger row) becomes a duplicate of that target when the two rows are
    known duplicates (``dup_pairs``, a set of frozensets; ``None`` accepts
    any), otherwise it is marked unfixable.
    """
    def is_dup(a, b):
        return dup_pairs is None or frozenset((a, b)) in dup_pairs

    held = {d.sample_id for d in decisions if d.verdict in ("correct", "unverifiable")}
    claims = {}
    for d in decisions:
        if d.verdict == "fixable":
            claims.setdefault(d.new_label, []).append(d)
    winner = {}
    for label, ds in claims.items():
        if label in held:
            continue
        ds = sorted(ds, key=lambda d: (-d.evidence[1], d.sample_id))
        winner[label] = ds[0].sample_id

    out = []
    for d in decisions:
        if d.verdict != "fixable":
            out.append(d)
            continue
        t = d.new_label
        if t not in held and winner.get(t) == d.sample_id:
            out.append(d)
            continue
        # the row that keeps (or wins) the label is the one this row duplicates
        keeper = t if t in held else winner[t]
        if is_dup(d.sample_id, keeper):
            out.append(RelabelDecision(d.sample_id, "duplicate", t, d.evidence, d.flags))
        else:
            flag = "target_taken" if t in held else "target_contested"
            out.append(RelabelDecision(d.sample_id, "unfixable", None, d.evidence, d.flags + (flag,)))
    return out


def decide_expression_labels(sim: SimilarityMatrix, self_min: float = 0.8, other_min: float = 0.8,
                             gap_min: float = 0.1) -> list:
    return decide_labels(sim, self_min, other_min, gap_min)


def detect_within_tissue_duplicates(expr_s: ExpressionSet, probe_ids: Sequence[str],
                                    dup_min: float = 0.95) -> list:
    """Pairs of arrays in one tissue correlating at least ``dup_min`` over ``probe_ids``.

    Returns ``(id_a, id_b, r)`` with ``id_a < id_b``, sorted.
    """
    if len(expr_s.sample_ids) < 2 or not probe_ids:
        return []
    X = expr_s.probe_columns(list(probe_ids))
    r = row_correlations(X, X)
    iu, ju = np.triu_indices(len(expr_s.sample_ids), k=1)
    hit = r[iu, ju] >= dup_min
    out = []
    for i, j in zip(iu[hit], ju[hit]):
        a, b = sorted((expr_s.sample_ids[i], expr_s.sample_ids[j]))
        out.append((a, b, float(r[i, j])))
    return sorted(out)


@dataclass
class TissueAlignment:
    tissue: str
    similarity: SimilarityMatrix
    decisions: list
    duplicates: list
    probes: tuple  # union of selected probes for this tissue


@dataclass
class ExpressionAlignment:
    pairs: dict = field(default_factory=dict)  # (s, t) -> TissuePairProbes
    pair_similarity: dict = field(default_factory=dict)  # (s, t) -> SimilarityMatrix
    tissues: dict = field(default_factory=dict)  # tissue -> TissueAlignment

    def decisions(self) -> dict:
        return {t: ta.decisions for t, ta in self.tissues.items()}


def _align_round(expr: Sequence[ExpressionSet], probe_corr_min: float, self_min: float, other_min: float,
                 gap_min: float, dup_min: float, threads: Optional[int]) -> ExpressionAlignment:
    expr = list(expr)
    by_name = {e.tissue: e for e in expr}
    res = ExpressionAlignment()
    pairs = list(itertools.combinations([e.tissue for e in expr], 2))

    def work(pair):
        s, t = pair
        sel = select_correlated_probes(by_name[s], by_name[t], probe_corr_min)
        sim = cross_tissue_similarity(by_name[s], by_name[t], sel) if sel.probe_ids else None
        return sel, sim

    with ThreadPoolExecutor(max_workers=threads) as pool:
        done = list(pool.map(work, pairs))
    for (s, t), (sel, sim) in zip(pairs, done):
        res.pairs[(s, t)] = sel
        res.pairs[(t, s)] = TissuePairProbes((t, s), sel.probe_ids, sel.correlations)
        if sim is not None:
            res.pair_similarity[(s, t)] = sim
            res.pair_similarity[(t, s)] = SimilarityMatrix(sim.col_ids, sim.row_ids, sim.scores.T)

    for e in expr:
        s = e.tissue
        mats = [res.pair_similarity[(s, t.tissue)] for t in expr
                if t.tissue != s and (s, t.tissue) in res.pair_similarity]
        probes = []
        for t in expr:
            if t.tissue != s:
                probes.extend(p for p in res.pairs[(s, t.tissue)].probe_ids if p not in probes)
        if not mats:
            sim = SimilarityMatrix(e.sample_ids, (), np.empty((len(e.sample_ids), 0)))
        else:
            sim = combine_median(mats)
        dups = detect_within_tissue_duplicates(e, probes, dup_min)
        decisions = decide_expression_labels(sim, self_min, other_min, gap_min)
        decisions = resolve_targets(decisions, {frozenset((a, b)) for a, b, _ in dups})
        res.tissues[s] = TissueAlignment(s, sim, decisions, dups, tuple(probes))
    return res


def _provisional(e: ExpressionSet, decisions: Sequence[RelabelDecision]) -> ExpressionSet:
    """Rows moved to their decided labels; duplicate rows, and rows whose label was claimed, left out."""
    by_id = {d.sample_id: d for d in decisions}
    claimed = {d.new_label for d in decisions if d.verdict == "fixable"}
    keep, labels = [], []
    for i, sid in enumerate(e.sample_ids):
        d = by_id.get(sid)
        if d is not None and d.verdict == "duplicate":
            continue
        if sid in claimed and (d is None or d.verdict != "fixable"):
            continue
        keep.append(i)
        labels.append(d.new_label if d is not None and d.verdict == "fixable" else sid)
    return ExpressionSet(e.tissue, labels, e.probe_ids, e.values[keep])


def align_expression(expr: Sequence[ExpressionSet], probe_corr_min: float = 0.75,
                     self_min: float = 0.8, other_min: float = 0.8, gap_min: float = 0.1,
                     dup_min: float = 0.95, threads: Optional[int] = None, rounds: int = 2) -> ExpressionAlignment:
    """Run the full cross-tissue comparison and decide every array's label.

    With few tissues a mislabelled array also drags down the median self
    similarity of the correctly labelled arrays of the same animals in the
    other tissues. Later rounds therefore move the relabelled rows
    provisionally and re-judge every row that was not relabelled; rows
    relabelled in an earlier round keep that decision.
    """
    expr = list(expr)
    res = _align_round(expr, probe_corr_min, self_min, other_min, gap_min, dup_min, threads)
    final = res.decisions()
    for _ in range(rounds - 1):
        moved = {}
        for t, ds in final.items():
            claimed = {d.new_label for d in ds if d.verdict == "fixable"}
            moved[t] = {d.sample_id for d in ds if d.verdict in ("fixable", "duplicate") or d.sample_id in claimed}
        if not any(moved.values()):
            break
        current = [_provisional(e, final[e.tissue]) for e in expr]
        again = _align_round(current, probe_corr_min, self_min, other_min, gap_min, dup_min, threads).decisions()
        changed = False
        for t, ds in final.items():
            redo = {d.sample_id: d for d in again[t]}
            out = []
            for d in ds:
                r = redo.get(d.sample_id)
                if d.sample_id in moved[t] or r is None or (r.verdict, r.new_label) == (d.verdict, d.new_label):
                    out.append(d)
                else:
                    out.append(RelabelDecision(r.sample_id, r.verdict, r.new_label, r.evidence,
                                               r.flags + ("revised",)))
                    changed = True
            final[t] = out
        if not changed:
            break
    for t, ds in final.items():
        res.tissues[t].decisions = ds
    return res
