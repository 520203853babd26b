"""Apply relabel decisions and run the independent sex and duplicate checks."""
from __future__ import annotations

import warnings
from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

import numpy as np

from .model import (Dataset, ExpressionSet, GeneticMap, Genotype, GenotypeMatrix, RelabelDecision)


class RelabelCollision(ValueError):
    pass


def find_genotype_duplicates(geno: GenotypeMatrix, identity_min: float = 0.98) -> list:
    """Sample pairs whose calls agree on at least ``identity_min`` of jointly typed markers.

    Returns ``(id_a, id_b, matches, typed, identity)`` with ``id_a < id_b``.
    """
    g = geno.calls
    if g.shape[0] < 2:
        return []
    onehot = np.concatenate([(g == c) for c in range(3)], axis=1).astype(np.float32)
    typed = (g >= 0).astype(np.float32)
    M = onehot @ onehot.T
    T = typed @ typed.T
    iu, ju = np.triu_indices(g.shape[0], k=1)
    m, t = M[iu, ju], T[iu, ju]
    with np.errstate(divide="ignore", invalid="ignore"):
        ident = np.where(t > 0, m / np.where(t > 0, t, 1), 0.0)
    out = []
    for k in np.flatnonzero((t > 0) & (ident >= identity_min)):
        a, b = sorted((geno.sample_ids[iu[k]], geno.sample_ids[ju[k]]))
        out.append((a, b, int(m[k]), int(t[k]), float(m[k] / t[k])))
    return sorted(out)


def x_markers(gmap: GeneticMap) -> list:
    return [m for c in gmap.x_chromosomes for m in c.marker_ids]


def check_x_sex(x_calls: np.ndarray, sex: Sequence[str], min_incompatible: int = 2) -> list:
    """Per-sample consistency of X genotypes with recorded sex.

    Females cannot carry BB on the X and males cannot be BR. Two or more
    incompatible calls suggest a swap; a single one is most likely a
    genotyping error. Samples typed RR everywhere fit either sex.
    """
    x_calls = np.asarray(x_calls)
    out = []
    for row, s in zip(x_calls, sex):
        typed = row[row >= 0]
        if s not in ("female", "male") or typed.size == 0:
            out.append("uninformative")
            continue
        bad_code = Genotype.BB if s == "female" else Genotype.BR
        bad = int((typed == bad_code).sum())
        if bad >= min_incompatible:
            out.append("swap_suspect")
        elif bad >= 1:
            out.append("single_error")
        elif np.all(typed == Genotype.RR):
            out.append("uninformative")
        else:
            out.append("consistent")
    return out


def _two_means(P: np.ndarray, iters: int = 100):
    # start from the extremes along the Xist - Y axis: deterministic
    score = P[:, 0] - P[:, 1]
    c = np.array([P[np.argmax(score)], P[np.argmin(score)]], dtype=float)
    lab = np.zeros(len(P), dtype=int)
    for _ in range(iters):
        d = ((P[:, None, :] - c[None]) ** 2).sum(axis=2)
        new = d.argmin(axis=1)
        if (new == 0).all() or (new == 1).all():
            break
        c = np.array([P[new == 0].mean(axis=0), P[new == 1].mean(axis=0)])
        if np.array_equal(new, lab):
            break
        lab = new
    return c, lab


def infer_expression_sex(expr: ExpressionSet, xist_probe: str, y_probes: Sequence[str],
                         margin: float = 0.1, min_separation: float = 4.0) -> dict:
    """Sex of each array from Xist against mean Y-gene expression.

    Two-means clustering in the (Xist, mean Y) plane; the high-Xist, low-Y
    cluster is female. Arrays whose distances to the two centres differ by
    less than ``margin`` times the centre separation are ambiguous, as are all
    arrays when the clusters are not separated by ``min_separation`` pooled
    within-cluster standard deviations.
    """
    pidx = expr.probe_index()
    amb = {s: "ambiguous" for s in expr.sample_ids}
    ys = [p for p in y_probes if p in pidx]
    if xist_probe not in pidx or not ys:
        return amb
    xist = expr.values[:, pidx[xist_probe]]
    with np.errstate(invalid="ignore"):
        y = np.nanmean(expr.values[:, [pidx[p] for p in ys]], axis=1) if len(ys) else np.full(len(xist), np.nan)
    P = np.column_stack([xist, y])
    ok = ~np.isnan(P).any(axis=1)
    if ok.sum() < 2:
        return amb
    Pk = P[ok]
    c, lab = _two_means(Pk)
    if (lab == 0).all() or (lab == 1).all():
        return amb
    female, male = (0, 1) if c[0, 0] - c[0, 1] > c[1, 0] - c[1, 1] else (1, 0)
    if not (c[female, 0] > c[male, 0] and c[female, 1] < c[male, 1]):
        return amb
    sep = float(np.linalg.norm(c[0] - c[1]))
    resid = Pk - c[lab]
    within = float(np.sqrt((resid ** 2).sum() / max(len(Pk) - 2, 1) / 2))
    if sep == 0 or sep < min_separation * within:
        return amb
    d = np.sqrt(((Pk[:, None, :] - c[None]) ** 2).sum(axis=2))
    out = dict(amb)
    for s, di in zip([s for s, k in zip(expr.sample_ids, ok) if k], d):
        if abs(di[female] - di[male]) < margin * sep:
            continue
        out[s] = "female" if di[female] < di[male] else "male"
    return out


def _decision_key(target: str, d: RelabelDecision):
    return (target, d.sample_id, d.verdict, d.new_label)


@dataclass
class CorrectionSummary:
    counts: dict = field(default_factory=dict)  # category -> n
    relabelled: dict = field(default_factory=dict)  # target -> [(old, new)]
    dropped: dict = field(default_factory=dict)  # target -> [ids]
    merged: dict = field(default_factory=dict)  # tissue -> [(dup, kept)]
    multi_tissue: list = field(default_factory=list)  # samples mislabelled in >1 tissue

    def as_dict(self) -> dict:
        return {
            "counts": dict(sorted(self.counts.items())),
            "relabelled": {k: [list(x) for x in v] for k, v in self.relabelled.items()},
            "dropped": {k: list(v) for k, v in self.dropped.items()},
            "merged": {k: [list(x) for x in v] for k, v in self.merged.items()},
            "multi_tissue": list(self.multi_tissue),
        }


def _relabel_expression(e: ExpressionSet, decisions: Sequence[RelabelDecision], summary: CorrectionSummary):
    by_id = {d.sample_id: d for d in decisions}
    groups = {}  # final label -> [(row, is_duplicate, source id)]
    relabelled, dropped, merged = [], [], []
    for i, sid in enumerate(e.sample_ids):
        d = by_id.get(sid)
        verdict = d.verdict if d is not None else "correct"
        if verdict == "unfixable":
            dropped.append(sid)
            continue
        label = d.new_label if verdict in ("fixable", "duplicate") else sid
        if verdict == "fixable":
            relabelled.append((sid, label))
        elif verdict == "duplicate":
            merged.append((sid, label))
        groups.setdefault(label, []).append((i, verdict == "duplicate", sid))
    for label, members in groups.items():
        primary = [sid for _, dup, sid in members if not dup]
        if len(primary) > 1:
            raise RelabelCollision(f"{e.tissue}: rows {primary[0]} and {primary[1]} both relabelled to {label}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN columns stay NaN
        values = np.array([np.nanmean(e.values[[i for i, _, _ in m]], axis=0) for m in groups.values()])
    summary.relabelled[e.tissue] = relabelled
    summary.dropped[e.tissue] = dropped
    summary.merged[e.tissue] = merged
    return ExpressionSet(e.tissue, list(groups), e.probe_ids, values.reshape(len(groups), len(e.probe_ids)))


def apply_corrections(ds: Dataset, expr_decisions: Optional[Mapping] = None,
                      dna_decisions: Optional[Sequence[RelabelDecision]] = None,
                      exclusions: Sequence[str] = ()):
    """Relabel, merge and drop rows as decided; returns ``(dataset, summary)``.

    Expression: fixable rows take their new label, duplicate arrays are
    averaged into the retained label, unfixable arrays (including possible
    mixtures) are dropped. DNA: fixable rows are relabelled; duplicate,
    unfixable, unverifiable and excluded rows are dropped. Sex stays with
    the animal label, not with the DNA. Decisions already applied to ``ds``
    are skipped, so applying the same decisions twice is a no-op.
    """
    expr_decisions = dict(expr_decisions or {})
    dna_decisions = list(dna_decisions or [])
    applied = set(ds.applied)
    summary = CorrectionSummary()
    counts = Counter()

    new_expr = []
    involved = Counter()
    for e in ds.expr:
        todo = [d for d in expr_decisions.get(e.tissue, []) if _decision_key(e.tissue, d) not in applied]
        for d in todo:
            counts[f"expression:{d.verdict}"] += 1
            if d.verdict in ("fixable", "duplicate"):
                involved[d.sample_id] += 1
        active = [d for d in todo if d.verdict != "correct" and d.verdict != "unverifiable"]
        if active:
            e = _relabel_expression(e, active, summary)
        applied.update(_decision_key(e.tissue, d) for d in todo)
        new_expr.append(e)
    summary.multi_tissue = sorted(s for s, n in involved.items() if n > 1)

    geno = ds.geno
    sex_table = geno.sex_of()
    todo = [d for d in dna_decisions if _decision_key("dna", d) not in applied]
    excl = [s for s in exclusions if ("dna", s, "excluded", None) not in applied]
    if todo or excl:
        by_id = {d.sample_id: d for d in todo}
        keep, labels, relabelled, dropped = [], [], [], []
        for i, sid in enumerate(geno.sample_ids):
            d = by_id.get(sid)
            if sid in excl:
                dropped.append(sid)
                continue
            if d is None or d.verdict == "correct":
                keep.append(i)
                labels.append(sid)
            elif d.verdict == "fixable":
                keep.append(i)
                labels.append(d.new_label)
                relabelled.append((sid, d.new_label))
            else:
                dropped.append(sid)
        c = Counter(labels)
        clash = [lab for lab, n in c.items() if n > 1]
        if clash:
            lab = clash[0]
            src = [geno.sample_ids[i] for i, x in zip(keep, labels) if x == lab]
            raise RelabelCollision(f"DNA rows {src[0]} and {src[1]} both relabelled to {lab}")
        geno = geno.take(keep, labels, [sex_table.get(x, "unknown") for x in labels])
        summary.relabelled["dna"] = relabelled
        summary.dropped["dna"] = dropped
        for d in todo:
            counts[f"dna:{d.verdict}"] += 1
        counts["dna:excluded"] += len(excl)
        applied.update(_decision_key("dna", d) for d in todo)
        applied.update(("dna", s, "excluded", None) for s in excl)
    summary.counts = dict(counts)
    return replace(ds, geno=geno, expr=tuple(new_expr), applied=frozenset(applied)), summary


@dataclass
class AuditReport:
    x_sex: dict = field(default_factory=dict)  # sample -> finding (suspects only)
    expression_sex: dict = field(default_factory=dict)  # tissue -> {sample: inferred sex} mismatches

    @property
    def count(self) -> int:
        return len(self.x_sex) + sum(len(v) for v in self.expression_sex.values())

    def as_dict(self) -> dict:
        return {"x_sex_suspects": dict(sorted(self.x_sex.items())),
                "expression_sex_mismatches": {t: dict(sorted(v.items())) for t, v in self.expression_sex.items()},
                "count": self.count}


def post_correction_audit(ds: Dataset, xist_probe: str = "Xist", y_probes: Sequence[str] = (),
                          min_incompatible: int = 2, sex_table: Optional[Mapping] = None) -> AuditReport:
    """Re-run the X-genotype and expression sex checks; report what is still inconsistent."""
    report = AuditReport()
    geno = ds.geno
    sex_table = dict(sex_table) if sex_table is not None else geno.sex_of()
    xm = [m for m in x_markers(ds.gmap) if m in set(geno.marker_ids)]
    if xm and geno.n_samples:
        res = check_x_sex(geno.columns(xm), geno.sex, min_incompatible)
        report.x_sex = {s: r for s, r in zip(geno.sample_ids, res) if r == "swap_suspect"}
    for e in ds.expr:
        inferred = infer_expression_sex(e, xist_probe, y_probes)
        bad = {s: v for s, v in inferred.items()
               if v != "ambiguous" and sex_table.get(s, "unknown") in ("female", "male")
               and sex_table[s] != v}
        if bad:
            report.expression_sex[e.tissue] = bad
    return report
