"""End-to-end orchestration: genotype probabilities, both alignments, corrections, forensics, scans."""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import fileio
from .config import Thresholds
from .expr_align import ExpressionAlignment, align_expression
from .geno_align import DnaAlignment, align_dna
from .genoprob import GenoProbTensor, calc_genoprob, insert_pseudomarkers
from .model import Dataset, ValidationReport, validate_dataset
from .plate import detect_patterns, displacement_warnings, emit_plate_diagram
from .relabel import (AuditReport, CorrectionSummary, apply_corrections, check_x_sex, find_genotype_duplicates,
                      infer_expression_sex, post_correction_audit, x_markers)
from .scan import ScanResult, genome_scan, normal_quantile_transform

log = logging.getLogger(__name__)


def validate(ds: Dataset) -> ValidationReport:
    return validate_dataset(ds.geno, ds.gmap, ds.expr, ds.annot, ds.plate)


def genoprob(ds: Dataset, th: Thresholds) -> GenoProbTensor:
    grid = insert_pseudomarkers(ds.gmap, th.step_cM)
    return calc_genoprob(ds.geno, grid, th.error_rate)


def run_expression(ds: Dataset, th: Thresholds, threads: Optional[int] = None) -> ExpressionAlignment:
    return align_expression(ds.expr, th.probe_corr_min, th.expr_self_min, th.expr_other_min, th.expr_gap_min,
                            th.dup_min, threads, th.expr_rounds)


def run_dna(ds: Dataset, probs: GenoProbTensor, th: Thresholds, threads: Optional[int] = None):
    """DNA alignment against ``ds.expr``; returns ``(DnaAlignment, genotype duplicate pairs)``."""
    dups = find_genotype_duplicates(ds.geno, th.identity_min)
    dup_pairs = {frozenset((a, b)) for a, b, *_ in dups}
    res = align_dna(ds.expr, ds.annot, probs, th.lod_select, th.p_obs_min, th.knn_k, th.knn_vote_min,
                    th.filter_min, th.dna_self_min, th.dna_other_min, th.dna_gap_min, dup_pairs, threads)
    return res, dups


def sex_checks(ds: Dataset, th: Thresholds, xist_probe: str, y_probes: Sequence[str]) -> dict:
    """X-genotype and expression sex consistency of the data as labelled."""
    out = {"x_genotype": {}, "expression": {}}
    xm = [m for m in x_markers(ds.gmap) if m in set(ds.geno.marker_ids)]
    if xm:
        res = check_x_sex(ds.geno.columns(xm), ds.geno.sex, th.sex_min_incompatible)
        out["x_genotype"] = {s: r for s, r in zip(ds.geno.sample_ids, res) if r in ("swap_suspect", "single_error")}
    sex = ds.geno.sex_of()
    for e in ds.expr:
        inf = infer_expression_sex(e, xist_probe, y_probes)
        bad = {s: v for s, v in inf.items() if v != "ambiguous" and sex.get(s) in ("female", "male") and sex[s] != v}
        out["expression"][e.tissue] = dict(sorted(bad.items()))
    out["x_genotype"] = dict(sorted(out["x_genotype"].items()))
    return out


def scan_trait(ds: Dataset, probs: GenoProbTensor, trait: str, th: Thresholds) -> ScanResult:
    """Normal-quantile transformed trait against genotype probabilities, sex as interacting covariate."""
    pi = ds.pheno.index()
    col = ds.pheno.probe_index()[trait]
    y = np.array([ds.pheno.values[pi[s], col] if s in pi else np.nan for s in probs.sample_ids])
    sex = [ds.geno.sex_of().get(s, "unknown") for s in probs.sample_ids]
    return genome_scan(normal_quantile_transform(y), probs, probs.grid, sex, True, th.support_drop)


def scan_summary(scan: ScanResult, th: Thresholds) -> dict:
    # JSON has no infinity; a saturated fit is reported as null
    return {"n": scan.n, "max_lod": scan.max_lod if np.isfinite(scan.max_lod) else None, "peaks": scan.peaks_above(th.lod_peak),
            "intervals": {c.chrom: [c.interval[0], c.interval[1]] for c in scan.chroms
                          if c.peak_lod > th.lod_peak}}


@dataclass
class PipelineResult:
    dataset: Dataset
    thresholds: Thresholds
    validation: ValidationReport
    probs: GenoProbTensor
    expression: ExpressionAlignment
    expr_corrected: Dataset
    dna: DnaAlignment
    genotype_duplicates: list
    corrected: Dataset
    summary: CorrectionSummary
    plate_findings: list
    plate_warnings: list
    sex_before: dict
    audit: AuditReport
    scans: dict = field(default_factory=dict)  # trait -> (before, after)

    @property
    def expr_decisions(self) -> dict:
        return self.expression.decisions()

    @property
    def dna_decisions(self) -> list:
        return self.dna.decisions


def run_all(ds: Dataset, th: Optional[Thresholds] = None, threads: Optional[int] = None, xist_probe: str = "Xist",
            y_probes: Sequence[str] = (), traits: Optional[Sequence[str]] = None,
            exclude: Sequence[str] = ()) -> PipelineResult:
    th = th or Thresholds()
    report = validate(ds)
    for f in report.errors:
        log.warning("validation: %s %s %s", f.kind, f.subject, f.detail)
    sex = ds.geno.sex_of()
    sex_before = sex_checks(ds, th, xist_probe, y_probes)
    probs = genoprob(ds, th)
    log.info("genotype probabilities: %d samples, %d loci", len(probs.sample_ids),
             sum(len(cg) for cg in probs.grid.autosomes))
    ex = run_expression(ds, th, threads)
    ds1, _ = apply_corrections(ds, ex.decisions())
    dna, dups = run_dna(ds1, probs, th, threads)
    ds2, summary = apply_corrections(ds, ex.decisions(), dna.decisions, exclude)
    findings, warnings = [], []
    if ds.plate is not None:
        findings = detect_patterns(dna.decisions, ds.plate, th.fill_order)
        warnings = displacement_warnings(dna.decisions, ds.plate)
    audit = post_correction_audit(ds2, xist_probe, y_probes, th.sex_min_incompatible, sex)
    scans = {}
    if ds.pheno is not None:
        probs2 = genoprob(ds2, th)
        for t in (traits if traits is not None else ds.pheno.probe_ids):
            scans[t] = (scan_trait(ds, probs, t, th), scan_trait(ds2, probs2, t, th))
    return PipelineResult(ds, th, report, probs, ex, ds1, dna, dups, ds2, summary, findings, warnings,
                          sex_before, audit, scans)


def dups_json(ex: ExpressionAlignment) -> dict:
    return {t: [[a, b, r] for a, b, r in ta.duplicates] for t, ta in ex.tissues.items()}


def report_header(th: Thresholds) -> dict:
    return {"tool": "lineup-forge", "thresholds": th.as_dict()}


def write_scans(scans: dict, out_dir: str) -> list:
    sdir = os.path.join(out_dir, "scans")
    os.makedirs(sdir, exist_ok=True)
    written = []
    for t, (before, after) in scans.items():
        for tag, sc in (("before", before), ("after", after)):
            p = os.path.join(sdir, f"{t}_{tag}.csv")
            fileio.write_scan(sc, p)
            written.append(p)
    return written


def write_outputs(res: PipelineResult, out_dir: str, manifest=None) -> list:
    th = res.thresholds
    sims = {f"expression_{t}": ta.similarity for t, ta in res.expression.tissues.items()}
    sims.update({f"dna_{t}": a.similarity() for t, a in res.dna.tissues.items()})
    sims["dna_combined"] = res.dna.combined
    extra = {
        "expression_duplicates": dups_json(res.expression),
        "genotype_duplicates": [list(d) for d in res.genotype_duplicates],
        "dna_training_excluded": {t: list(a.excluded) for t, a in res.dna.tissues.items()},
        "sex_checks": res.sex_before,
        "summary": res.summary.as_dict(),
        "plate_warnings": list(res.plate_warnings),
        "audit": res.audit.as_dict(),
        "validation": [[f.kind, f.subject, f.severity, f.detail] for f in res.validation.findings],
    }
    summaries = {t: {"before": scan_summary(b, th), "after": scan_summary(a, th)} for t, (b, a) in res.scans.items()}
    kw = {}
    if manifest is not None:
        kw = dict(xist_probe=manifest.xist_probe, y_probes=manifest.y_probes, seed=manifest.seed)
    written = fileio.write_report(out_dir, res.expr_decisions, res.dna_decisions, sims, res.plate_findings,
                                  summaries, None, report_header(th), extra)
    written += fileio.write_dataset(res.corrected, os.path.join(out_dir, "corrected"), thresholds=th, **kw)
    if res.dataset.plate is not None:
        written += emit_plate_diagram(res.plate_findings, res.dataset.plate, os.path.join(out_dir, "plates"))
    written += write_scans(res.scans, out_dir)
    return written
