"""Command-line interface: ``lineup-forge <subcommand> ...``.

Exit status is 0 on success, 1 on bad input (files, flags, manifest) and 2
on an internal error. Logs go to standard error, data to files.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import fields, replace

from . import fileio, pipeline
from .model import DataError
from .plate import detect_patterns, emit_plate_diagram
from .relabel import RelabelCollision, apply_corrections
from .simulate import (XIST, Y_PROBES, SimConfig, default_perturbations, inject_mixups, scan_perturbations,
                       simulate_dataset, write_simulation)

log = logging.getLogger("lineup_forge")


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _common(p, manifest=True, out=True):
    if manifest:
        p.add_argument("--manifest", required=True, help="dataset manifest (TOML)")
    if out:
        p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--threads", type=int, default=None, help="worker threads (default: all cores)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lineup-forge", description="Detect and correct sample mix-ups in genotype and "
                                                   "expression data from experimental crosses.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="write a synthetic dataset with injected mix-ups")
    _common(p, manifest=False)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--config", help="TOML file with a [simulate] table of SimConfig fields")
    p.add_argument("--scenario", choices=("default", "scan", "none"), default="default")
    p.add_argument("--n-samples", type=int, default=None)

    p = sub.add_parser("validate", help="check a dataset for structural problems")
    _common(p, out=False)

    p = sub.add_parser("align-expr", help="expression-array decisions")
    _common(p)

    p = sub.add_parser("align-dna", help="DNA-sample decisions")
    _common(p)
    p.add_argument("--no-expr-fix", action="store_true", help="skip the expression correction step")

    p = sub.add_parser("correct", help="apply a decisions file")
    _common(p)
    p.add_argument("--decisions", required=True)

    p = sub.add_parser("forensics", help="plate findings and SVG diagrams from a decisions file")
    _common(p)
    p.add_argument("--decisions", required=True)

    p = sub.add_parser("scan", help="genome scans before and after correction")
    _common(p)
    p.add_argument("--trait", action="append", help="trait column (repeatable; default: all)")
    p.add_argument("--decisions", help="decisions file (default: run both alignments)")

    p = sub.add_parser("run-all", help="the whole pipeline")
    _common(p)
    return ap


# ---------------------------------------------------------------------------


def _load(args):
    m = fileio.load_manifest(args.manifest)
    return m, fileio.load_dataset(m)


def _sim_config(args) -> SimConfig:
    cfg = SimConfig()
    if args.config:
        with open(args.config, "rb") as fh:
            try:
                doc = fileio.tomllib.load(fh).get("simulate", {})
            except fileio.tomllib.TOMLDecodeError as e:
                raise InputError(f"{args.config}: {e}") from None
        known = {f.name for f in fields(SimConfig)} - {"perturbations"}
        bad = sorted(set(doc) - known)
        if bad:
            raise InputError(f"{args.config}: unknown simulate key(s): {', '.join(bad)}")
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in doc.items()}
        cfg = replace(cfg, **kw)
    seed = os.environ.get("LINEUP_FORGE_SEED")
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    elif seed:
        cfg = replace(cfg, seed=int(seed))
    if args.n_samples is not None:
        cfg = replace(cfg, n_samples=args.n_samples)
    return cfg


def cmd_simulate(args):
    cfg = _sim_config(args)
    ds, _ = simulate_dataset(cfg)
    if args.scenario == "default":
        perts = default_perturbations(ds, cfg.seed)
    elif args.scenario == "scan":
        perts = scan_perturbations(ds, cfg.seed)
    else:
        perts = list(cfg.perturbations)
    pds, truth = inject_mixups(ds, perts)
    path = write_simulation(pds, truth, replace(cfg, perturbations=tuple(perts)), args.out)
    log.info("wrote %s", path)
    return 0


def cmd_validate(args):
    _, ds = _load(args)
    report = pipeline.validate(ds)
    for f in report.findings:
        print(f"{f.severity}\t{f.kind}\t{f.subject}\t{f.detail}")
    return 1 if report.errors else 0


def _header(m):
    return pipeline.report_header(m.thresholds)


def cmd_align_expr(args):
    m, ds = _load(args)
    ex = pipeline.run_expression(ds, m.thresholds, args.threads)
    sims = {f"expression_{t}": ta.similarity for t, ta in ex.tissues.items()}
    extra = {"expression_duplicates": pipeline.dups_json(ex)}
    fileio.write_report(args.out, ex.decisions(), [], sims, header=_header(m), extra=extra)
    return 0


def cmd_align_dna(args):
    m, ds = _load(args)
    th = m.thresholds
    probs = pipeline.genoprob(ds, th)
    expr_dec = {}
    sims = {}
    extra = {}
    ds1 = ds
    if not args.no_expr_fix:
        ex = pipeline.run_expression(ds, th, args.threads)
        expr_dec = ex.decisions()
        sims.update({f"expression_{t}": ta.similarity for t, ta in ex.tissues.items()})
        extra["expression_duplicates"] = pipeline.dups_json(ex)
        ds1, _ = apply_corrections(ds, expr_dec)
    dna, dups = pipeline.run_dna(ds1, probs, th, args.threads)
    sims.update({f"dna_{t}": a.similarity() for t, a in dna.tissues.items()})
    sims["dna_combined"] = dna.combined
    extra["genotype_duplicates"] = [list(d) for d in dups]
    fileio.write_report(args.out, expr_dec, dna.decisions, sims, header=_header(m), extra=extra)
    return 0


def cmd_correct(args):
    m, ds = _load(args)
    expr_dec, dna_dec = fileio.read_decisions(args.decisions)
    out, summary = apply_corrections(ds, expr_dec, dna_dec, m.exclude)
    fileio.write_dataset(out, args.out, thresholds=m.thresholds, xist_probe=m.xist_probe, y_probes=m.y_probes,
                         seed=m.seed)
    fileio.dump_json({"schema_version": fileio.SCHEMA_VERSION, "summary": summary.as_dict()},
                     os.path.join(args.out, "correction_summary.json"))
    return 0


def cmd_forensics(args):
    m, ds = _load(args)
    if ds.plate is None:
        raise InputError(f"{args.manifest}: no plate file given")
    _, dna_dec = fileio.read_decisions(args.decisions)
    findings = detect_patterns(dna_dec, ds.plate, m.thresholds.fill_order)
    os.makedirs(args.out, exist_ok=True)
    fileio.dump_json({"schema_version": fileio.SCHEMA_VERSION, "findings": [f.as_dict() for f in findings]},
                     os.path.join(args.out, "plate_findings.json"))
    emit_plate_diagram(findings, ds.plate, os.path.join(args.out, "plates"))
    return 0


def cmd_scan(args):
    m, ds = _load(args)
    th = m.thresholds
    if ds.pheno is None:
        raise InputError(f"{args.manifest}: no phenotypes file given")
    traits = args.trait or list(m.traits) or list(ds.pheno.probe_ids)
    missing = [t for t in traits if t not in ds.pheno.probe_index()]
    if missing:
        raise InputError(f"{m.phenotypes}: no trait column {missing[0]!r}")
    probs = pipeline.genoprob(ds, th)
    if args.decisions:
        expr_dec, dna_dec = fileio.read_decisions(args.decisions)
    else:
        ex = pipeline.run_expression(ds, th, args.threads)
        expr_dec = ex.decisions()
        ds1, _ = apply_corrections(ds, expr_dec)
        dna_dec = pipeline.run_dna(ds1, probs, th, args.threads)[0].decisions
    after, _ = apply_corrections(ds, expr_dec, dna_dec, m.exclude)
    probs2 = pipeline.genoprob(after, th)
    scans = {t: (pipeline.scan_trait(ds, probs, t, th), pipeline.scan_trait(after, probs2, t, th)) for t in traits}
    pipeline.write_scans(scans, args.out)
    summ = {t: {"before": pipeline.scan_summary(b, th), "after": pipeline.scan_summary(a, th)}
            for t, (b, a) in scans.items()}
    fileio.dump_json({"schema_version": fileio.SCHEMA_VERSION, "scans": summ}, os.path.join(args.out, "scans.json"))
    for t, s in summ.items():
        log.info("%s: max LOD %.2f before, %.2f after", t, s["before"]["max_lod"], s["after"]["max_lod"])
    return 0


def cmd_run_all(args):
    m, ds = _load(args)
    traits = list(m.traits) or None
    res = pipeline.run_all(ds, m.thresholds, args.threads, m.xist_probe, m.y_probes, traits, m.exclude)
    pipeline.write_outputs(res, args.out, m)
    c = res.summary.counts
    log.info("expression: %d fixable, %d duplicate; DNA: %d fixable, %d duplicate, %d unfixable",
             sum(v for k, v in c.items() if k == "expression:fixable"), c.get("expression:duplicate", 0),
             c.get("dna:fixable", 0), c.get("dna:duplicate", 0), c.get("dna:unfixable", 0))
    return 0


COMMANDS = {"simulate": cmd_simulate, "validate": cmd_validate, "align-expr": cmd_align_expr,
            "align-dna": cmd_align_dna, "correct": cmd_correct, "forensics": cmd_forensics, "scan": cmd_scan,
            "run-all": cmd_run_all}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.threads is not None and args.threads < 1:
        print("lineup-forge: error: --threads must be at least 1", file=sys.stderr)
        return 1
    try:
        return COMMANDS[args.command](args)
    except (InputError, DataError, RelabelCollision, FileNotFoundError, IsADirectoryError, PermissionError) as e:
        print(f"lineup-forge: error: {e}", file=sys.stderr)
        return 1
    except Exception:
        log.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
