"""Readers and writers for every file the pipeline consumes or produces.

All tables are UTF-8 CSV with a header row. Missing genotypes are ``-``,
missing numbers ``NA``. Floats are written with ``repr`` so a write/parse
round trip is exact.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .config import Thresholds
from .model import (GENOTYPE_NAMES, GENOTYPE_TOKENS, WELL_RE, Chromosome, DataError, Dataset, ExpressionSet,
                    GeneticMap, GenotypeMatrix, PlateLayout, ProbeAnnotation, ProbeInfo, RelabelDecision,
                    SimilarityMatrix)

SCHEMA_VERSION = 1
_SEX_TOKENS = {"female": "female", "f": "female", "male": "male", "m": "male", "unknown": "unknown", "": "unknown",
               "na": "unknown"}


def _rows(path: str):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {lineno} has {len(row)} fields, header has {len(header)}")
            rows.append((lineno, [c.strip() for c in row]))
    return header, rows


def _expect_header(path, header, expected):
    if [h.lower() for h in header[:len(expected)]] != expected:
        raise DataError(f"{path}: header must start with {','.join(expected)}")


def _fmt(x: float) -> str:
    return "NA" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))


def _num(tok: str, path: str, lineno: int, col: str) -> float:
    if tok.upper() == "NA" or tok == "":
        return float("nan")
    try:
        v = float(tok)
    except ValueError:
        raise DataError(f"{path}: non-numeric value '{tok}' at row {lineno}, column {col}") from None
    if math.isinf(v) or math.isnan(v):
        raise DataError(f"{path}: non-finite value '{tok}' at row {lineno}, column {col}")
    return v


# ---------------------------------------------------------------------------
# genotypes


def parse_genotypes(path: str) -> GenotypeMatrix:
    header, rows = _rows(path)
    _expect_header(path, header, ["id", "sex"])
    markers = header[2:]
    seen = {}
    ids, sex, calls = [], [], np.empty((len(rows), len(markers)), dtype=np.int8)
    for r, (lineno, row) in enumerate(rows):
        sid = row[0]
        if sid in seen:
            raise DataError(f"{path}: duplicate sample id '{sid}' at rows {seen[sid]} and {lineno}")
        seen[sid] = lineno
        s = _SEX_TOKENS.get(row[1].lower())
        if s is None:
            raise DataError(f"{path}: unknown sex '{row[1]}' at row {lineno}")
        ids.append(sid)
        sex.append(s)
        for j, tok in enumerate(row[2:]):
            code = GENOTYPE_TOKENS.get(tok)
            if code is None:
                raise DataError(f"{path}: unknown genotype token '{tok}' at row {lineno}, marker {markers[j]}")
            calls[r, j] = code
    try:
        return GenotypeMatrix(ids, markers, calls, sex)
    except DataError as e:
        raise DataError(f"{path}: {e}") from None


def write_genotypes(geno: GenotypeMatrix, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "sex", *geno.marker_ids])
        for sid, s, row in zip(geno.sample_ids, geno.sex, geno.calls):
            w.writerow([sid, s, *(GENOTYPE_NAMES[int(c)] for c in row)])


# ---------------------------------------------------------------------------
# expression (and clinical phenotypes, same layout)


def parse_expression(path: str, tissue: str) -> ExpressionSet:
    header, rows = _rows(path)
    _expect_header(path, header, ["id"])
    probes = header[1:]
    seen = {}
    ids = []
    vals = np.empty((len(rows), len(probes)))
    for r, (lineno, row) in enumerate(rows):
        sid = row[0]
        if sid in seen:
            raise DataError(f"{path}: duplicate sample id '{sid}' at rows {seen[sid]} and {lineno}")
        seen[sid] = lineno
        ids.append(sid)
        for j, tok in enumerate(row[1:]):
            vals[r, j] = _num(tok, path, lineno, probes[j])
    try:
        return ExpressionSet(tissue, ids, probes, vals)
    except DataError as e:
        raise DataError(f"{path}: {e}") from None


def write_expression(expr: ExpressionSet, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *expr.probe_ids])
        for sid, row in zip(expr.sample_ids, expr.values):
            w.writerow([sid, *(_fmt(v) for v in row)])


# ---------------------------------------------------------------------------
# map, plate, annotation


def parse_map(path: str) -> GeneticMap:
    header, rows = _rows(path)
    _expect_header(path, header, ["marker", "chr", "pos_cm"])
    chroms = {}
    for lineno, row in rows:
        pos = _num(row[2], path, lineno, "pos_cM")
        if math.isnan(pos):
            raise DataError(f"{path}: missing position at row {lineno}")
        ms, ps = chroms.setdefault(row[1], ([], []))
        if ps and pos < ps[-1]:
            raise DataError(f"{path}: positions decrease on chromosome {row[1]} at row {lineno}")
        ms.append(row[0])
        ps.append(pos)
    try:
        return GeneticMap(tuple(Chromosome(c, ms, ps, c.upper() == "X") for c, (ms, ps) in chroms.items()))
    except DataError as e:
        raise DataError(f"{path}: {e}") from None


def write_map(gmap: GeneticMap, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["marker", "chr", "pos_cM"])
        for c in gmap.chromosomes:
            for m, p in zip(c.marker_ids, c.positions):
                w.writerow([m, c.name, repr(float(p))])


def parse_plate(path: str) -> PlateLayout:
    header, rows = _rows(path)
    _expect_header(path, header, ["id", "plate", "well"])
    wells = {}
    for lineno, row in rows:
        if not WELL_RE.match(row[2]):
            raise DataError(f"{path}: invalid well '{row[2]}' at row {lineno}")
        if row[0] in wells:
            raise DataError(f"{path}: duplicate sample id '{row[0]}' at row {lineno}")
        wells[row[0]] = (row[1], row[2])
    try:
        return PlateLayout(wells)
    except DataError as e:
        raise DataError(f"{path}: {e}") from None


def write_plate(layout: PlateLayout, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", "plate", "well"])
        for sid, (p, well) in layout.wells.items():
            w.writerow([sid, p, well])


def parse_probe_annotation(path: str) -> ProbeAnnotation:
    header, rows = _rows(path)
    _expect_header(path, header, ["probe", "chr", "pos_cm"])
    out = []
    for lineno, row in rows:
        if row[1] == "":
            out.append(ProbeInfo(row[0], None, None))
            continue
        pos = _num(row[2], path, lineno, "pos_cM")
        if math.isnan(pos):
            raise DataError(f"{path}: located probe {row[0]} lacks a position at row {lineno}")
        out.append(ProbeInfo(row[0], row[1], pos))
    try:
        return ProbeAnnotation(tuple(out))
    except DataError as e:
        raise DataError(f"{path}: {e}") from None


def write_probe_annotation(annot: ProbeAnnotation, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["probe", "chr", "pos_cM"])
        for p in annot.probes:
            w.writerow([p.probe_id, p.chromosome or "", "" if p.position is None else repr(float(p.position))])


# ---------------------------------------------------------------------------
# similarity matrices and scans


def write_similarity(sim: SimilarityMatrix, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["id", *sim.col_ids])
        for rid, row in zip(sim.row_ids, sim.scores):
            w.writerow([rid, *(_fmt(v) for v in row)])


def parse_similarity(path: str, value_range=(-1.0, 1.0)) -> SimilarityMatrix:
    e = parse_expression(path, "similarity")
    return SimilarityMatrix(e.sample_ids, e.probe_ids, e.values, value_range)


def write_scan(scan, path: str) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["locus", "chr", "pos_cM", "lod"])
        for lid, chrom, pos, lod in scan.rows():
            w.writerow([lid, chrom, repr(pos), repr(lod)])


# ---------------------------------------------------------------------------
# decisions


def _num_or_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else float(x)


def decision_to_dict(d: RelabelDecision) -> dict:
    s, mx, sec, arg = d.evidence
    return {"sample_id": d.sample_id, "verdict": d.verdict, "new_label": d.new_label,
            "evidence": {"self": _num_or_none(s), "max": _num_or_none(mx), "second": _num_or_none(sec),
                         "argmax": arg},
            "flags": list(d.flags)}


def decision_from_dict(m: Mapping) -> RelabelDecision:
    ev = m.get("evidence") or {}

    def f(x):
        return float("nan") if x is None else float(x)

    return RelabelDecision(m["sample_id"], m["verdict"], m.get("new_label"),
                           (f(ev.get("self")), f(ev.get("max")), f(ev.get("second")), ev.get("argmax")),
                           tuple(m.get("flags", ())))


def flat_decisions(expr_decisions: Mapping, dna_decisions: Sequence[RelabelDecision]) -> list:
    """Every decision in one list, each tagged with its grid (tissue name or "dna")."""
    out = []
    for t, ds in dict(expr_decisions).items():
        out.extend({"grid": t, **decision_to_dict(d)} for d in ds)
    out.extend({"grid": "dna", **decision_to_dict(d)} for d in dna_decisions)
    return out


def dump_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, allow_nan=False)
        fh.write("\n")


def read_decisions(path: str):
    """Returns ``(expression decisions by tissue, DNA decisions)`` from a decisions JSON."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"{path}: unsupported schema_version {doc.get('schema_version')!r}")
    expr = {t: [decision_from_dict(d) for d in ds] for t, ds in doc.get("expression_decisions", {}).items()}
    dna = [decision_from_dict(d) for d in doc.get("dna_decisions", [])]
    return expr, dna


def write_report(out_dir: str, expr_decisions: Mapping, dna_decisions: Sequence[RelabelDecision],
                 similarities: Mapping = (), plate_findings: Sequence = (), scan_summaries: Mapping = (),
                 corrected: Optional[Dataset] = None, header: Optional[Mapping] = None,
                 extra: Optional[Mapping] = None) -> list:
    """Write the full result set under ``out_dir``; returns the paths written.

    decisions.json (per-grid arrays plus a flat "decisions" list),
    similarity/<name>.csv, plate_findings.json, scans.json, and, when
    ``corrected`` is given, corrected/ CSVs plus a manifest.
    """
    os.makedirs(out_dir, exist_ok=True)
    written = []
    doc = {"schema_version": SCHEMA_VERSION}
    doc.update(header or {})
    doc["expression_decisions"] = {t: [decision_to_dict(d) for d in ds] for t, ds in dict(expr_decisions).items()}
    doc["dna_decisions"] = [decision_to_dict(d) for d in dna_decisions]
    doc["decisions"] = flat_decisions(expr_decisions, dna_decisions)
    doc.update(extra or {})
    p = os.path.join(out_dir, "decisions.json")
    dump_json(doc, p)
    written.append(p)
    similarities = dict(similarities)
    if similarities:
        sdir = os.path.join(out_dir, "similarity")
        os.makedirs(sdir, exist_ok=True)
        for name, sim in similarities.items():
            p = os.path.join(sdir, f"{name}.csv")
            write_similarity(sim, p)
            written.append(p)
    p = os.path.join(out_dir, "plate_findings.json")
    dump_json({"schema_version": SCHEMA_VERSION, "findings": [f.as_dict() for f in plate_findings]}, p)
    written.append(p)
    scan_summaries = dict(scan_summaries)
    if scan_summaries:
        p = os.path.join(out_dir, "scans.json")
        dump_json({"schema_version": SCHEMA_VERSION, "scans": scan_summaries}, p)
        written.append(p)
    if corrected is not None:
        written.extend(write_dataset(corrected, os.path.join(out_dir, "corrected")))
    return written


# ---------------------------------------------------------------------------
# manifest


@dataclass
class DatasetManifest:
    genotypes: str
    map: str
    annotation: str
    expression: dict  # tissue -> path, manifest order
    plate: Optional[str] = None
    phenotypes: Optional[str] = None
    exclude: list = field(default_factory=list)
    seed: Optional[int] = None
    thresholds: Thresholds = field(default_factory=Thresholds)
    xist_probe: str = "Xist"
    y_probes: tuple = ()
    traits: tuple = ()
    path: Optional[str] = None

    def __post_init__(self):
        if not self.expression:
            raise DataError("manifest needs at least one expression tissue")


_MANIFEST_KEYS = {"genotypes", "map", "annotation", "plate", "phenotypes", "exclude", "seed", "expression",
                  "thresholds", "sex", "traits"}


def load_manifest(path: str) -> DatasetManifest:
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as e:
            raise DataError(f"{path}: {e}") from None
    unknown = sorted(set(doc) - _MANIFEST_KEYS)
    if unknown:
        raise DataError(f"{path}: unknown manifest key(s): {', '.join(unknown)}")
    base = os.path.dirname(os.path.abspath(path))

    def rel(p):
        return None if p is None else os.path.normpath(os.path.join(base, p))

    for k in ("genotypes", "map", "annotation"):
        if k not in doc:
            raise DataError(f"{path}: manifest lacks '{k}'")
    expr = doc.get("expression") or {}
    if not isinstance(expr, dict) or not expr:
        raise DataError(f"{path}: manifest needs an [expression] table with at least one tissue")
    try:
        th = Thresholds.from_mapping(doc.get("thresholds", {}))
    except ValueError as e:
        raise DataError(f"{path}: {e}") from None
    sex = doc.get("sex", {})
    seed = doc.get("seed")
    env_seed = os.environ.get("LINEUP_FORGE_SEED")
    if env_seed:
        seed = int(env_seed)
    return DatasetManifest(
        genotypes=rel(doc["genotypes"]), map=rel(doc["map"]), annotation=rel(doc["annotation"]),
        expression={t: rel(p) for t, p in expr.items()}, plate=rel(doc.get("plate")),
        phenotypes=rel(doc.get("phenotypes")), exclude=list(doc.get("exclude", [])), seed=seed,
        thresholds=th, xist_probe=sex.get("xist_probe", "Xist"), y_probes=tuple(sex.get("y_probes", ())),
        traits=tuple(doc.get("traits", ())), path=os.path.abspath(path),
    )


def load_dataset(m: DatasetManifest) -> Dataset:
    geno = parse_genotypes(m.genotypes)
    gmap = parse_map(m.map)
    annot = parse_probe_annotation(m.annotation)
    expr = [parse_expression(p, t) for t, p in m.expression.items()]
    plate = parse_plate(m.plate) if m.plate else None
    pheno = parse_expression(m.phenotypes, "phenotypes") if m.phenotypes else None
    return Dataset(geno, gmap, tuple(expr), annot, plate, pheno)


def _toml_str(s: str) -> str:
    return json.dumps(s)


def write_manifest(path: str, files: Mapping, expression: Mapping, thresholds: Optional[Thresholds] = None,
                   seed: Optional[int] = None, exclude: Sequence[str] = (), xist_probe: Optional[str] = None,
                   y_probes: Sequence[str] = (), traits: Sequence[str] = ()) -> None:
    """Write a manifest; paths are written relative to the manifest's directory."""
    base = os.path.dirname(os.path.abspath(path))

    def rel(p):
        return os.path.relpath(os.path.abspath(p), base).replace(os.sep, "/")

    lines = []
    for k in ("genotypes", "map", "annotation", "plate", "phenotypes"):
        if files.get(k):
            lines.append(f"{k} = {_toml_str(rel(files[k]))}")
    if seed is not None:
        lines.append(f"seed = {int(seed)}")
    if exclude:
        lines.append("exclude = [" + ", ".join(_toml_str(x) for x in exclude) + "]")
    if traits:
        lines.append("traits = [" + ", ".join(_toml_str(x) for x in traits) + "]")
    lines.append("")
    lines.append("[expression]")
    for t, p in expression.items():
        lines.append(f"{t} = {_toml_str(rel(p))}")
    if xist_probe or y_probes:
        lines += ["", "[sex]"]
        if xist_probe:
            lines.append(f"xist_probe = {_toml_str(xist_probe)}")
        lines.append("y_probes = [" + ", ".join(_toml_str(x) for x in y_probes) + "]")
    if thresholds is not None:
        lines += ["", "[thresholds]"]
        for k, v in thresholds.as_dict().items():
            lines.append(f"{k} = {_toml_str(v) if isinstance(v, str) else repr(v)}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def write_dataset(ds: Dataset, out_dir: str, manifest_name: str = "manifest.toml", **manifest_kw) -> list:
    """Write every table of ``ds`` plus a manifest referencing them."""
    os.makedirs(out_dir, exist_ok=True)
    files = {"genotypes": os.path.join(out_dir, "genotypes.csv"), "map": os.path.join(out_dir, "map.csv"),
             "annotation": os.path.join(out_dir, "annotation.csv")}
    write_genotypes(ds.geno, files["genotypes"])
    write_map(ds.gmap, files["map"])
    write_probe_annotation(ds.annot, files["annotation"])
    if ds.plate is not None:
        files["plate"] = os.path.join(out_dir, "plate.csv")
        write_plate(ds.plate, files["plate"])
    if ds.pheno is not None:
        files["phenotypes"] = os.path.join(out_dir, "phenotypes.csv")
        write_expression(ds.pheno, files["phenotypes"])
    expression = {}
    for e in ds.expr:
        expression[e.tissue] = os.path.join(out_dir, f"expression_{e.tissue}.csv")
        write_expression(e, expression[e.tissue])
    mpath = os.path.join(out_dir, manifest_name)
    write_manifest(mpath, files, expression, **manifest_kw)
    return list(files.values()) + list(expression.values()) + [mpath]
