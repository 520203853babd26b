"""Core domain types shared across the pipeline.

Genotypes are stored as small integers (see :class:`Genotype`) in read-only
numpy arrays so the objects can be shared between threads without copying.
"""
from __future__ import annotations

import re
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np


class Genotype(IntEnum):
    BB = 0
    BR = 1
    RR = 2
    MISSING = -1


GENOTYPE_TOKENS = {"BB": Genotype.BB, "BR": Genotype.BR, "RR": Genotype.RR, "-": Genotype.MISSING}
GENOTYPE_NAMES = {int(v): k for k, v in GENOTYPE_TOKENS.items()}

SEXES = ("female", "male", "unknown")
VERDICTS = ("correct", "fixable", "unfixable", "unverifiable", "duplicate")

WELL_RE = re.compile(r"^[A-H](0[1-9]|1[0-2])$")


class DataError(ValueError):
    """Invalid or inconsistent input data."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


def _check_unique(ids: Sequence[str], what: str) -> None:
    seen = set()
    for x in ids:
        if x in seen:
            raise DataError(f"duplicate {what} '{x}'")
        seen.add(x)


@dataclass(frozen=True)
class GenotypeMatrix:
    sample_ids: tuple
    marker_ids: tuple
    calls: np.ndarray
    sex: tuple

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "marker_ids", tuple(self.marker_ids))
        object.__setattr__(self, "sex", tuple(self.sex))
        _check_unique(self.sample_ids, "sample id")
        _check_unique(self.marker_ids, "marker id")
        calls = np.asarray(self.calls, dtype=np.int8)
        if calls.shape != (len(self.sample_ids), len(self.marker_ids)):
            raise DataError(
                f"calls shape {calls.shape} does not match "
                f"({len(self.sample_ids)}, {len(self.marker_ids)})"
            )
        if calls.size and (calls.min() < -1 or calls.max() > 2):
            raise DataError("genotype codes must be in {-1, 0, 1, 2}")
        if len(self.sex) != len(self.sample_ids):
            raise DataError("sex must have one entry per sample")
        for s in self.sex:
            if s not in SEXES:
                raise DataError(f"unknown sex '{s}'")
        object.__setattr__(self, "calls", _frozen(calls))

    @property
    def n_samples(self) -> int:
        return len(self.sample_ids)

    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.sample_ids)}

    def sex_of(self) -> dict:
        return dict(zip(self.sample_ids, self.sex))

    def columns(self, marker_ids: Sequence[str]) -> np.ndarray:
        pos = {m: j for j, m in enumerate(self.marker_ids)}
        return self.calls[:, [pos[m] for m in marker_ids]]

    def take(self, rows: Sequence[int], sample_ids=None, sex=None) -> "GenotypeMatrix":
        rows = list(rows)
        return GenotypeMatrix(
            sample_ids if sample_ids is not None else [self.sample_ids[i] for i in rows],
            self.marker_ids,
            self.calls[rows],
            sex if sex is not None else [self.sex[i] for i in rows],
        )


@dataclass(frozen=True)
class Chromosome:
    name: str
    marker_ids: tuple
    positions: np.ndarray  # cM
    is_x: bool = False

    def __post_init__(self):
        object.__setattr__(self, "marker_ids", tuple(self.marker_ids))
        pos = np.asarray(self.positions, dtype=float)
        if pos.shape != (len(self.marker_ids),):
            raise DataError(f"chromosome {self.name}: positions do not match markers")
        if np.any(np.diff(pos) < 0):
            raise DataError(f"positions decrease within chromosome {self.name}")
        object.__setattr__(self, "positions", _frozen(pos))


@dataclass(frozen=True)
class GeneticMap:
    chromosomes: tuple  # of Chromosome, in file order

    def __post_init__(self):
        object.__setattr__(self, "chromosomes", tuple(self.chromosomes))
        _check_unique([c.name for c in self.chromosomes], "chromosome")
        _check_unique([m for c in self.chromosomes for m in c.marker_ids], "marker id")

    def __getitem__(self, name: str) -> Chromosome:
        for c in self.chromosomes:
            if c.name == name:
                return c
        raise KeyError(name)

    def names(self) -> list:
        return [c.name for c in self.chromosomes]

    @property
    def autosomes(self) -> list:
        return [c for c in self.chromosomes if not c.is_x]

    @property
    def x_chromosomes(self) -> list:
        return [c for c in self.chromosomes if c.is_x]

    def marker_chrom(self) -> dict:
        return {m: c.name for c in self.chromosomes for m in c.marker_ids}


@dataclass(frozen=True)
class ExpressionSet:
    tissue: str
    sample_ids: tuple
    probe_ids: tuple
    values: np.ndarray  # NaN marks missing

    def __post_init__(self):
        object.__setattr__(self, "sample_ids", tuple(self.sample_ids))
        object.__setattr__(self, "probe_ids", tuple(self.probe_ids))
        _check_unique(self.sample_ids, f"sample id in tissue {self.tissue}")
        _check_unique(self.probe_ids, f"probe id in tissue {self.tissue}")
        v = np.asarray(self.values, dtype=float)
        if v.shape != (len(self.sample_ids), len(self.probe_ids)):
            raise DataError(f"tissue {self.tissue}: values shape {v.shape} does not match ids")
        if np.isinf(v).any():
            raise DataError(f"tissue {self.tissue}: infinite expression value")
        object.__setattr__(self, "values", _frozen(v))

    @property
    def mask(self) -> np.ndarray:
        """True where a value is present."""
        return ~np.isnan(self.values)

    def index(self) -> dict:
        return {s: i for i, s in enumerate(self.sample_ids)}

    def probe_index(self) -> dict:
        return {p: j for j, p in enumerate(self.probe_ids)}

    def rows(self, sample_ids: Sequence[str]) -> np.ndarray:
        idx = self.index()
        return self.values[[idx[s] for s in sample_ids]]

    def probe_columns(self, probe_ids: Sequence[str]) -> np.ndarray:
        idx = self.probe_index()
        return self.values[:, [idx[p] for p in probe_ids]]


@dataclass(frozen=True)
class ProbeInfo:
    probe_id: str
    chromosome: Optional[str]
    position: Optional[float]  # cM

    @property
    def located(self) -> bool:
        return self.chromosome is not None


@dataclass(frozen=True)
class ProbeAnnotation:
    probes: tuple  # of ProbeInfo

    def __post_init__(self):
        object.__setattr__(self, "probes", tuple(self.probes))
        _check_unique([p.probe_id for p in self.probes], "probe id")

    def __getitem__(self, probe_id: str) -> ProbeInfo:
        return self.lookup()[probe_id]

    def __contains__(self, probe_id: str) -> bool:
        return probe_id in self.lookup()

    def lookup(self) -> dict:
        # cached on first use; the dataclass is frozen so bypass __setattr__
        d = self.__dict__.get("_lookup")
        if d is None:
            d = {p.probe_id: p for p in self.probes}
            object.__setattr__(self, "_lookup", d)
        return d


@dataclass(frozen=True)
class PlateLayout:
    wells: Mapping  # sample_id -> (plate_id, well)

    def __post_init__(self):
        wells = dict(self.wells)
        seen = {}
        for sid, (plate, well) in wells.items():
            if not WELL_RE.match(well):
                raise DataError(f"invalid well '{well}' for sample {sid}")
            key = (plate, well)
            if key in seen:
                raise DataError(f"well {plate}:{well} assigned to both {seen[key]} and {sid}")
            seen[key] = sid
        object.__setattr__(self, "wells", wells)

    def plates(self) -> list:
        return sorted({p for p, _ in self.wells.values()})

    def occupant(self) -> dict:
        return {v: k for k, v in self.wells.items()}


@dataclass(frozen=True)
class SimilarityMatrix:
    row_ids: tuple
    col_ids: tuple
    scores: np.ndarray  # NaN marks missing
    value_range: tuple = (-1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        object.__setattr__(self, "col_ids", tuple(self.col_ids))
        s = np.asarray(self.scores, dtype=float)
        if s.shape != (len(self.row_ids), len(self.col_ids)):
            raise DataError(f"scores shape {s.shape} does not match ids")
        lo, hi = self.value_range
        present = s[~np.isnan(s)]
        # tolerate rounding at the range edges
        if present.size and (present.min() < lo - 1e-9 or present.max() > hi + 1e-9):
            raise DataError(f"similarity scores outside [{lo}, {hi}]")
        object.__setattr__(self, "scores", _frozen(np.clip(s, lo, hi)))

    @property
    def mask(self) -> np.ndarray:
        return ~np.isnan(self.scores)

    def get(self, row: str, col: str) -> float:
        return float(self.scores[self.row_ids.index(row), self.col_ids.index(col)])

    def reorder(self, row_ids: Sequence[str], col_ids: Sequence[str]) -> "SimilarityMatrix":
        ri = {r: i for i, r in enumerate(self.row_ids)}
        ci = {c: j for j, c in enumerate(self.col_ids)}
        return SimilarityMatrix(
            row_ids, col_ids,
            self.scores[np.ix_([ri[r] for r in row_ids], [ci[c] for c in col_ids])],
            self.value_range,
        )


@dataclass(frozen=True)
class RelabelDecision:
    sample_id: str
    verdict: str
    new_label: Optional[str] = None
    # (self_similarity, max_similarity, second_similarity, argmax_id)
    evidence: tuple = (float("nan"), float("nan"), float("nan"), None)
    flags: tuple = ()

    def __post_init__(self):
        if self.verdict not in VERDICTS:
            raise DataError(f"unknown verdict '{self.verdict}'")
        if self.verdict == "fixable" and (self.new_label is None or self.new_label == self.sample_id):
            raise DataError(f"fixable decision for {self.sample_id} needs a different new_label")
        if self.verdict == "duplicate" and self.new_label is None:
            raise DataError(f"duplicate decision for {self.sample_id} must name the retained sample")
        object.__setattr__(self, "flags", tuple(self.flags))


@dataclass(frozen=True)
class Dataset:
    """Everything one pipeline run reads, bundled."""

    geno: GenotypeMatrix
    gmap: GeneticMap
    expr: tuple  # of ExpressionSet, manifest order
    annot: ProbeAnnotation
    plate: Optional[PlateLayout] = None
    pheno: Optional[ExpressionSet] = None  # clinical traits, same CSV shape as expression
    applied: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        object.__setattr__(self, "expr", tuple(self.expr))
        _check_unique([e.tissue for e in self.expr], "tissue")

    def tissue(self, name: str) -> ExpressionSet:
        for e in self.expr:
            if e.tissue == name:
                return e
        raise KeyError(name)

    @property
    def tissues(self) -> list:
        return [e.tissue for e in self.expr]


# ---------------------------------------------------------------------------
# validation


@dataclass(frozen=True)
class Finding:
    kind: str
    subject: str
    severity: str = "error"
    detail: str = ""


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple = ()

    def __bool__(self):
        return bool(self.findings)

    def __len__(self):
        return len(self.findings)

    @property
    def errors(self) -> list:
        return [f for f in self.findings if f.severity == "error"]

    def kinds(self) -> list:
        return [f.kind for f in self.findings]


def validate_dataset(geno: GenotypeMatrix, gmap: GeneticMap, expr: Iterable[ExpressionSet],
                     annot: ProbeAnnotation, plate: Optional[PlateLayout] = None) -> ValidationReport:
    """Cross-reference the inputs and report every inconsistency found.

    Nothing is raised: each problem becomes a :class:`Finding`. Samples
    with expression but no genotypes are reported at ``info`` severity since
    they are expected (e.g. animals only assayed in one tissue).
    """
    expr = list(expr)
    out = []
    mapped = gmap.marker_chrom()
    for m in geno.marker_ids:
        if m not in mapped:
            out.append(Finding("unmapped marker", m))
    genotyped = set(geno.sample_ids)
    if geno.calls.size:
        for sid, row in zip(geno.sample_ids, geno.calls):
            if np.all(row == Genotype.MISSING):
                out.append(Finding("no-call sample", sid, "warning", "all genotypes missing"))
    chroms = set(gmap.names())
    for p in annot.probes:
        if p.located and p.chromosome not in chroms:
            out.append(Finding("probe on unknown chromosome", p.probe_id, "warning", p.chromosome))
    expr_only = set()
    unannotated = {}
    for e in expr:
        for pid in e.probe_ids:
            if pid not in annot:
                unannotated.setdefault(pid, e.tissue)
        expr_only.update(s for s in e.sample_ids if s not in genotyped)
    for pid, tissue in unannotated.items():
        out.append(Finding("unannotated probe", pid, "warning", tissue))
    for sid in sorted(expr_only):
        out.append(Finding("expression-only sample", sid, "info"))
    if plate is not None:
        for sid in geno.sample_ids:
            if sid not in plate.wells:
                out.append(Finding("sample without well", sid, "warning"))
    return ValidationReport(tuple(out))
