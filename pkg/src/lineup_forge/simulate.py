"""Synthetic F2 intercross data with known eQTL structure and injected mix-ups.

Genotypes come from the same marker-grid Markov chain the HMM assumes, so
simulated data doubles as a calibration oracle for the genotype
probabilities. Expression has three kinds of probes: strong local eQTL
(tissue specific), cross-tissue probes sharing a per-animal latent value,
and independent noise; sex probes (an Xist-like gene on the X and Y-linked
genes) follow recorded sex.
"""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .genoprob import cf_rec_fraction
from .model import (Chromosome, Dataset, ExpressionSet, GeneticMap, Genotype, GenotypeMatrix, PlateLayout,
                    ProbeAnnotation, ProbeInfo)
from .plate import ROWS, well_index

Y_PROBES = ("Ddx3y", "Kdm5d", "Eif2s3y", "Uty")
XIST = "Xist"


@dataclass(frozen=True)
class Perturbation:
    """One injected error on one data grid (``"dna"`` or a tissue name).

    kinds: ``swap`` (two samples), ``cycle`` (label ``samples[k+1]`` receives
    the content of ``samples[k]``, wrapping around), ``duplicate`` (the row
    of ``samples[1]`` is overwritten by that of ``samples[0]``), ``shift_run``
    (on ``plate`` starting at ``well``: the well ``offset`` places later in
    fill order receives the content of each of ``length`` consecutive wells),
    and ``omit`` (rows removed).
    """
    kind: str
    target: str
    samples: tuple = ()
    plate: Optional[str] = None
    well: Optional[str] = None
    offset: int = 1
    length: int = 0

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(self).items()}


@dataclass(frozen=True)
class SimConfig:
    seed: int = 1
    n_samples: int = 500
    n_dna_only: int = 0
    n_chrom: int = 5
    chrom_length: float = 100.0
    markers_per_chrom: int = 50
    x_length: float = 80.0
    x_markers: int = 20
    tissues: tuple = ("adipose", "liver", "kidney")
    n_eqtl: int = 60
    n_cross: int = 100
    n_noise: int = 840  # per tissue, including other tissues' eQTL probes
    eqtl_a: float = 2.0
    eqtl_d: float = 0.0
    eqtl_sd: float = 0.25
    latent_sd: float = 1.0
    tissue_noise_sd: float = 0.3
    sex_effect: float = 3.0
    sex_sd: float = 0.3
    error_rate: float = 0.002
    missing_rate: float = 0.0
    trait_effects: tuple = (0.8, 0.5, 0.4, 0.3)
    trait_sex_effect: float = 0.5
    perturbations: tuple = ()

    def as_dict(self) -> dict:
        d = asdict(self)
        d["perturbations"] = [p.as_dict() for p in self.perturbations]
        d["tissues"] = list(self.tissues)
        d["trait_effects"] = list(self.trait_effects)
        return d


@dataclass
class GenoTruth:
    """Error-free simulated genotypes (samples x markers) before call errors."""
    sample_ids: tuple
    marker_ids: tuple
    genotypes: np.ndarray
    sex: tuple


@dataclass
class GroundTruth:
    """``source[grid][label]`` is the animal whose material sits under ``label``."""
    source: dict = field(default_factory=dict)
    inventory: list = field(default_factory=list)

    def mislabelled(self, grid: str) -> dict:
        return {lab: s for lab, s in self.source.get(grid, {}).items() if lab != s}

    def as_dict(self) -> dict:
        return {"source": {g: dict(sorted(m.items())) for g, m in sorted(self.source.items())},
                "inventory": [p.as_dict() for p in self.inventory]}


def sample_ids(n: int, start: int = 1) -> list:
    return [f"M{k:04d}" for k in range(start, start + n)]


def _rng(seed: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


def make_map(cfg: SimConfig) -> GeneticMap:
    chroms = []
    for c in range(1, cfg.n_chrom + 1):
        pos = np.linspace(0.0, cfg.chrom_length, cfg.markers_per_chrom)
        chroms.append(Chromosome(str(c), [f"c{c}m{k + 1:03d}" for k in range(len(pos))], pos, False))
    if cfg.x_markers:
        pos = np.linspace(0.0, cfg.x_length, cfg.x_markers)
        chroms.append(Chromosome("X", [f"cXm{k + 1:03d}" for k in range(len(pos))], pos, True))
    return GeneticMap(tuple(chroms))


def _gamete(rng, rec: np.ndarray) -> np.ndarray:
    """Allele (0 = B, 1 = R) at each marker of one chromosome."""
    first = rng.integers(2)
    if rec.size == 0:
        return np.array([first], dtype=np.int8)
    flips = rng.random(rec.size) < rec
    return (first + np.concatenate([[0], np.cumsum(flips)])) % 2


def simulate_cross(cfg: SimConfig, gmap: Optional[GeneticMap] = None):
    """Returns ``(GenotypeMatrix with call errors, GeneticMap, GenoTruth)``.

    Autosomes: two independent gametes from F1 parents. X: one recombinant
    maternal gamete, plus the paternal R allele for females; males are
    hemizygous and coded BB or RR. Sex alternates female, male, ...
    Every sample draws from its own RNG stream.
    """
    gmap = gmap or make_map(cfg)
    n = cfg.n_samples + cfg.n_dna_only
    ids = sample_ids(n)
    sex = tuple("female" if i % 2 == 0 else "male" for i in range(n))
    recs = [np.array([cf_rec_fraction(d / 100.0) for d in np.diff(c.positions)]) for c in gmap.chromosomes]
    markers = [m for c in gmap.chromosomes for m in c.marker_ids]
    truth = np.empty((n, len(markers)), dtype=np.int8)
    calls = np.empty_like(truth)
    for i in range(n):
        rng = _rng(cfg.seed, 0, i)
        row = []
        for c, rec in zip(gmap.chromosomes, recs):
            mat = _gamete(rng, rec)
            if not c.is_x:
                row.append(mat + _gamete(rng, rec))
            elif sex[i] == "female":
                row.append(mat + 1)  # paternal X is R
            else:
                row.append(2 * mat)
        g = np.concatenate(row).astype(np.int8)
        truth[i] = g
        obs = g.copy()
        err = rng.random(g.size) < cfg.error_rate
        obs[err] = (g[err] + rng.integers(1, 3, size=err.sum())) % 3
        obs[rng.random(g.size) < cfg.missing_rate] = Genotype.MISSING
        calls[i] = obs
    return (GenotypeMatrix(ids, markers, calls, sex), gmap, GenoTruth(tuple(ids), tuple(markers), truth, sex))


def _probe_plan(cfg: SimConfig, gmap: GeneticMap):
    """Probe ids, annotation, and per-tissue roles (shared across tissues, fixed by the seed)."""
    rng = _rng(cfg.seed, 1)
    T = len(cfg.tissues)
    n_pure = max(cfg.n_noise - (T - 1) * cfg.n_eqtl, 0)
    n_total = T * cfg.n_eqtl + cfg.n_cross + n_pure
    ids = [f"pr{k:04d}" for k in range(1, n_total + 1)]
    order = rng.permutation(n_total)
    eqtl = [[ids[order[t * cfg.n_eqtl + k]] for k in range(cfg.n_eqtl)] for t in range(T)]
    cross = [ids[order[T * cfg.n_eqtl + k]] for k in range(cfg.n_cross)]
    noise = [ids[order[T * cfg.n_eqtl + cfg.n_cross + k]] for k in range(n_pure)]

    auto_markers = [(c.name, m, float(p)) for c in gmap.autosomes for m, p in zip(c.marker_ids, c.positions)]
    midx = {m: j for j, m in enumerate(mm for c in gmap.chromosomes for mm in c.marker_ids)}
    eqtl_marker = {}
    info = {}
    for t in range(T):
        for pid, k in zip(eqtl[t], rng.choice(len(auto_markers), size=cfg.n_eqtl, replace=False)):
            chrom, m, pos = auto_markers[k]
            eqtl_marker[pid] = midx[m]
            info[pid] = ProbeInfo(pid, chrom, pos)
    for pid in cross + noise:
        if rng.random() < 0.5:
            c = gmap.autosomes[rng.integers(len(gmap.autosomes))]
            info[pid] = ProbeInfo(pid, c.name, float(rng.uniform(c.positions[0], c.positions[-1])))
        else:
            info[pid] = ProbeInfo(pid, None, None)
    xs = gmap.x_chromosomes
    info[XIST] = ProbeInfo(XIST, xs[0].name, float(xs[0].positions[len(xs[0].positions) // 2])) if xs \
        else ProbeInfo(XIST, None, None)
    for y in Y_PROBES:
        info[y] = ProbeInfo(y, None, None)
    all_ids = ids + [XIST, *Y_PROBES]
    annot = ProbeAnnotation(tuple(info[p] for p in all_ids))
    return all_ids, annot, eqtl, cross, eqtl_marker


def simulate_expression(truth: GenoTruth, cfg: SimConfig, gmap: GeneticMap):
    """Returns ``(list of ExpressionSet, ProbeAnnotation)`` for the first ``n_samples`` animals."""
    all_ids, annot, eqtl, cross, eqtl_marker = _probe_plan(cfg, gmap)
    n = cfg.n_samples
    ids = truth.sample_ids[:n]
    pcol = {p: j for j, p in enumerate(all_ids)}
    latent = _rng(cfg.seed, 2).normal(0.0, cfg.latent_sd, size=(n, len(cross)))
    female = np.array([s == "female" for s in truth.sex[:n]])
    sign = np.where(female, 1.0, -1.0)
    out = []
    for t, tissue in enumerate(cfg.tissues):
        rng = _rng(cfg.seed, 3, t)
        V = rng.normal(0.0, 1.0, size=(n, len(all_ids)))
        for pid in eqtl[t]:
            g = truth.genotypes[:n, eqtl_marker[pid]].astype(float)
            V[:, pcol[pid]] = cfg.eqtl_a * (g - 1) + cfg.eqtl_d * (g == 1) + rng.normal(0, cfg.eqtl_sd, n)
        cols = [pcol[p] for p in cross]
        V[:, cols] = latent + rng.normal(0.0, cfg.tissue_noise_sd, size=latent.shape)
        V[:, pcol[XIST]] = sign * cfg.sex_effect + rng.normal(0, cfg.sex_sd, n)
        for y in Y_PROBES:
            V[:, pcol[y]] = -sign * cfg.sex_effect + rng.normal(0, cfg.sex_sd, n)
        out.append(ExpressionSet(tissue, ids, all_ids, V))
    return out, annot


def simulate_trait(truth: GenoTruth, cfg: SimConfig, gmap: GeneticMap, name: str = "insulin") -> ExpressionSet:
    """Polygenic trait: additive QTL at random autosomal markers, a sex effect and unit noise."""
    rng = _rng(cfg.seed, 4)
    auto = [j for j, m in enumerate(truth.marker_ids) if gmap.marker_chrom()[m] in {c.name for c in gmap.autosomes}]
    loci = rng.choice(auto, size=len(cfg.trait_effects), replace=False)
    n = len(truth.sample_ids)
    y = rng.normal(0.0, 1.0, n)
    for j, a in zip(loci, cfg.trait_effects):
        y += a * (truth.genotypes[:, j] - 1.0)
    y += cfg.trait_sex_effect * np.array([s == "male" for s in truth.sex], dtype=float)
    return ExpressionSet("phenotypes", truth.sample_ids, (name,), y[:, None])


def plate_layout(ids: Sequence[str], per_plate: int = 96) -> PlateLayout:
    """Column-major fill (A01, B01, ..., H01, A02, ...) of consecutive 96-well plates."""
    wells = {}
    for k, s in enumerate(ids):
        p, w = divmod(k, per_plate)
        c, r = divmod(w, 8)
        wells[s] = (f"P{p + 1}", f"{ROWS[r]}{c + 1:02d}")
    return PlateLayout(wells)


def simulate_dataset(cfg: SimConfig) -> tuple:
    """Clean dataset plus its genotype truth: ``(Dataset, GenoTruth)``."""
    geno, gmap, truth = simulate_cross(cfg)
    expr, annot = simulate_expression(truth, cfg, gmap)
    pheno = simulate_trait(truth, cfg, gmap)
    return Dataset(geno, gmap, tuple(expr), annot, plate_layout(geno.sample_ids), pheno), truth


# ---------------------------------------------------------------------------
# mix-ups


def _grid_labels(ds: Dataset, grid: str) -> tuple:
    return ds.geno.sample_ids if grid == "dna" else ds.tissue(grid).sample_ids


def _shift_moves(p: Perturbation, layout: PlateLayout, order: str = "column") -> list:
    occ = {(pl, well_index(w, order)): s for s, (pl, w) in layout.wells.items()}
    if p.plate is None or p.well is None:
        raise ValueError("shift_run needs plate and well")
    start = well_index(p.well, order)
    moves = []
    for k in range(p.length):
        src = occ.get((p.plate, start + k))
        dst = occ.get((p.plate, start + k + p.offset))
        if src is None or dst is None:
            raise ValueError(f"shift_run on {p.plate} from {p.well} runs past occupied wells")
        moves.append((src, dst))
    return moves


def _moves(p: Perturbation, layout: Optional[PlateLayout]) -> list:
    """(source label, destination label) pairs; all sources are read before any write."""
    s = tuple(p.samples)
    if p.kind == "swap":
        if len(s) != 2 or s[0] == s[1]:
            raise ValueError(f"swap needs two distinct samples, got {s}")
        return [(s[0], s[1]), (s[1], s[0])]
    if p.kind == "cycle":
        if len(s) < 2 or len(set(s)) != len(s):
            raise ValueError(f"cycle needs at least two distinct samples, got {s}")
        return [(s[k], s[(k + 1) % len(s)]) for k in range(len(s))]
    if p.kind == "duplicate":
        if len(s) != 2 or s[0] == s[1]:
            raise ValueError(f"duplicate needs (source, destination), got {s}")
        return [(s[0], s[1])]
    if p.kind == "shift_run":
        if layout is None:
            raise ValueError("shift_run needs a plate layout")
        return _shift_moves(p, layout)
    raise ValueError(f"unknown perturbation kind '{p.kind}'")


def inject_mixups(ds: Dataset, perturbations: Sequence[Perturbation]):
    """Apply perturbations in order; returns ``(perturbed Dataset, GroundTruth)``.

    Recorded sex, wells and phenotypes belong to the label and are not moved.
    A perturbation that touches a removed row, or writes one row twice, is a
    conflict.
    """
    grids = ["dna", *ds.tissues]
    source = {g: {lab: lab for lab in _grid_labels(ds, g)} for g in grids}
    omitted = {g: set() for g in grids}
    for p in perturbations:
        if p.target not in source:
            raise ValueError(f"unknown grid '{p.target}'")
        src = source[p.target]
        if p.kind == "omit":
            for lab in p.samples:
                if lab not in src or lab in omitted[p.target]:
                    raise ValueError(f"conflicting perturbation: cannot omit {lab} from {p.target}")
                omitted[p.target].add(lab)
            continue
        moves = _moves(p, ds.plate)
        dsts = [d for _, d in moves]
        if len(set(dsts)) != len(dsts):
            raise ValueError(f"conflicting perturbation: {p.kind} writes a row twice")
        for a, b in moves:
            for lab in (a, b):
                if lab not in src:
                    raise ValueError(f"{p.kind}: sample {lab} not in {p.target}")
                if lab in omitted[p.target]:
                    raise ValueError(f"conflicting perturbation: {lab} was omitted from {p.target}")
        new = {b: src[a] for a, b in moves}
        src.update(new)
    truth = GroundTruth({g: {lab: s for lab, s in source[g].items() if lab not in omitted[g]} for g in grids},
                        list(perturbations))
    return _materialise(ds, truth), truth


def _materialise(ds: Dataset, truth: GroundTruth) -> Dataset:
    geno = ds.geno
    gi = geno.index()
    m = truth.source["dna"]
    labels = [s for s in geno.sample_ids if s in m]
    sex = geno.sex_of()
    new_geno = GenotypeMatrix(labels, geno.marker_ids, geno.calls[[gi[m[lab]] for lab in labels]],
                              [sex[lab] for lab in labels])
    new_expr = []
    for e in ds.expr:
        ei = e.index()
        m = truth.source[e.tissue]
        labels = [s for s in e.sample_ids if s in m]
        new_expr.append(ExpressionSet(e.tissue, labels, e.probe_ids, e.values[[ei[m[lab]] for lab in labels]]))
    return replace(ds, geno=new_geno, expr=tuple(new_expr))


def restore(ds: Dataset, truth: GroundTruth) -> Dataset:
    """Undo a pure relabelling (swaps and cycles) using the ground truth."""
    inverse = GroundTruth({}, [])
    for g, m in truth.source.items():
        if sorted(m.values()) != sorted(m):
            raise ValueError(f"grid {g} is not a permutation; duplicates and omissions cannot be undone")
        inverse.source[g] = {s: lab for lab, s in m.items()}
    return _materialise(ds, inverse)


def default_perturbations(ds: Dataset, seed: int, dna_swaps: int = 10, dna_cycles: int = 1,
                          dna_duplicates: int = 2, shift_length: int = 6, shift_offset: int = 1,
                          expr_swaps: int = 2, expr_duplicates: int = 1) -> list:
    """The standard mix-up scenario, on disjoint animals that have expression in every tissue."""
    rng = _rng(seed, 5)
    with_expr = set.intersection(*(set(e.sample_ids) for e in ds.expr)) if ds.expr else set()
    pool = [s for s in ds.geno.sample_ids if s in with_expr]
    out = []
    taken = set()
    if shift_length:
        plate = ds.plate.plates()[0]
        occ = {well_index(w): s for s, (p, w) in ds.plate.wells.items() if p == plate}
        starts = [i for i in sorted(occ)
                  if all(i + k in occ and i + k + shift_offset in occ for k in range(shift_length))]
        start = starts[int(rng.integers(len(starts)))]
        out.append(Perturbation("shift_run", "dna", plate=plate, well=ds.plate.wells[occ[start]][1],
                                offset=shift_offset, length=shift_length))
        for k in range(shift_length):
            taken.update((occ[start + k], occ[start + k + shift_offset]))
    free = [s for s in pool if s not in taken]
    order = list(rng.permutation(len(free)))

    def draw(k):
        picked = []
        while len(picked) < k:
            picked.append(free[order.pop()])
        return tuple(picked)

    for _ in range(dna_swaps):
        out.append(Perturbation("swap", "dna", draw(2)))
    for _ in range(dna_cycles):
        out.append(Perturbation("cycle", "dna", draw(3)))
    for _ in range(dna_duplicates):
        out.append(Perturbation("duplicate", "dna", draw(2)))
    for e in ds.expr:
        for _ in range(expr_swaps):
            out.append(Perturbation("swap", e.tissue, draw(2)))
    tissues = [e.tissue for e in ds.expr]
    for k in range(expr_duplicates):
        out.append(Perturbation("duplicate", tissues[k % len(tissues)], draw(2)))
    return out


def scan_perturbations(ds: Dataset, seed: int, fraction: float = 0.1) -> list:
    """DNA swaps covering ``fraction`` of the genotyped animals."""
    rng = _rng(seed, 6)
    ids = list(ds.geno.sample_ids)
    k = int(round(fraction * len(ids) / 2))
    perm = rng.permutation(len(ids))
    return [Perturbation("swap", "dna", (ids[perm[2 * i]], ids[perm[2 * i + 1]])) for i in range(k)]


# ---------------------------------------------------------------------------
# scoring


@dataclass
class RecoveryMetrics:
    n_injected: int
    n_recovered: int
    false_relabels: int
    n_duplicates: int
    duplicates_detected: int
    missed: list = field(default_factory=list)  # (grid, label, true source, verdict, new label)
    false: list = field(default_factory=list)  # (grid, label, verdict, new label)

    @property
    def recovery_rate(self) -> float:
        return self.n_recovered / self.n_injected if self.n_injected else 1.0

    @property
    def duplicate_rate(self) -> float:
        return self.duplicates_detected / self.n_duplicates if self.n_duplicates else 1.0

    def as_dict(self) -> dict:
        d = asdict(self)
        d["recovery_rate"] = self.recovery_rate
        d["duplicate_rate"] = self.duplicate_rate
        d["missed"] = [list(x) for x in self.missed]
        d["false"] = [list(x) for x in self.false]
        return d


def score_recovery(expr_decisions, dna_decisions, truth: GroundTruth) -> RecoveryMetrics:
    """Compare decisions on the perturbed grids with the injected ground truth.

    An injected mislabel is recovered when its row is relabelled (fixable or
    duplicate) to the true source. A relabel of an untouched row is false.
    Duplicates count as detected when the overwritten row is called a
    duplicate of its source.
    """
    per_grid = {g: {d.sample_id: d for d in ds} for g, ds in dict(expr_decisions or {}).items()}
    per_grid["dna"] = {d.sample_id: d for d in dna_decisions or []}
    m = RecoveryMetrics(0, 0, 0, 0, 0)
    for grid, src in sorted(truth.source.items()):
        dec = per_grid.get(grid, {})
        for lab, s in sorted(src.items()):
            d = dec.get(lab)
            relabel = d is not None and d.verdict in ("fixable", "duplicate")
            if lab != s:
                m.n_injected += 1
                if relabel and d.new_label == s:
                    m.n_recovered += 1
                else:
                    m.missed.append((grid, lab, s, d.verdict if d else None, d.new_label if d else None))
            elif relabel:
                m.false_relabels += 1
                m.false.append((grid, lab, d.verdict, d.new_label))
    for p in truth.inventory:
        if p.kind != "duplicate":
            continue
        m.n_duplicates += 1
        d = per_grid.get(p.target, {}).get(p.samples[1])
        if d is not None and d.verdict == "duplicate" and d.new_label == p.samples[0]:
            m.duplicates_detected += 1
    return m


# ---------------------------------------------------------------------------
# files


def write_simulation(ds: Dataset, truth: GroundTruth, cfg: SimConfig, out_dir: str) -> str:
    """Write dataset CSVs, manifest.toml and truth.json; returns the manifest path."""
    from .fileio import dump_json, write_dataset
    write_dataset(ds, out_dir, seed=cfg.seed, xist_probe=XIST, y_probes=Y_PROBES)
    dump_json({"config": _jsonable(cfg.as_dict()), **truth.as_dict()}, os.path.join(out_dir, "truth.json"))
    return os.path.join(out_dir, "manifest.toml")


def _jsonable(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    return x


def read_truth(path: str) -> GroundTruth:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    inv = [Perturbation(p["kind"], p["target"], tuple(p["samples"]), p.get("plate"), p.get("well"),
                        p.get("offset", 1), p.get("length", 0)) for p in doc.get("inventory", [])]
    return GroundTruth(doc["source"], inv)
