"""Thresholds for every stage, overridable from the manifest's [thresholds] table."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields


@dataclass(frozen=True)
class Thresholds:
    # genotype probabilities
    step_cM: float = 0.5
    error_rate: float = 0.002
    # expression arrays
    probe_corr_min: float = 0.75
    expr_self_min: float = 0.8
    expr_other_min: float = 0.8
    expr_gap_min: float = 0.1
    dup_min: float = 0.95
    expr_rounds: int = 2
    # DNA samples
    lod_select: float = 100.0
    p_obs_min: float = 0.99
    knn_k: int = 40
    knn_vote_min: float = 0.8
    filter_min: float = 0.7
    dna_self_min: float = 0.8
    dna_other_min: float = 0.8
    dna_gap_min: float = 0.2
    identity_min: float = 0.98
    # consistency checks
    sex_min_incompatible: int = 2
    # QTL scans
    lod_peak: float = 5.0
    support_drop: float = 2.0
    # plate forensics
    fill_order: str = "column"

    @classmethod
    def from_mapping(cls, m) -> "Thresholds":
        known = {f.name: f.type for f in fields(cls)}
        unknown = sorted(set(m) - set(known))
        if unknown:
            raise ValueError(f"unknown threshold(s): {', '.join(unknown)}")
        kw = {}
        for k, v in m.items():
            default = getattr(cls, k)
            if isinstance(default, bool) or isinstance(default, str):
                kw[k] = type(default)(v)
            elif isinstance(default, int):
                if float(v) != int(v):
                    raise ValueError(f"threshold {k} must be an integer, got {v}")
                kw[k] = int(v)
            else:
                kw[k] = float(v)
        if kw.get("fill_order", "column") not in ("column", "row"):
            raise ValueError("fill_order must be 'column' or 'row'")
        return cls(**kw)

    def as_dict(self) -> dict:
        return asdict(self)
