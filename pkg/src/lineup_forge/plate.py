"""Project DNA relabel decisions onto 96-well plates and name the error patterns.

A fixable or duplicate DNA decision means the sample intended for one well
(the well of its true label) was found in another. These displacements form
a graph on wells; closed 2- and 3-cycles are swaps, runs of consecutive
wells shifted by the same small offset are pipetting shifts, and whatever
remains is reported per connected component.

An unfixable row whose best match is still strong contributes a tentative
edge. Tentative edges are kept only where the plate corroborates them: they
close a swap or cycle, or extend a shift run that has a firm edge.
Otherwise the row is reported as an orphan.
"""
from __future__ import annotations

import logging
import os
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence
from xml.sax.saxutils import escape

from .model import PlateLayout, RelabelDecision

log = logging.getLogger(__name__)

ROWS = "ABCDEFGH"
SHIFT_OFFSETS = (1, -1, 2, -2)


def well_index(well: str, order: str = "column") -> int:
    r = ROWS.index(well[0])
    c = int(well[1:]) - 1
    if order == "column":
        return c * 8 + r
    if order == "row":
        return r * 12 + c
    raise ValueError(f"unknown fill order '{order}'")


def sort_wells(wells, order: str = "column") -> list:
    return sorted(wells, key=lambda w: well_index(w, order))


def wells_in_order(layout: PlateLayout, order: str = "column") -> dict:
    """plate -> occupied wells in fill order (column-major A01, B01, ..., H12 by default)."""
    by_plate = {}
    for plate, well in layout.wells.values():
        by_plate.setdefault(plate, []).append(well)
    return {p: sort_wells(by_plate[p], order) for p in sorted(by_plate)}


@dataclass(frozen=True)
class PlateFinding:
    kind: str  # exact_swap | cycle | shift_run | duplicate_fill | orphan
    wells: tuple  # ((plate, well), ...)
    edges: tuple = ()  # (((plate, well) intended, (plate, well) actual), ...)
    samples: tuple = ()  # DNA row labels involved
    offset: Optional[int] = None
    length: Optional[int] = None
    tentative: tuple = ()  # samples whose edge is corroborated by the plate only

    def as_dict(self) -> dict:
        d = {"kind": self.kind, "wells": [list(w) for w in self.wells],
             "edges": [[list(a), list(b)] for a, b in self.edges], "samples": list(self.samples),
             "tentative": list(self.tentative)}
        if self.kind == "shift_run":
            d["offset"] = self.offset
            d["length"] = self.length
        return d


@dataclass(frozen=True)
class _Edge:
    src: tuple  # intended (plate, well)
    dst: tuple  # actual (plate, well)
    sample: str  # row label
    duplicate: bool
    tentative: bool = False


def _edges(decisions: Sequence[RelabelDecision], layout: PlateLayout, tentative_min: Optional[float]) -> list:
    out = []
    for d in decisions:
        if d.verdict in ("fixable", "duplicate"):
            target, tent = d.new_label, False
        elif d.verdict == "unfixable" and tentative_min is not None and d.evidence[3] is not None \
                and d.evidence[1] >= tentative_min:
            target, tent = d.evidence[3], True
        else:
            continue
        actual = layout.wells.get(d.sample_id)
        intended = layout.wells.get(target)
        if actual is None or intended is None:
            continue
        out.append(_Edge(intended, actual, d.sample_id, d.verdict == "duplicate", tent))
    return out


def _finding(kind, es, offset=None, length=None):
    return PlateFinding(kind, tuple(x.dst for x in es), tuple((x.src, x.dst) for x in es),
                        tuple(x.sample for x in es), offset, length,
                        tuple(x.sample for x in es if x.tentative))


def _key(w, order):
    return (w[0], well_index(w[1], order))


def detect_patterns(decisions: Sequence[RelabelDecision], layout: PlateLayout, order: str = "column",
                    tentative_min: Optional[float] = 0.8) -> list:
    """Classify the displacement graph of the DNA decisions into plate findings.

    ``tentative_min`` is the best-match similarity an unfixable row needs to
    contribute a tentative edge; ``None`` disables tentative edges.
    """
    edges = _edges(decisions, layout, tentative_min)
    findings = []
    for e in edges:
        if e.duplicate:
            findings.append(PlateFinding("duplicate_fill", (e.dst, e.src), ((e.src, e.dst),), (e.sample,)))

    # each well holds one sample, so an edge is identified by its destination
    pred = {e.dst: e for e in edges}
    used = set()
    for e in sorted(edges, key=lambda x: _key(x.dst, order)):
        if e.dst in used:
            continue
        cyc = [e]
        cur = e
        while cur.src in pred and pred[cur.src] is not e and len(cyc) <= 3:
            cur = pred[cur.src]
            cyc.append(cur)
        closed = cur.src == e.dst
        if closed and len(cyc) in (2, 3) and not any(x.dst in used for x in cyc):
            cyc.sort(key=lambda x: _key(x.dst, order))
            findings.append(_finding("exact_swap" if len(cyc) == 2 else "cycle", cyc))
            used.update(x.dst for x in cyc)

    rest = [e for e in edges if e.dst not in used]
    groups = {}
    for e in rest:
        if e.src[0] != e.dst[0]:
            continue
        off = well_index(e.dst[1], order) - well_index(e.src[1], order)
        if off in SHIFT_OFFSETS:
            groups.setdefault((e.dst[0], off), []).append(e)
    for (plate, off), es in sorted(groups.items()):
        es.sort(key=lambda x: well_index(x.dst[1], order))
        run = [es[0]]
        for e in es[1:] + [None]:
            if e is not None and well_index(e.dst[1], order) == well_index(run[-1].dst[1], order) + 1:
                run.append(e)
                continue
            if len(run) >= 2 and any(not x.tentative for x in run):
                findings.append(_finding("shift_run", run, off, len(run)))
                used.update(x.dst for x in run)
            run = [e]

    # leftovers: long cycles, open chains, cross-plate moves
    rest = [e for e in edges if e.dst not in used and not e.duplicate and not e.tentative]
    parent = {}

    def find(x):
        while parent.setdefault(x, x) != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for e in rest:
        parent[find(e.src)] = find(e.dst)
    comps = {}
    for e in rest:
        comps.setdefault(find(e.dst), []).append(e)
    for es in sorted(comps.values(), key=lambda es: min(_key(x.dst, order) for x in es)):
        es.sort(key=lambda x: _key(x.dst, order))
        findings.append(_finding("cycle", es))
    for d in decisions:
        if d.verdict == "unfixable" and d.sample_id in layout.wells and layout.wells[d.sample_id] not in used:
            findings.append(PlateFinding("orphan", (layout.wells[d.sample_id],), (), (d.sample_id,)))
    kind_rank = {"exact_swap": 0, "cycle": 1, "shift_run": 2, "duplicate_fill": 3, "orphan": 4}
    findings.sort(key=lambda f: (kind_rank[f.kind], _key(f.wells[0], order)))
    return findings


def displacement_warnings(decisions: Sequence[RelabelDecision], layout: PlateLayout) -> list:
    """Samples found in more than two wells (correct well plus one duplicate)."""
    placed = Counter()
    for d in decisions:
        if d.verdict == "correct":
            placed[d.sample_id] += 1
        elif d.verdict in ("fixable", "duplicate"):
            placed[d.new_label] += 1
    return sorted(s for s, n in placed.items() if n > 2 and s in layout.wells)


# ---------------------------------------------------------------------------
# SVG

_CELL = 40
_MARGIN = 40


def _xy(well: str):
    r = ROWS.index(well[0])
    c = int(well[1:]) - 1
    return _MARGIN + c * _CELL + _CELL / 2, _MARGIN + r * _CELL + _CELL / 2


def _plate_svg(plate: str, layout: PlateLayout, findings: Sequence[PlateFinding]) -> str:
    occupied = {w for p, w in layout.wells.values() if p == plate}
    dup, orphan, moved = set(), set(), set()
    arrows = []
    for f in findings:
        # the pink circle marks the well whose sample was duplicated
        if f.kind == "duplicate_fill" and f.wells[1][0] == plate:
            dup.add(f.wells[1][1])
        if f.kind == "orphan" and f.wells[0][0] == plate:
            orphan.add(f.wells[0][1])
        if f.kind in ("exact_swap", "cycle", "shift_run", "duplicate_fill"):
            for (a, b), smp in zip(f.edges, f.samples if f.kind != "duplicate_fill" else (None,)):
                if b[0] == plate:
                    moved.add(b[1])
                    arrows.append((a, b, smp in f.tentative))
    seen = set()
    arrows = [x for x in arrows if not (x in seen or seen.add(x))]
    w = _MARGIN * 2 + 12 * _CELL
    h = _MARGIN * 2 + 8 * _CELL + 60
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">',
        '<defs><marker id="arrow" viewBox="0 0 10 10" refX="9" refY="5" markerWidth="6" markerHeight="6" '
        'orient="auto-start-reverse"><path d="M 0 0 L 10 5 L 0 10 z" fill="#1f5fbf"/></marker></defs>',
        f'<text x="{_MARGIN}" y="24" font-family="sans-serif" font-size="16">plate {escape(plate)}</text>',
    ]
    for c in range(12):
        x = _MARGIN + c * _CELL + _CELL / 2
        out.append(f'<text x="{x:.1f}" y="{_MARGIN - 6}" font-size="10" text-anchor="middle">{c + 1:02d}</text>')
    for r, letter in enumerate(ROWS):
        y = _MARGIN + r * _CELL + _CELL / 2 + 4
        out.append(f'<text x="{_MARGIN - 12}" y="{y:.1f}" font-size="10" text-anchor="middle">{letter}</text>')
    for r, letter in enumerate(ROWS):
        for c in range(12):
            well = f"{letter}{c + 1:02d}"
            x, y = _xy(well)
            if well not in occupied:
                out.append(f'<circle class="empty" cx="{x:.1f}" cy="{y:.1f}" r="8" fill="none" stroke="#aaaaaa"/>')
            elif well in orphan:
                out.append(f'<path class="orphan" d="M {x - 7:.1f} {y + 6:.1f} L {x + 7:.1f} {y + 6:.1f} '
                           f'L {x:.1f} {y - 7:.1f} z" fill="#f08000"/>')
            elif well not in moved:
                out.append(f'<circle class="dot" cx="{x:.1f}" cy="{y:.1f}" r="4" fill="black"/>')
            if well in dup:
                out.append(f'<circle class="duplicate" cx="{x:.1f}" cy="{y:.1f}" r="11" fill="none" '
                           f'stroke="#e060a0" stroke-width="2"/>')
    for a, b, tent in arrows:
        x2, y2 = _xy(b[1])
        dash = ' stroke-dasharray="4 3"' if tent else ""
        if a[0] == plate:
            x1, y1 = _xy(a[1])
        else:
            x1, y1 = x2 - 14, y2 - 14
        out.append(f'<line class="arrow" x1="{x1:.1f}" y1="{y1:.1f}" x2="{x2:.1f}" y2="{y2:.1f}" '
                   f'stroke="#1f5fbf" stroke-width="2"{dash} marker-end="url(#arrow)"/>')
        if a[0] != plate:
            out.append(f'<text x="{x2 - 16:.1f}" y="{y2 - 16:.1f}" font-size="8">'
                       f'{escape(a[0])}:{escape(a[1])}</text>')
    ly = _MARGIN + 8 * _CELL + 25
    legend = [("black", "correct"), ("#1f5fbf", "displaced (arrow: intended to actual; dashed: tentative)"),
              ("#e060a0", "duplicate"), ("#f08000", "unknown origin"), ("#aaaaaa", "empty")]
    for k, (col, text) in enumerate(legend):
        lx = _MARGIN + (k % 3) * 160
        yy = ly + (k // 3) * 18
        out.append(f'<rect x="{lx}" y="{yy - 8}" width="10" height="10" fill="{col}"/>')
        out.append(f'<text x="{lx + 14}" y="{yy + 1}" font-size="10">{escape(text)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plate_diagram(findings: Sequence[PlateFinding], layout: PlateLayout, path: str) -> list:
    """Write one SVG per plate into directory ``path``; returns the file paths."""
    os.makedirs(path, exist_ok=True)
    written = []
    for plate in layout.plates():
        fn = os.path.join(path, f"plate_{plate}.svg")
        with open(fn, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(_plate_svg(plate, layout, findings))
        written.append(fn)
    return written
