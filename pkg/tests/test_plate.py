import re

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lineup_forge.model import PlateLayout, RelabelDecision
from lineup_forge.plate import (detect_patterns, displacement_warnings, emit_plate_diagram, sort_wells,
                                well_index, wells_in_order)
from lineup_forge.simulate import plate_layout

NAN = float("nan")


def full_plate(n=96):
    lay = plate_layout([f"S{k:02d}" for k in range(n)])
    by_well = {w: s for s, (p, w) in lay.wells.items()}
    return lay, by_well


def fix(label, sample, best=0.97):
    return RelabelDecision(label, "fixable", sample, (0.4, best, 0.4, sample))


def moves_to_decisions(moves, by_well):
    """moves: (intended well, actual well): the actual well holds the intended well's sample."""
    return [fix(by_well[b], by_well[a]) for a, b in moves]


def test_wells_in_order_examples():
    lay = PlateLayout({"x": ("P", "A02"), "y": ("P", "B01"), "z": ("P", "A01")})
    assert wells_in_order(lay) == {"P": ["A01", "B01", "A02"]}
    lay, _ = full_plate()
    order = wells_in_order(lay)["P1"]
    assert len(order) == 96 and order[0] == "A01" and order[7] == "H01" and order[-1] == "H12"
    assert wells_in_order(PlateLayout({})) == {}


def test_row_order_available():
    assert sort_wells(["A02", "B01", "A01"], "row") == ["A01", "A02", "B01"]
    with pytest.raises(ValueError):
        well_index("A01", "diagonal")


def test_well_index_is_bijection():
    wells = [f"{r}{c:02d}" for r in "ABCDEFGH" for c in range(1, 13)]
    assert sorted(well_index(w) for w in wells) == list(range(96))
    assert sorted(well_index(w, "row") for w in wells) == list(range(96))


def test_exact_swap():
    lay, bw = full_plate()
    (f,) = detect_patterns(moves_to_decisions([("D02", "D03"), ("D03", "D02")], bw), lay)
    assert f.kind == "exact_swap"
    assert f.wells == (("P1", "D02"), ("P1", "D03"))


def test_three_cycle():
    lay, bw = full_plate()
    (f,) = detect_patterns(moves_to_decisions([("A05", "C07"), ("C07", "H11"), ("H11", "A05")], bw), lay)
    assert f.kind == "cycle" and len(f.wells) == 3


def shift(start, length, offset, bw):
    i = well_index(start)
    order = sort_wells(bw)
    return [(order[i + k], order[i + k + offset]) for k in range(length)]


@pytest.mark.parametrize("offset", [1, -1, 2, -2])
def test_shift_run(offset):
    lay, bw = full_plate()
    (f,) = detect_patterns(moves_to_decisions(shift("C04", 6, offset, bw), bw), lay)
    assert (f.kind, f.offset, f.length) == ("shift_run", offset, 6)


def test_column_wrapping_shift():
    # E07 -> F07 -> G07 -> H07 -> A08 continues down the column into the next one
    lay, bw = full_plate()
    (f,) = detect_patterns(moves_to_decisions(shift("E07", 4, 1, bw), bw), lay)
    assert [w for _, w in f.wells] == ["F07", "G07", "H07", "A08"]


def test_single_displacement_is_not_a_run():
    lay, bw = full_plate()
    (f,) = detect_patterns(moves_to_decisions([("B02", "C02")], bw), lay)
    assert f.kind == "cycle" and len(f.wells) == 1


def test_separated_runs_reported_separately():
    lay, bw = full_plate()
    d = moves_to_decisions(shift("A01", 3, 1, bw) + shift("A05", 4, 1, bw), bw)
    runs = [f for f in detect_patterns(d, lay) if f.kind == "shift_run"]
    assert [f.length for f in runs] == [3, 4]


def test_duplicate_fill():
    lay, bw = full_plate()
    d = [RelabelDecision(bw["B03"], "duplicate", bw["D02"], (0.4, 0.99, 0.4, bw["D02"]))]
    (f,) = detect_patterns(d, lay)
    assert f.kind == "duplicate_fill"
    assert f.wells == (("P1", "B03"), ("P1", "D02"))


def test_orphan():
    lay, bw = full_plate()
    d = [RelabelDecision(bw["F09"], "unfixable", None, (0.4, 0.5, 0.45, bw["A01"]))]
    (f,) = detect_patterns(d, lay)
    assert f.kind == "orphan" and f.wells == (("P1", "F09"),)


def test_tentative_edge_closes_swap_or_extends_run():
    lay, bw = full_plate()
    a, b = bw["D02"], bw["D03"]
    d = [fix(a, b), RelabelDecision(b, "unfixable", None, (0.4, 0.85, 0.8, a))]
    (f,) = detect_patterns(d, lay)
    assert f.kind == "exact_swap" and f.tentative == (b,)
    # without corroboration the unfixable row stays an orphan
    d = [RelabelDecision(b, "unfixable", None, (0.4, 0.85, 0.8, bw["H12"]))]
    assert [f.kind for f in detect_patterns(d, lay)] == ["orphan"]
    assert [f.kind for f in detect_patterns(d, lay, tentative_min=None)] == ["orphan"]
    moves = shift("C04", 4, 1, bw)
    d = moves_to_decisions(moves[:3], bw)
    a, b = moves[3]
    d.append(RelabelDecision(bw[b], "unfixable", None, (0.4, 0.9, 0.85, bw[a])))
    (f,) = detect_patterns(d, lay)
    assert (f.kind, f.length, f.tentative) == ("shift_run", 4, (bw[b],))


def test_cross_plate_is_never_a_shift():
    lay = plate_layout([f"S{k:03d}" for k in range(192)])
    bw = {(p, w): s for s, (p, w) in lay.wells.items()}
    # the last wells of P1 moved to the first wells of P2
    d = [fix(bw[("P2", "A01")], bw[("P1", "G12")]), fix(bw[("P2", "B01")], bw[("P1", "H12")])]
    kinds = [f.kind for f in detect_patterns(d, lay)]
    assert "shift_run" not in kinds and kinds


def random_scenario(seed):
    r = np.random.default_rng(seed)
    lay, bw = full_plate()
    order = sort_wells(bw)
    free = set(range(96))
    moves = []
    for _ in range(r.integers(0, 4)):
        i = int(r.integers(0, 95))
        j = int(r.integers(0, 96))
        if i != j and {i, j} <= free:
            moves += [(order[i], order[j]), (order[j], order[i])]
            free -= {i, j}
    for _ in range(r.integers(0, 3)):
        off = int(r.choice([1, -1, 2, -2]))
        ln = int(r.integers(2, 7))
        i = int(r.integers(2, 96 - ln - 2))
        span = set(range(min(i, i + off), max(i + ln, i + ln + off)))
        if span <= free:
            moves += [(order[i + k], order[i + k + off]) for k in range(ln)]
            free -= span
    return lay, bw, moves_to_decisions(moves, bw)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_every_fixable_in_exactly_one_finding(seed):
    lay, bw, d = random_scenario(seed)
    found = detect_patterns(d, lay)
    seen = [s for f in found for s in f.samples]
    assert sorted(seen) == sorted(x.sample_id for x in d)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 10 ** 6))
def test_runs_are_maximal(seed):
    lay, bw, d = random_scenario(seed)
    runs = [f for f in detect_patterns(d, lay) if f.kind == "shift_run"]
    for f in runs:
        assert f.length >= 2 and f.offset in (1, -1, 2, -2) and len(f.wells) == f.length
    for f in runs:
        for g in runs:
            if f is g or f.offset != g.offset:
                continue
            assert well_index(f.wells[-1][1]) + 1 != well_index(g.wells[0][1])


def test_displacement_warnings():
    lay, bw = full_plate()
    s = bw["A01"]
    d = [RelabelDecision(s, "correct"), RelabelDecision(bw["B01"], "duplicate", s),
         RelabelDecision(bw["C01"], "fixable", s)]
    assert displacement_warnings(d, lay) == [s]
    assert displacement_warnings(d[:2], lay) == []


# --- SVG -------------------------------------------------------------------

def svg_for(d, tmp_path, name="out"):
    lay, _ = full_plate()
    (fn,) = emit_plate_diagram(detect_patterns(d, lay), lay, str(tmp_path / name))
    return open(fn, encoding="utf-8").read()


def test_svg_all_correct(tmp_path):
    svg = svg_for([], tmp_path)
    assert len(re.findall(r'class="dot"', svg)) == 96
    assert 'class="arrow"' not in svg
    assert svg.startswith("<svg") and svg.rstrip().endswith("</svg>")


def test_svg_swap_two_arrows(tmp_path):
    _, bw = full_plate()
    svg = svg_for(moves_to_decisions([("D02", "D03"), ("D03", "D02")], bw), tmp_path)
    assert len(re.findall(r'class="arrow"', svg)) == 2
    assert len(re.findall(r'class="dot"', svg)) == 94


def test_svg_deterministic(tmp_path):
    _, bw = full_plate()
    d = moves_to_decisions(shift("C04", 5, 1, bw) + [("A12", "B12"), ("B12", "A12")], bw)
    assert svg_for(d, tmp_path, "a") == svg_for(d, tmp_path, "b")
    a = (tmp_path / "a" / "plate_P1.svg").read_bytes()
    b = (tmp_path / "b" / "plate_P1.svg").read_bytes()
    assert a == b


def test_svg_one_file_per_plate(tmp_path):
    lay = plate_layout([f"S{k:03d}" for k in range(100)])
    files = emit_plate_diagram([], lay, str(tmp_path))
    assert [f.split("/")[-1] for f in files] == ["plate_P1.svg", "plate_P2.svg"]
    assert open(files[1]).read().count('class="dot"') == 4


def test_svg_unwritable(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    lay, _ = full_plate()
    with pytest.raises(OSError):
        emit_plate_diagram([], lay, str(blocker / "sub"))
