import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lineup_forge.genoprob import (calc_genoprob, cf_map_distance, cf_rec_fraction, f2_transition,
                                   insert_pseudomarkers, observed_genotype)
from lineup_forge.model import Chromosome, GeneticMap, GenotypeMatrix

from oracles import E, bisect_inverse, brute_force


def one_chrom(positions, rows, sex=None):
    ids = [f"m{i}" for i in range(len(positions))]
    gmap = GeneticMap((Chromosome("1", ids, positions),))
    geno = GenotypeMatrix([f"s{i}" for i in range(len(rows))], ids, rows, sex or ["female"] * len(rows))
    return geno, gmap


def test_map_distance_examples():
    assert cf_map_distance(0.0) == 0.0
    closed = 0.25 * (0.5493061443340549 + 0.4636476090008061)
    assert cf_map_distance(0.25) == pytest.approx(closed, abs=1e-12)
    assert cf_map_distance(0.25) == pytest.approx(0.2532, abs=1e-4)
    with pytest.raises(ValueError):
        cf_map_distance(0.5)
    with pytest.raises(ValueError):
        cf_map_distance(-0.1)


@pytest.mark.parametrize("r", [0.01, 0.1, 0.4])
def test_map_round_trip(r):
    d = cf_map_distance(r)
    assert abs(cf_rec_fraction(d) - r) < 1e-8
    assert abs(cf_rec_fraction(d) - bisect_inverse(d)) < 1e-12


def test_rec_fraction_examples():
    assert cf_rec_fraction(0.0) == 0.0
    assert cf_rec_fraction(5.0) > 0.4999
    assert cf_rec_fraction(5.0) < 0.5
    assert cf_rec_fraction(0.2532) == pytest.approx(0.25, abs=1e-4)
    with pytest.raises(ValueError):
        cf_rec_fraction(-1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 3.0))
def test_inverse_solves_to_1e12(d):
    r = cf_rec_fraction(d)
    assert 0.0 <= r < 0.5
    if r < 0.4999:
        assert abs(cf_map_distance(r) - d) < 1e-12


@settings(max_examples=100, deadline=None)
@given(st.floats(0.0, 0.49), st.floats(0.0, 0.49))
def test_map_monotone(a, b):
    if a < b:
        assert cf_map_distance(a) < cf_map_distance(b)
        assert cf_rec_fraction(a) <= cf_rec_fraction(b)


def test_transition_rows_sum_to_one():
    for r in (0.0, 0.1, 0.3, 0.4999):
        assert np.allclose(f2_transition(r).sum(axis=1), 1.0)
    assert np.array_equal(f2_transition(0.0), np.eye(3))


def grid_positions(marks):
    g = insert_pseudomarkers(GeneticMap((Chromosome("1", [f"m{i}" for i in range(len(marks))], marks),)), 0.5)
    return g["1"]


def test_pseudomarkers_examples():
    assert grid_positions([0.0, 0.4]).positions.tolist() == [0.0, 0.4]
    cg = grid_positions([0.0, 1.0])
    assert cg.positions.tolist() == [0.0, 0.5, 1.0]
    assert cg.is_pseudo.tolist() == [False, True, False]
    assert np.allclose(grid_positions([0.0, 2.0]).positions, [0.0, 0.5, 1.0, 1.5, 2.0])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 20.0), min_size=1, max_size=8))
def test_pseudomarker_spacing(gaps):
    marks = np.concatenate([[0.0], np.cumsum(gaps)])
    cg = grid_positions(marks.tolist())
    assert np.all(np.diff(cg.positions) <= 0.5 + 1e-9)
    assert np.allclose(cg.positions[~cg.is_pseudo], marks)
    expected = sum(max(math.ceil(L / 0.5 - 1e-9) - 1, 0) for L in gaps if L > 0.5)
    assert int(cg.is_pseudo.sum()) == expected


def test_single_marker_posterior():
    geno, gmap = one_chrom([0.0], [[0]])
    p = calc_genoprob(geno, insert_pseudomarkers(gmap), E).probs["1"][0, 0]
    # (1/4 (1-e), 1/2 e/2, 1/4 e/2) normalised
    unnorm = np.array([0.25 * (1 - E), 0.5 * E / 2, 0.25 * E / 2])
    assert np.allclose(p, unnorm / unnorm.sum(), atol=1e-15)
    assert np.allclose(p, [0.997003, 0.001998, 0.000999], atol=1e-6)


def test_all_missing_returns_prior():
    geno, gmap = one_chrom([0.0, 3.0, 10.0], [[-1, -1, -1], [-1, -1, -1]])
    p = calc_genoprob(geno, insert_pseudomarkers(gmap)).probs["1"]
    assert np.allclose(p, [0.25, 0.5, 0.25], atol=1e-12)


def test_three_marker_all_patterns():
    pos = [0.0, 7.0, 20.0]
    rows = [list(o) for o in itertools.product(range(-1, 3), repeat=3)]
    geno, gmap = one_chrom(pos, rows)
    p = calc_genoprob(geno, insert_pseudomarkers(gmap, 1000.0), E).probs["1"]
    for i, o in enumerate(rows):
        assert np.max(np.abs(p[i] - brute_force(o, pos))) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5).flatmap(lambda L: st.tuples(
    st.lists(st.integers(-1, 2), min_size=L, max_size=L),
    st.lists(st.floats(0.0, 40.0), min_size=L - 1, max_size=L - 1))))
def test_matches_brute_force(case):
    obs, gaps = case
    pos = np.concatenate([[0.0], np.cumsum(gaps)]).tolist()
    geno, gmap = one_chrom(pos, [obs])
    p = calc_genoprob(geno, insert_pseudomarkers(gmap, 1000.0), E).probs["1"][0]
    assert np.max(np.abs(p - brute_force(obs, pos))) < 1e-10


def test_posterior_sums_to_one(clean):
    ds, _ = clean
    probs = calc_genoprob(ds.geno, insert_pseudomarkers(ds.gmap, 0.5))
    for arr in probs.probs.values():
        assert np.all(np.abs(arr.sum(axis=2) - 1) < 1e-9)
        assert arr.min() >= 0 and arr.max() <= 1


def test_x_is_skipped(clean):
    ds, _ = clean
    probs = calc_genoprob(ds.geno, insert_pseudomarkers(ds.gmap, 0.5))
    assert "X" not in probs.probs and set(probs.probs) == {c.name for c in ds.gmap.autosomes}


@pytest.mark.parametrize("g", [0, 1, 2])
def test_concentration_at_1cM(g):
    geno, gmap = one_chrom([0.0, 1.0, 2.0], [[g, g, g]])
    p = calc_genoprob(geno, insert_pseudomarkers(gmap), E)
    cg = p.grid["1"]
    mid = list(cg.locus_ids).index("m1")
    assert p.probs["1"][0, mid, g] > 0.99


def test_zero_gap_identity_transition():
    geno, gmap = one_chrom([5.0, 5.0], [[0, -1]])
    p = calc_genoprob(geno, insert_pseudomarkers(gmap)).probs["1"][0]
    assert np.allclose(p[0], p[1])


def test_row_permutation_equivariance(rng):
    rows = rng.integers(-1, 3, size=(12, 6))
    geno, gmap = one_chrom([0.0, 2.0, 3.5, 9.0, 15.0, 16.0], rows.tolist())
    grid = insert_pseudomarkers(gmap)
    p = calc_genoprob(geno, grid).probs["1"]
    perm = rng.permutation(12)
    geno2 = GenotypeMatrix([geno.sample_ids[i] for i in perm], geno.marker_ids, rows[perm], geno.sex)
    p2 = calc_genoprob(geno2, grid).probs["1"]
    assert np.array_equal(p2, p[perm])


def test_observed_genotype_rule():
    probs = np.array([[1.0, 0, 0], [0.98, 0.015, 0.005], [0.995, 0.004, 0.001], [0.0, 0.001, 0.999]])
    assert observed_genotype(probs, 0.99).tolist() == [0, -1, 0, 2]
