import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from lineup_forge.model import (Chromosome, DataError, ExpressionSet, GeneticMap, Genotype, GenotypeMatrix,
                                PlateLayout, ProbeAnnotation, ProbeInfo, RelabelDecision, SimilarityMatrix,
                                validate_dataset)


def toy():
    geno = GenotypeMatrix(["a", "b"], ["m1", "m2"], [[0, 1], [2, -1]], ["female", "male"])
    gmap = GeneticMap((Chromosome("1", ["m1", "m2"], [0.0, 5.0]),))
    expr = [ExpressionSet("liver", ["a", "b"], ["p1"], [[0.1], [0.2]])]
    annot = ProbeAnnotation((ProbeInfo("p1", "1", 2.0),))
    plate = PlateLayout({"a": ("P1", "A01"), "b": ("P1", "B01")})
    return geno, gmap, expr, annot, plate


def test_genotype_has_four_states():
    assert sorted(int(g) for g in Genotype) == [-1, 0, 1, 2]


def test_consistent_dataset_gives_empty_report():
    rep = validate_dataset(*toy())
    assert len(rep) == 0 and not rep


def test_unmapped_marker():
    geno, gmap, expr, annot, plate = toy()
    gmap = GeneticMap((Chromosome("1", ["m1"], [0.0]),))
    rep = validate_dataset(geno, gmap, expr, annot, plate)
    assert rep.kinds() == ["unmapped marker"]
    assert rep.findings[0].subject == "m2"


def test_expression_only_sample_is_info():
    geno, gmap, _, annot, plate = toy()
    expr = [ExpressionSet("kidney", ["a", "b", "Mouse9999"], ["p1"], [[0.1], [0.2], [0.3]])]
    rep = validate_dataset(geno, gmap, expr, annot, plate)
    assert rep.kinds() == ["expression-only sample"]
    assert rep.findings[0].subject == "Mouse9999"
    assert rep.findings[0].severity == "info"
    assert rep.errors == []


def test_no_call_and_unannotated_and_wellless():
    geno = GenotypeMatrix(["a", "b"], ["m1", "m2"], [[0, 1], [-1, -1]], ["female", "male"])
    _, gmap, _, annot, _ = toy()
    expr = [ExpressionSet("liver", ["a"], ["p1", "p9"], [[0.1, 0.2]])]
    rep = validate_dataset(geno, gmap, expr, annot, PlateLayout({"a": ("P1", "A01")}))
    assert sorted(rep.kinds()) == ["no-call sample", "sample without well", "unannotated probe"]


def test_validate_is_pure():
    args = toy()
    assert validate_dataset(*args) == validate_dataset(*args)


def test_duplicate_ids_rejected():
    with pytest.raises(DataError, match="duplicate sample id 'a'"):
        GenotypeMatrix(["a", "a"], ["m1"], [[0], [1]], ["female", "male"])
    with pytest.raises(DataError, match="duplicate marker id"):
        GenotypeMatrix(["a"], ["m1", "m1"], [[0, 1]], ["female"])
    with pytest.raises(DataError):
        ExpressionSet("t", ["x", "x"], ["p"], [[1.0], [2.0]])


def test_shape_and_code_checks():
    with pytest.raises(DataError, match="shape"):
        GenotypeMatrix(["a"], ["m1", "m2"], [[0]], ["female"])
    with pytest.raises(DataError):
        GenotypeMatrix(["a"], ["m1"], [[3]], ["female"])
    with pytest.raises(DataError):
        GenotypeMatrix(["a"], ["m1"], [[0]], ["hermaphrodite"])
    with pytest.raises(DataError):
        ExpressionSet("t", ["x"], ["p"], [[np.inf]])


def test_map_positions_nondecreasing():
    Chromosome("1", ["a", "b"], [1.0, 1.0])
    with pytest.raises(DataError, match="chromosome 1"):
        Chromosome("1", ["a", "b"], [5.0, 3.0])
    with pytest.raises(DataError, match="marker id"):
        GeneticMap((Chromosome("1", ["a"], [0.0]), Chromosome("2", ["a"], [0.0])))


def test_plate_wells():
    with pytest.raises(DataError, match="invalid well"):
        PlateLayout({"a": ("P1", "I01")})
    with pytest.raises(DataError, match="invalid well"):
        PlateLayout({"a": ("P1", "A13")})
    with pytest.raises(DataError, match="assigned to both"):
        PlateLayout({"a": ("P1", "A01"), "b": ("P1", "A01")})
    PlateLayout({"a": ("P1", "A01"), "b": ("P2", "A01")})


def test_similarity_range():
    SimilarityMatrix(["a"], ["b"], [[1.0]])
    with pytest.raises(DataError):
        SimilarityMatrix(["a"], ["b"], [[1.5]])
    with pytest.raises(DataError):
        SimilarityMatrix(["a"], ["b"], [[-0.1]], (0.0, 1.0))
    s = SimilarityMatrix(["a"], ["b", "c"], [[np.nan, 0.5]])
    assert s.mask.tolist() == [[False, True]]


def test_decision_invariants():
    with pytest.raises(DataError):
        RelabelDecision("a", "fixable")
    with pytest.raises(DataError):
        RelabelDecision("a", "fixable", "a")
    with pytest.raises(DataError):
        RelabelDecision("a", "duplicate")
    with pytest.raises(DataError):
        RelabelDecision("a", "swapped", "b")
    assert RelabelDecision("a", "fixable", "b").new_label == "b"


def test_types_are_immutable():
    geno, _, expr, _, _ = toy()
    with pytest.raises(ValueError):
        geno.calls[0, 0] = 2
    with pytest.raises(ValueError):
        expr[0].values[0, 0] = 9.0
    with pytest.raises(Exception):
        geno.sex = ("male", "male")


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(-1, 2), min_size=1, max_size=30))
def test_calls_copied_on_construction(codes):
    arr = np.array(codes, dtype=np.int8).reshape(1, -1)
    g = GenotypeMatrix(["s"], [f"m{i}" for i in range(arr.shape[1])], arr, ["unknown"])
    arr[:] = 0
    assert g.calls.ravel().tolist() == codes


def test_reorder_roundtrip():
    s = SimilarityMatrix(["a", "b"], ["x", "y", "z"], np.arange(6).reshape(2, 3) / 10)
    r = s.reorder(["b", "a"], ["z", "x", "y"])
    assert r.get("a", "z") == s.get("a", "z")
    assert np.array_equal(r.reorder(s.row_ids, s.col_ids).scores, s.scores)
