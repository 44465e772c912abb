from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.base import clone

from exam_collusion import InputError
from exam_collusion.dissimilarity import (
    DissimilarityMatrix,
    ExamDissimilarity,
    bin_events,
    build_scheme,
    event_dissimilarity,
    global_dissimilarity,
    normalize_attributes,
    point_dissimilarity,
)
from exam_collusion.ingest import Subtask, SubtaskCatalog
from exam_collusion.synthetic import make_cohort, paper_catalog

from conftest import make_exam


def test_bin_events_half_open(small_catalog):
    exam = make_exam("a", [("1.1", 0), ("1.1", 59.9), ("1.1", 60)], {})
    v = bin_events(exam, small_catalog)["1.1"]
    assert len(v) == 70
    assert v[:3].tolist() == [2, 1, 0] and v[3:].sum() == 0


def test_bin_events_empty_and_clamped(small_catalog):
    v = bin_events(make_exam("a", [("1.2", 4210)], {}), small_catalog)
    assert v["1.1"].tolist() == [0] * 70
    assert v["1.2"][69] == 1 and v["1.2"].sum() == 1


@pytest.mark.parametrize("a, b, expected", [(3, 3, 0), (5, 2, 3), (0, 4.5, 4.5)])
def test_point_dissimilarity(a, b, expected):
    assert point_dissimilarity(a, b) == expected


@pytest.mark.parametrize(
    "u, v, expected",
    [([1, 0, 2], [1, 0, 2], 0), ([1, 0, 2], [0, 1, 2], 2), ([3] + [0] * 69, [0] * 70, 3)],
)
def test_event_dissimilarity(u, v, expected):
    assert event_dissimilarity(u, v) == expected


def test_event_dissimilarity_length_mismatch():
    with pytest.raises(InputError):
        event_dissimilarity([1, 2], [1, 2, 3])


vectors = st.lists(st.integers(0, 5), min_size=4, max_size=4)


@given(vectors, vectors, vectors)
def test_event_dissimilarity_is_metric(u, v, w):
    assert event_dissimilarity(u, v) == event_dissimilarity(v, u)
    assert (event_dissimilarity(u, v) == 0) == (u == v)
    assert event_dissimilarity(u, w) <= event_dissimilarity(u, v) + event_dissimilarity(v, w)


reals = st.floats(0, 10, allow_nan=False)


@given(reals, reals, reals)
def test_point_dissimilarity_is_metric(a, b, c):
    assert point_dissimilarity(a, b) == point_dissimilarity(b, a)
    assert (point_dissimilarity(a, b) == 0) == (a == b)
    assert point_dissimilarity(a, c) <= point_dissimilarity(a, b) + point_dissimilarity(b, c) + 1e-12


# weight schemes ----------------------------------------------------------

def test_paper_scheme_test_group_table():
    scheme = build_scheme(paper_catalog("test"), "paper")
    assert scheme.h == 34
    cats = {s.id: s.category for s in paper_catalog("test").subtasks}
    rounded = {tid: (e, p) for tid, e, p in scheme.rounded_table()}
    assert {rounded[t] for t in cats if cats[t] == "standard"} == {(0.052, 0.013)}
    assert {rounded[t] for t in cats if cats[t] == "code"} == {(0.026, 0.013)}
    assert rounded["7"] == (0.026, 0.013)
    assert scheme.point_weights[0] == Fraction(1, 77)
    assert scheme.event_weights[0] == Fraction(4, 77)


def test_paper_scheme_comparison_group_table():
    # solve 16*4p + 3*2p + 19p = 1  ->  p = 1/89
    p = Fraction(1, 16 * 4 + 3 * 2 + 19)
    assert p == Fraction(1, 89)
    scheme = build_scheme(paper_catalog("comparison"), "paper")
    assert set(scheme.point_weights) == {p}
    assert set(scheme.event_weights) == {4 * p, 2 * p}
    table = {(e, pt) for _, e, pt in scheme.rounded_table()}
    assert table == {(0.045, 0.011), (0.022, 0.011)}


@pytest.mark.parametrize("n", [1, 2, 17, 19])
def test_equal_scheme(n):
    cat = SubtaskCatalog([Subtask(str(k), "standard", 1.0) for k in range(n)], 70, float(n))
    scheme = build_scheme(cat, "equal")
    assert set(scheme.event_weights) | set(scheme.point_weights) == {Fraction(1, 2 * n)}


@pytest.mark.parametrize("mode", ["paper", "equal"])
def test_scheme_weights_sum_to_one(mode):
    for group in ("test", "comparison"):
        s = build_scheme(paper_catalog(group), mode)
        assert sum(s.event_weights) + sum(s.point_weights) == 1
        assert abs(s.weights_array().sum() - 1.0) < 1e-9


def test_scheme_unknown_mode():
    with pytest.raises(InputError):
        build_scheme(paper_catalog("test"), "fancy")


# normalization -----------------------------------------------------------

def test_normalize_range():
    out, consts = normalize_attributes([[0, 2, 4]], "range")
    assert out.tolist() == [[0, 0.5, 1]]
    assert consts == [4.0]


def test_normalize_degenerate_attribute():
    out, consts = normalize_attributes([[0, 0, 0], [1, 2, 3]], "range")
    assert out[0].tolist() == [0, 0, 0]
    assert consts[0] is None


def test_normalize_none_passthrough():
    raw = np.array([[0.0, 7.0, 2.5]])
    out, _ = normalize_attributes(raw, "none")
    assert np.array_equal(out, raw)


def test_normalize_zscore_divides_by_sd():
    out, consts = normalize_attributes([[1.0, 2.0, 3.0]], "zscore")
    assert consts[0] == pytest.approx(1.0)
    assert out[0].tolist() == pytest.approx([1.0, 2.0, 3.0])


# global dissimilarity -----------------------------------------------------

def _toy():
    cat = SubtaskCatalog([Subtask("t", "standard", 5.0)], 3, 5.0)
    a = make_exam("a", [("t", 10)], {"t": 4})
    b = make_exam("b", [("t", 30)], {"t": 4})
    c = make_exam("c", [("t", 130), ("t", 170)], {"t": 0})
    return cat, [a, b, c]


def _spreadsheet_trace(points, counts, w_points, w_events, h):
    """Independent trace: every pair, every attribute, by hand-style loops."""
    n = len(points)
    dp = {(i, j): abs(points[i] - points[j]) for i in range(n) for j in range(n)}
    dl = {(i, j): sum(abs(x - y) for x, y in zip(counts[i], counts[j])) for i in range(n) for j in range(n)}
    mp, ml = max(dp.values()), max(dl.values())
    return [[(w_points * dp[i, j] / mp + w_events * dl[i, j] / ml) / h for j in range(n)] for i in range(n)]


def test_global_dissimilarity_toy_trace():
    cat, cohort = _toy()
    D = global_dissimilarity(cohort, cat, "equal", "range")
    counts = [[1, 0, 0], [1, 0, 0], [0, 0, 2]]
    # one subtask -> two attributes, equal weights 1/2 each
    expected = _spreadsheet_trace([4, 4, 0], counts, 0.5, 0.5, 2)
    assert np.allclose(D.values, expected, rtol=0, atol=1e-15)
    assert D.values[0, 1] == 0.0
    assert D.values[0, 2] == pytest.approx(0.5, abs=1e-15)
    assert D.values[1, 2] == pytest.approx(0.5, abs=1e-15)
    # D is linear in the weights: quarter weights give half of that, 0.25
    quarter = _spreadsheet_trace([4, 4, 0], counts, 0.25, 0.25, 2)
    assert quarter[0][2] == pytest.approx(0.25, abs=1e-15)
    assert np.allclose(np.array(quarter), D.values / 2, rtol=0, atol=1e-15)


def test_identical_students_have_zero_distance(small_catalog):
    ev = [("1.1", 100), ("2.1", 700), ("2.1", 800)]
    pts = {"1.1": 3, "2.1": 5}
    D = global_dissimilarity([make_exam("a", ev, pts), make_exam("b", ev, pts)], small_catalog)
    assert D.values[0, 1] == 0.0


def test_common_scale_cancels_under_range():
    cat, cohort = _toy()
    D = global_dissimilarity(cohort, cat, "paper")
    # scale points by 2 and stretch time so each count doubles (duplicate every event)
    cat2 = SubtaskCatalog([Subtask("t", "standard", 10.0)], 3, 10.0)
    doubled = [
        make_exam(e.student_id, [(ev.subtask_id, ev.timestamp) for ev in e.events] * 2,
                  {k: 2 * v for k, v in e.points.items()})
        for e in cohort
    ]
    D2 = global_dissimilarity(doubled, cat2, "paper")
    assert np.allclose(D.values, D2.values, atol=1e-15)


def test_needs_two_students(small_catalog):
    with pytest.raises(InputError, match="at least 2"):
        global_dissimilarity([make_exam("a", [], {})], small_catalog)


def test_nan_points_are_rejected(small_catalog):
    cohort = [make_exam("a", [], {"1.1": float("nan")}), make_exam("b", [], {})]
    with pytest.raises(InputError, match="NaN"):
        global_dissimilarity(cohort, small_catalog)


def test_all_identical_equal_mode_gives_zero_matrix(small_catalog):
    ev = [("1.2", 61)]
    cohort = [make_exam(s, ev, {"1.2": 2}) for s in "abcd"]
    D = global_dissimilarity(cohort, small_catalog, "equal")
    assert not D.values.any()


def test_permutation_conjugates_matrix():
    rng = np.random.default_rng(0)
    cat = paper_catalog("test")
    cohort = make_cohort(9, cat, rng)
    D = global_dissimilarity(cohort, cat)
    perm = rng.permutation(9)
    Dp = global_dissimilarity([cohort[k] for k in perm], cat)
    assert np.array_equal(Dp.values, D.values[np.ix_(perm, perm)])


def test_matrix_is_deterministic_bitwise():
    rng = np.random.default_rng(5)
    cat = paper_catalog("comparison")
    cohort = make_cohort(15, cat, rng)
    a = global_dissimilarity(cohort, cat).values
    b = global_dissimilarity(list(cohort), cat).values
    assert a.tobytes() == b.tobytes()


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(3, 9), st.sampled_from(["paper", "equal"]),
       st.sampled_from(["range", "zscore", "none"]))
def test_pseudometric_properties(seed, n, scheme, normalize):
    rng = np.random.default_rng(seed)
    cat = paper_catalog("test")
    D = global_dissimilarity(make_cohort(n, cat, rng), cat, scheme, normalize).values
    assert np.array_equal(D, D.T)
    assert not np.diag(D).any()
    assert (D >= 0).all()
    tri = D[:, None, :] <= D[:, :, None] + D[None, :, :] + 1e-12
    assert tri.all()


def test_matrix_json_round_trip():
    rng = np.random.default_rng(1)
    cat = paper_catalog("test")
    D = global_dissimilarity(make_cohort(6, cat, rng), cat)
    doc = D.to_dict()
    assert doc["scheme"]["mode"] == "paper"
    assert len(doc["normalization_constants"]) == 34
    back = DissimilarityMatrix.from_dict(doc)
    assert back.ids == D.ids
    assert np.array_equal(back.values, D.values)


def test_matrix_csv_layout():
    cat, cohort = _toy()
    csv_text = global_dissimilarity(cohort, cat, "equal").to_csv()
    lines = csv_text.splitlines()
    assert lines[0] == "student_id,a,b,c"
    assert lines[1].split(",")[:3] == ["a", "0.0", "0.0"]


def test_matrix_validation():
    with pytest.raises(InputError, match="symmetric"):
        DissimilarityMatrix(["a", "b"], [[0, 1], [2, 0]])
    with pytest.raises(InputError, match="negative"):
        DissimilarityMatrix(["a", "b"], [[0, -1], [-1, 0]])
    with pytest.raises(InputError, match="NaN"):
        DissimilarityMatrix(["a", "b"], [[0, np.nan], [np.nan, 0]])


def test_transformer_api_and_fitted_constants():
    rng = np.random.default_rng(2)
    cat = paper_catalog("test")
    cohort = make_cohort(8, cat, rng)
    est = ExamDissimilarity(cat, scheme="equal", normalize="range")
    assert est.get_params()["scheme"] == "equal"
    cloned = clone(est)
    assert cloned.get_params() == est.get_params()
    D = est.fit(cohort).transform(cohort)
    assert np.array_equal(D.values, est.fit_transform(cohort).values)
    # transform on a subset reuses the fitted constants, so entries agree
    sub = est.transform(cohort[:4])
    assert np.allclose(sub.values, D.values[:4, :4])


def test_transformer_rejects_mismatched_scheme():
    est = ExamDissimilarity(paper_catalog("test"), scheme=build_scheme(paper_catalog("comparison")))
    rng = np.random.default_rng(0)
    with pytest.raises(InputError, match="scheme"):
        est.fit(make_cohort(3, paper_catalog("test"), rng))
