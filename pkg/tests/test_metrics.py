import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import brute_accuracy, brute_confusion, brute_gm, brute_pseudo_quality
from tras.metrics import (
    ClassGrouping,
    accuracy_suite,
    balancedness,
    confusion_matrix,
    evaluate,
    geometric_mean,
    pseudo_label_quality,
    write_confusion_csv,
)


def test_confusion_examples():
    assert confusion_matrix([0, 0, 1], [0, 1, 1], 2).tolist() == [[1, 1], [0, 1]]
    assert confusion_matrix([], [], 3).tolist() == [[0] * 3] * 3
    assert np.array_equal(confusion_matrix([0, 1, 2], [0, 1, 2], 3), np.eye(3, dtype=int))
    with pytest.raises(ValueError):
        confusion_matrix([0, 3], [0, 1], 3)
    with pytest.raises(ValueError):
        confusion_matrix([0], [0, 1], 3)


def test_accuracy_suite_examples():
    overall, recall, minority, empty = accuracy_suite([[1, 1], [0, 1]], [1])
    assert overall == pytest.approx(2 / 3)
    assert recall.tolist() == [0.5, 1.0] and minority == 1.0 and empty == []
    overall, recall, minority, _ = accuracy_suite(np.diag([3, 4, 5]), [2])
    assert overall == 1 and recall.tolist() == [1, 1, 1] and minority == 1
    _, recall, _, empty = accuracy_suite([[2, 0], [0, 0]], [1])
    assert recall.tolist() == [1.0, 0.0] and empty == [1]


def test_uniform_random_predictions_statistical():
    rng = np.random.default_rng(0)
    L, n = 5, 20000
    C = confusion_matrix(rng.integers(0, L, n), rng.integers(0, L, n), L)
    overall = accuracy_suite(C, [4])[0]
    sigma = math.sqrt((1 / L) * (1 - 1 / L) / n)
    assert abs(overall - 1 / L) < 3 * sigma


def test_geometric_mean_examples():
    assert geometric_mean([1, 1, 1]) == pytest.approx(1.0)
    assert geometric_mean([1, 0.25]) == pytest.approx(0.5)
    assert geometric_mean([1, 0], floor=1e-3) == pytest.approx(math.sqrt(1e-3))


@given(st.lists(st.floats(0, 1), min_size=1, max_size=20))
def test_gm_bounded_by_arithmetic_mean(recalls):
    floored = np.maximum(recalls, 1e-3)
    assert geometric_mean(recalls) <= floored.mean() + 1e-12
    assert 0 <= geometric_mean(recalls) <= 1 + 1e-12


def test_random_instances_against_brute_force():
    rng = np.random.default_rng(42)
    for _ in range(300):
        L = int(rng.integers(2, 21))
        n = int(rng.integers(0, 400))
        t, p = rng.integers(0, L, n), rng.integers(0, L, n)
        C = confusion_matrix(t, p, L)
        assert C.tolist() == brute_confusion(t.tolist(), p.tolist(), L)
        minority = sorted(rng.choice(L, int(rng.integers(1, L + 1)), replace=False).tolist())
        overall, recall, mino, _ = accuracy_suite(C, minority)
        b_overall, b_recall, b_mino = brute_accuracy(t.tolist(), p.tolist(), L, minority)
        assert abs(overall - b_overall) < 1e-12 and abs(mino - b_mino) < 1e-12
        np.testing.assert_allclose(recall, b_recall, atol=1e-12, rtol=0)
        assert abs(geometric_mean(recall, 1e-3) - brute_gm(b_recall, 1e-3)) < 1e-12


def test_class_permutation_equivariance():
    rng = np.random.default_rng(1)
    L = 6
    t, p = rng.integers(0, L, 300), rng.integers(0, L, 300)
    perm = rng.permutation(L)
    o1, r1, _, _ = accuracy_suite(confusion_matrix(t, p, L), [0])
    o2, r2, _, _ = accuracy_suite(confusion_matrix(perm[t], perm[p], L), [0])
    assert o1 == pytest.approx(o2)
    np.testing.assert_allclose(r2[perm], r1)
    assert geometric_mean(r1) == pytest.approx(geometric_mean(r2))


def test_default_grouping():
    g = ClassGrouping.default(10)
    assert g.head == (0, 1, 2) and g.torso == (3, 4, 5, 6) and g.tail == (7, 8, 9)
    assert g.minority == (5, 6, 7, 8, 9)
    assert ClassGrouping.default(5).minority == (3, 4)
    g = ClassGrouping.default(4, counts=[1, 9, 5, 3])
    assert g.head == (1,) and g.tail == (0,)
    with pytest.raises(ValueError):
        ClassGrouping((0,), (1,), (1,), (0,))


GROUPING3 = ClassGrouping((0,), (1,), (2,), (2,))


def test_pseudo_quality_examples():
    q = pseudo_label_quality([0, 1, 2], [0, 1, 2], [True] * 3, GROUPING3)
    assert all(q[f"{g}_{m}"] == 1 for g in ("head", "torso", "tail") for m in ("precision", "recall"))
    q = pseudo_label_quality([0, 1, 2], [0, 1, 2], [False] * 3, GROUPING3)
    assert q["tail_recall"] == 0 and q["tail_precision"] == 0 and "tail_precision" in q["undefined"]
    # hand enumeration: truths [0,0,1,1,2,2], predictions [0,2,1,1,2,0], one masked out
    q = pseudo_label_quality([0, 0, 1, 1, 2, 2], [0, 2, 1, 1, 2, 0],
                             [True, True, True, False, True, True], GROUPING3)
    assert q["head_precision"] == 0.5 and q["head_recall"] == 0.5
    assert q["torso_precision"] == 1.0 and q["torso_recall"] == 0.5
    assert q["tail_precision"] == 0.5 and q["tail_recall"] == 0.5


def test_pseudo_quality_random_against_brute_force():
    rng = np.random.default_rng(3)
    for _ in range(300):
        L = int(rng.integers(3, 12))
        g = ClassGrouping.default(L)
        n = int(rng.integers(0, 60))
        h, p, m = rng.integers(0, L, n), rng.integers(0, L, n), rng.random(n) < 0.6
        q = pseudo_label_quality(h, p, m, g)
        ref = brute_pseudo_quality(h.tolist(), p.tolist(), m.tolist(),
                                   {"head": set(g.head), "torso": set(g.torso), "tail": set(g.tail)})
        for k, v in ref.items():
            assert abs(q[k] - v) < 1e-12


def test_balancedness():
    assert balancedness(np.full((4, 3), 1 / 3)) == pytest.approx(0, abs=1e-15)
    assert balancedness([[1.0, 0.0], [1.0, 0.0]]) == pytest.approx(math.log(2))
    expected = 0.75 * math.log(1.5) + 0.25 * math.log(0.5)
    assert balancedness([[1.0, 0.0], [0.5, 0.5]]) == pytest.approx(expected)
    assert expected == pytest.approx(0.1308, abs=1e-4)
    with pytest.raises(ValueError):
        balancedness([])


def test_evaluate_report_and_csv(tmp_path):
    g = ClassGrouping.default(3)
    probs = np.array([[0.8, 0.1, 0.1], [0.2, 0.7, 0.1], [0.1, 0.1, 0.8], [0.6, 0.3, 0.1]])
    r = evaluate([0, 1, 2, 2], probs.argmax(1), probs, g)
    assert r.overall_accuracy == 0.75 and np.array(r.confusion).sum(axis=1).tolist() == [1, 1, 2]
    assert set(r.to_dict()) >= {"gm", "per_class_recall", "balancedness", "group_precision"}
    write_confusion_csv(tmp_path / "c.csv", r.confusion)
    assert (tmp_path / "c.csv").read_text().splitlines()[1] == "1,0,0"
