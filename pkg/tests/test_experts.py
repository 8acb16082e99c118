import numpy as np
import pytest

from conformal_crew.conformal import PredictionSet
from conformal_crew.data import AnnotationTable, ClassifierOutputs
from conformal_crew.errors import DataError, NoAnnotations
from conformal_crew.experts import (
    ConfusionMatrix,
    ExpertPool,
    build_pool,
    empirical_distribution,
    estimate_confusion,
    final_prediction_empirical,
    final_prediction_oracle,
    initial_prediction,
    read_confusion,
    write_confusion,
)


def _outputs_two_class():
    # three true-0 instances and one true-1 instance
    probs = np.array([[0.9, 0.1]] * 3 + [[0.2, 0.8]])
    return ClassifierOutputs(
        ids=("a", "b", "c", "d"),
        true_labels=np.array([0, 0, 0, 1]),
        probs=probs,
    )


def _table(rows, n):
    return AnnotationTable(
        instance_ids=tuple(r[0] for r in rows),
        expert_ids=tuple(r[1] for r in rows),
        labels=np.array([r[2] for r in rows]),
        n_labels=n,
    )


def _pset(labels, n):
    return PredictionSet(labels=tuple(labels), n_labels=n, source="full")


def _freq_check(draw, n, expected, draws=100_000, seed=0):
    rng = np.random.default_rng(seed)
    counts = np.zeros(n)
    for _ in range(draws):
        counts[draw(rng)] += 1
    freq = counts / draws
    for j in range(n):
        p = expected[j]
        tol = 3 * np.sqrt(max(p * (1 - p), 1e-12) / draws)
        assert abs(freq[j] - p) <= max(tol, 1e-9), (j, freq[j], p)


class TestConfusionMatrix:
    def test_rejects_nonsquare(self):
        with pytest.raises(DataError):
            ConfusionMatrix(matrix=np.ones((2, 3)) / 3, smoothing=0.0)

    def test_rejects_nonstochastic(self):
        with pytest.raises(DataError):
            ConfusionMatrix(matrix=np.array([[0.5, 0.4], [0.5, 0.5]]), smoothing=0.0)

    def test_diagonal_mass(self):
        m = ConfusionMatrix(matrix=np.array([[0.9, 0.1], [0.3, 0.7]]), smoothing=0.0)
        assert m.diagonal_mass() == pytest.approx(0.8)


class TestEstimateConfusion:
    def test_mle_no_smoothing(self):
        outputs = _outputs_two_class()
        table = _table([("a", "e", 0), ("b", "e", 0), ("c", "e", 1)], 2)
        got = estimate_confusion(table, outputs, {"a", "b", "c"}, smoothing=0.0)
        assert np.allclose(got.matrix[0], [2 / 3, 1 / 3])

    def test_mle_add_one(self):
        outputs = _outputs_two_class()
        table = _table([("a", "e", 0), ("b", "e", 0), ("c", "e", 1)], 2)
        got = estimate_confusion(table, outputs, {"a", "b", "c"}, smoothing=1.0)
        assert np.allclose(got.matrix[0], [3 / 5, 2 / 5])

    def test_uniform_fallback_for_unseen_row(self):
        outputs = _outputs_two_class()
        table = _table([("a", "e", 0), ("b", "e", 0), ("c", "e", 1)], 2)
        got = estimate_confusion(table, outputs, {"a", "b", "c"}, smoothing=0.0)
        assert np.allclose(got.matrix[1], [0.5, 0.5])

    def test_positive_entries_with_smoothing(self):
        outputs = _outputs_two_class()
        table = _table([("a", "e", 0)], 2)
        got = estimate_confusion(table, outputs, {"a"}, smoothing=1.0)
        assert np.all(got.matrix > 0)

    def test_row_order_invariance(self):
        outputs = _outputs_two_class()
        rows = [("a", "e", 0), ("b", "f", 1), ("c", "e", 0), ("d", "f", 1)]
        fwd = estimate_confusion(_table(rows, 2), outputs, set("abcd"), 1.0)
        rev = estimate_confusion(_table(rows[::-1], 2), outputs, set("abcd"), 1.0)
        assert np.array_equal(fwd.matrix, rev.matrix)

    def test_no_matching_rows(self):
        outputs = _outputs_two_class()
        table = _table([("a", "e", 0)], 2)
        with pytest.raises(NoAnnotations):
            estimate_confusion(table, outputs, {"d"}, smoothing=1.0)


class TestEmpiricalDistribution:
    def test_normalizes(self):
        table = _table([("a", "x", 0), ("a", "y", 2), ("a", "z", 2)], 3)
        assert np.allclose(empirical_distribution(table, "a"), [1 / 3, 0, 2 / 3])

    def test_one_hot(self):
        table = _table([("a", "x", 0)] * 5, 3)
        assert np.allclose(empirical_distribution(table, "a"), [1, 0, 0])

    def test_empty(self):
        table = _table([("a", "x", 0)], 3)
        with pytest.raises(NoAnnotations):
            empirical_distribution(table, "b")


class TestInitialPrediction:
    def test_oracle_one_hot(self):
        m = ConfusionMatrix(matrix=np.array([[0.0, 1.0], [0.0, 1.0]]), smoothing=0.0)
        rng = np.random.default_rng(0)
        assert all(
            initial_prediction("oracle", m, 0, None, rng) == 1 for _ in range(20)
        )

    def test_empirical_one_hot(self):
        m = ConfusionMatrix(matrix=np.eye(3), smoothing=0.0)
        rng = np.random.default_rng(0)
        psi = np.array([0.0, 1.0, 0.0])
        assert all(
            initial_prediction("empirical", m, 0, psi, rng) == 1 for _ in range(20)
        )

    def test_oracle_frequency(self):
        m = ConfusionMatrix(matrix=np.array([[0.5, 0.5], [0.5, 0.5]]), smoothing=0.0)
        _freq_check(
            lambda rng: initial_prediction("oracle", m, 0, None, rng),
            2,
            [0.5, 0.5],
        )

    def test_unknown_mode(self):
        m = ConfusionMatrix(matrix=np.eye(2), smoothing=0.0)
        with pytest.raises(ValueError):
            initial_prediction("bogus", m, 0, None, np.random.default_rng(0))


class TestFinalOracle:
    def test_restricted_distribution(self):
        m = ConfusionMatrix(
            matrix=np.array([[0.6, 0.3, 0.1], [0.1, 0.8, 0.1], [0.1, 0.1, 0.8]]),
            smoothing=0.0,
        )
        pset = _pset([0, 2], 3)
        _freq_check(
            lambda rng: final_prediction_oracle(m, 0, pset, rng),
            3,
            [6 / 7, 0.0, 1 / 7],
        )

    def test_singleton(self):
        m = ConfusionMatrix(matrix=np.full((3, 3), 1 / 3), smoothing=0.0)
        pset = _pset([1], 3)
        rng = np.random.default_rng(1)
        assert all(final_prediction_oracle(m, 0, pset, rng) == 1 for _ in range(20))

    def test_zero_mass_uniform_fallback(self):
        row = np.array([1.0, 0.0, 0.0])
        m = ConfusionMatrix(matrix=np.vstack([row, row, row]), smoothing=0.0)
        pset = _pset([1, 2], 3)
        _freq_check(
            lambda rng: final_prediction_oracle(m, 0, pset, rng),
            3,
            [0.0, 0.5, 0.5],
        )

    def test_always_in_set(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            n = int(rng.integers(2, 6))
            matrix = rng.dirichlet(np.ones(n), size=n)
            m = ConfusionMatrix(matrix=matrix, smoothing=0.0)
            size = int(rng.integers(1, n + 1))
            labels = sorted(rng.choice(n, size=size, replace=False).tolist())
            pset = _pset(labels, n)
            y = int(rng.integers(0, n))
            assert final_prediction_oracle(m, y, pset, rng) in pset


class TestFinalEmpirical:
    def test_anchored_distribution(self):
        m = ConfusionMatrix(
            matrix=np.array([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1], [0.1, 0.2, 0.7]]),
            smoothing=0.0,
        )
        psi = np.array([0.0, 1.0, 0.0])
        pset = _pset([0, 2], 3)
        # anchor is always 1; row 1 restricted to {0, 2} is [0.2, 0.1] -> [2/3, 1/3]
        _freq_check(
            lambda rng: final_prediction_empirical(psi, m, pset, rng),
            3,
            [2 / 3, 0.0, 1 / 3],
        )

    def test_full_set_identity(self):
        m = ConfusionMatrix(
            matrix=np.array([[0.7, 0.2, 0.1], [0.2, 0.7, 0.1], [0.1, 0.2, 0.7]]),
            smoothing=0.0,
        )
        psi = np.array([0.0, 0.0, 1.0])
        pset = _pset([0, 1, 2], 3)
        _freq_check(
            lambda rng: final_prediction_empirical(psi, m, pset, rng),
            3,
            m.matrix[2],
        )

    def test_always_in_set(self):
        m = ConfusionMatrix(matrix=np.eye(3), smoothing=0.0)
        psi = np.array([1.0, 0.0, 0.0])
        pset = _pset([1, 2], 3)
        rng = np.random.default_rng(4)
        for _ in range(50):
            assert final_prediction_empirical(psi, m, pset, rng) in pset


class TestBuildPool:
    def test_shared_matrix(self):
        base = ConfusionMatrix(matrix=np.eye(2), smoothing=0.0)
        pool = build_pool(base, 4)
        assert pool.h == 4
        assert pool.expert_ids == ("e0", "e1", "e2", "e3")
        assert all(m is base for m in pool.matrices)

    def test_jitter_heterogeneous(self):
        base = ConfusionMatrix(
            matrix=np.array([[0.8, 0.2], [0.3, 0.7]]), smoothing=0.0
        )
        pool = build_pool(base, 3, jitter=50.0, rng=np.random.default_rng(0))
        assert not np.array_equal(pool.matrices[0].matrix, pool.matrices[1].matrix)
        for m in pool.matrices:
            assert np.allclose(m.matrix.sum(axis=1), 1.0)

    def test_take(self, small_pool):
        sub = small_pool.take(2)
        assert sub.h == 2
        assert sub.expert_ids == small_pool.expert_ids[:2]

    def test_pool_label_space_checked(self):
        a = ConfusionMatrix(matrix=np.eye(2), smoothing=0.0)
        b = ConfusionMatrix(matrix=np.eye(3), smoothing=0.0)
        with pytest.raises(DataError):
            ExpertPool(expert_ids=("x", "y"), matrices=(a, b))


class TestConfusionCsv:
    def test_round_trip(self, tmp_path):
        matrix = np.array([[0.8, 0.15, 0.05], [0.1, 0.7, 0.2], [0.25, 0.25, 0.5]])
        original = ConfusionMatrix(matrix=matrix, smoothing=1.0)
        path = tmp_path / "conf.csv"
        write_confusion(original, str(path))
        loaded = read_confusion(str(path))
        assert np.array_equal(loaded.matrix, original.matrix)
        # smoothing is not part of the file format
        assert loaded.smoothing == 0.0
