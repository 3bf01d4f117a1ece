import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from xlret.errors import MiningError, ShapeError
from xlret.mining import batch_sq_distances, mine_hard_negatives, select_negatives


def exhaustive_oracle(texts, images, ids):
    """Plain double loop: nearest eligible image, first index on ties."""
    neg, dist = [], []
    for i in range(len(texts)):
        best_j, best_d = None, None
        for j in range(len(images)):
            if ids[j] == ids[i]:
                continue
            d = float(sum((texts[i][k] - images[j][k]) ** 2 for k in range(len(texts[i]))))
            if best_d is None or d < best_d:
                best_j, best_d = j, d
        neg.append(best_j)
        dist.append(best_d)
    return neg, dist


class TestExamples:
    def test_matrix_example(self):
        rows = np.array([[0, 5, 9], [7, 0, 2], [4, 8, 0]], dtype=float)
        res = select_negatives(rows, ["a", "b", "c"])
        assert res.negative_index.tolist() == [1, 2, 0]
        assert res.negative_distance.tolist() == [5, 2, 4]

    def test_equidistant_lowest_index(self):
        texts = np.zeros((4, 2))
        images = np.array([[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, -1.0]])
        res = mine_hard_negatives(texts, images, ["a", "b", "c", "d"])
        assert res.negative_index.tolist() == [1, 0, 0, 0]

    def test_shared_id_excluded(self):
        texts = np.array([[0.0], [10.0], [20.0]])
        # image 1 is nearest to anchor 0 but is the same picture
        images = np.array([[0.0], [0.1], [5.0]])
        res = mine_hard_negatives(texts, images, ["x", "x", "y"])
        assert res.negative_index[0] == 2
        assert res.negative_index[1] == 2

    def test_no_eligible_negative(self):
        with pytest.raises(MiningError, match="anchor 0"):
            mine_hard_negatives(np.zeros((3, 2)), np.ones((3, 2)), ["a", "a", "a"])

    def test_row_count_mismatch(self):
        with pytest.raises(ShapeError):
            mine_hard_negatives(np.zeros((3, 2)), np.zeros((2, 2)), ["a", "b", "c"])


class TestOracle:
    def test_random_batches(self):
        rng = np.random.default_rng(2024)
        for _ in range(1000):
            n = int(rng.integers(2, 33))
            dim = int(rng.integers(1, 9))
            texts = rng.normal(size=(n, dim))
            images = rng.normal(size=(n, dim))
            ids = [f"i{k}" for k in rng.integers(0, max(2, n // 2), size=n)]
            if len(set(ids)) < 2:
                ids[0], ids[1] = "p", "q"
            res = mine_hard_negatives(texts, images, ids)
            neg, dist = exhaustive_oracle(texts.tolist(), images.tolist(), ids)
            assert res.negative_index.tolist() == neg
            np.testing.assert_allclose(res.negative_distance, dist, rtol=1e-12)

    def test_integer_ties(self):
        # coarse integer grids create many exact ties
        rng = np.random.default_rng(5)
        for _ in range(300):
            n = int(rng.integers(2, 17))
            texts = rng.integers(-2, 3, size=(n, 2)).astype(float)
            images = rng.integers(-2, 3, size=(n, 2)).astype(float)
            ids = [f"i{k}" for k in range(n)]
            res = mine_hard_negatives(texts, images, ids)
            neg, dist = exhaustive_oracle(texts.tolist(), images.tolist(), ids)
            assert res.negative_index.tolist() == neg
            assert res.negative_distance.tolist() == dist

    @settings(max_examples=60, deadline=None)
    @given(st.integers(2, 12), st.integers(1, 6), st.integers(0, 2**32 - 1))
    def test_validity_and_determinism(self, n, dim, seed):
        rng = np.random.default_rng(seed)
        texts = rng.normal(size=(n, dim))
        images = rng.normal(size=(n, dim))
        ids = [f"i{k % 2}" if k < 2 else f"i{k}" for k in range(n)]
        a = mine_hard_negatives(texts, images, ids)
        b = mine_hard_negatives(texts, images, ids)
        assert a.negative_index.tolist() == b.negative_index.tolist()
        for i, j in enumerate(a.negative_index):
            assert ids[j] != ids[i] and j != i


class TestDistances:
    def test_matches_definition_and_exact_zero(self, rng):
        a = rng.normal(size=(40, 7))
        d = batch_sq_distances(a, a)
        assert np.all(np.diag(d) == 0.0)
        np.testing.assert_allclose(d, ((a[:, None] - a[None]) ** 2).sum(-1), rtol=1e-13)
