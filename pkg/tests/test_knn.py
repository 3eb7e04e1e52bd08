import numpy as np
import pytest

from fpnetlab import knn
from fpnetlab.fpnet import BfmData


def toy(n_per=10, seed=0):
    rng = np.random.default_rng(seed)
    centres = rng.standard_normal((3, 28, 3, 1)) + 1j * rng.standard_normal((3, 28, 3, 1))
    v = np.concatenate([c + 0.05 * rng.standard_normal((n_per, 28, 3, 1)) for c in centres])
    return BfmData(v, np.repeat(np.arange(3), n_per))


def test_vectorize_shape():
    assert knn.vectorize(toy()).shape == (30, 28 * 3 * 2)


def test_perfect_on_separated_clusters():
    assert knn.knn_baseline(toy(seed=0), toy(seed=0), 3) == 1.0


def test_one_neighbour_hand_example():
    # two training points on a line; the query sits closer to the second
    v = np.zeros((2, 28, 3, 1), complex)
    v[1] += 1.0
    train = BfmData(v, np.array([0, 1]))
    q = np.full((1, 28, 3, 1), 0.8 + 0j)
    assert knn.knn_baseline(train, BfmData(q, np.array([1])), 1) == 1.0
    # distance weighting: with k=2 the closer label still wins
    assert knn.knn_baseline(train, BfmData(q, np.array([1])), 2) == 1.0


def test_k_validation():
    with pytest.raises(ValueError):
        knn.fit_knn(toy(), 0)
    with pytest.raises(ValueError, match="exceeds"):
        knn.fit_knn(toy(n_per=1), 5)


def test_unlabeled_rows_are_dropped():
    d = toy()
    mixed = BfmData(d.v, np.where(np.arange(30) < 3, -1, d.labels))
    assert knn.fit_knn(mixed, 1).n_samples_fit_ == 27


def test_select_prefers_smallest_k_on_ties():
    res = knn.knn_select(toy(), toy(seed=0), toy(seed=0), ks=(5, 1, 3))
    assert res.k == 1 and set(res.val_accuracy) == {1, 3, 5}
    assert res.test_accuracy == 1.0
    with pytest.raises(ValueError):
        knn.knn_select(toy(n_per=1), toy(), toy(), ks=(7,))
