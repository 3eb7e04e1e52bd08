"""Distance-weighted nearest-neighbour positioning on vectorized beamforming matrices."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from sklearn.neighbors import KNeighborsClassifier

from .fpnet import BfmData, _as_data

DEFAULT_KS = (1, 3, 5, 7, 9)


def vectorize(data: BfmData) -> np.ndarray:
    return data.images.reshape(len(data), -1).astype(np.float64)


def fit_knn(train, k: int) -> KNeighborsClassifier:
    train = _as_data(train).labeled()
    if k < 1:
        raise ValueError(f"k must be at least 1, got {k}")
    if k > len(train):
        raise ValueError(f"k={k} exceeds the {len(train)} training samples")
    return KNeighborsClassifier(n_neighbors=k, weights="distance", metric="euclidean").fit(vectorize(train), train.labels)


def knn_baseline(train, test, k: int) -> float:
    """Accuracy of a ``k``-neighbour Euclidean vote weighted by inverse distance."""
    test = _as_data(test).labeled()
    clf = fit_knn(train, k)
    return float(np.mean(clf.predict(vectorize(test)) == test.labels))


@dataclass
class KnnResult:
    k: int
    val_accuracy: dict[int, float]
    test_accuracy: float


def knn_select(train, val, test, ks=DEFAULT_KS) -> KnnResult:
    """Pick ``k`` on the validation split (smallest k among ties) and report test accuracy."""
    train = _as_data(train).labeled()
    usable = [k for k in ks if k <= len(train)]
    if not usable:
        raise ValueError("every candidate k exceeds the training size")
    scores = {k: knn_baseline(train, val, k) for k in usable}
    best = max(usable, key=lambda k: (scores[k], -k))
    return KnnResult(best, scores, knn_baseline(train, test, best))
