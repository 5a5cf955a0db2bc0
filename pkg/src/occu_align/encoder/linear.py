"""One-vs-rest logistic classifier on sparse features."""

from __future__ import annotations

from typing import Hashable, Sequence

import numpy as np
from scipy import sparse

from ..errors import LengthMismatch, SingleClass


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


class LinearBaseline:
    """Per-class logistic regressions trained jointly by Nesterov-accelerated
    full-batch gradient descent. Prediction is the argmax of the class
    scores; ties go to the smallest label."""

    def __init__(self, l2: float = 1e-4, learning_rate: float = 2.0, iterations: int = 300):
        self.l2 = l2
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.classes_: list = []
        self.coef_: np.ndarray | None = None
        self.intercept_: np.ndarray | None = None
        self._cols: np.ndarray | None = None
        self._n_features = 0

    def fit(self, x, labels: Sequence[Hashable]) -> "LinearBaseline":
        x = sparse.csr_matrix(x, dtype=np.float64)
        if x.shape[0] != len(labels):
            raise LengthMismatch("features and labels differ in length")
        self.classes_ = sorted(set(labels))
        if len(self.classes_) < 2:
            raise SingleClass("linear baseline needs at least two classes")
        self._n_features = x.shape[1]
        cols, inverse = np.unique(x.indices, return_inverse=True)
        self._cols = cols
        xc = sparse.csr_matrix((x.data, inverse, x.indptr), shape=(x.shape[0], len(cols)))
        index = {c: i for i, c in enumerate(self.classes_)}
        n, c = x.shape[0], len(self.classes_)
        y = np.zeros((n, c))
        y[np.arange(n), [index[l] for l in labels]] = 1.0

        w = np.zeros((len(cols), c))
        b = np.zeros(c)
        w_prev, b_prev = w.copy(), b.copy()
        lr = self.learning_rate
        for t in range(1, self.iterations + 1):
            mom = (t - 1) / (t + 2)
            vw = w + mom * (w - w_prev)
            vb = b + mom * (b - b_prev)
            p = _sigmoid(xc @ vw + vb)
            r = (p - y) / n
            gw = xc.T @ r + self.l2 * vw
            gb = r.sum(axis=0)
            w_prev, b_prev = w, b
            w = vw - lr * gw
            b = vb - lr * gb
        self.coef_, self.intercept_ = w, b
        return self

    def decision_function(self, x) -> np.ndarray:
        if self.coef_ is None:
            raise RuntimeError("classifier is not fitted")
        x = sparse.csr_matrix(x, dtype=np.float64)
        return np.asarray(x[:, self._cols] @ self.coef_) + self.intercept_

    def predict(self, x) -> list:
        scores = self.decision_function(x)
        return [self.classes_[i] for i in np.argmax(scores, axis=1)]


def linear_baseline_train(features, labels: Sequence[Hashable], **kwargs) -> LinearBaseline:
    return LinearBaseline(**kwargs).fit(features, labels)
