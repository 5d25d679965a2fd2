"""Depth-limited CART regression trees with exact greedy splits."""

from dataclasses import dataclass

import numpy as np

from ..errors import DataError, FitError, ParameterError, ShapeError
from . import _backend


@dataclass(frozen=True, eq=False)
class RegressionTree:
    """Flat array representation of a binary tree.

    Internal nodes have ``feature >= 0`` and route a row left iff
    ``x[feature] < threshold``.  Leaves have ``feature == -1`` and carry
    ``value``, the mean of the training targets routed to them.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    n_samples: np.ndarray

    @property
    def n_nodes(self):
        return len(self.feature)

    @property
    def is_leaf(self):
        return self.feature < 0

    @property
    def depth(self):
        depths = np.zeros(self.n_nodes, dtype=int)
        for node in range(self.n_nodes):
            if self.feature[node] >= 0:
                depths[self.left[node]] = depths[node] + 1
                depths[self.right[node]] = depths[node] + 1
        return int(depths.max())

    def apply(self, X):
        X = _as_matrix(X)
        return _backend.kernel().apply_tree(X, self.feature, self.threshold, self.left, self.right)

    def predict(self, X):
        return self.value[self.apply(X)]

    def to_dict(self):
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "n_samples": self.n_samples.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            feature=np.asarray(d["feature"], dtype=np.int32),
            threshold=np.asarray(d["threshold"], dtype=np.float64),
            left=np.asarray(d["left"], dtype=np.int32),
            right=np.asarray(d["right"], dtype=np.int32),
            value=np.asarray(d["value"], dtype=np.float64),
            n_samples=np.asarray(d["n_samples"], dtype=np.int64),
        )

    def same_as(self, other):
        """Bitwise structural equality."""
        return all(
            np.array_equal(getattr(self, k), getattr(other, k))
            for k in ("feature", "threshold", "left", "right", "value", "n_samples")
        )


def _as_matrix(X):
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise ShapeError(f"features must be 2-D, got shape {X.shape}")
    return X


def check_training_data(X, y):
    X = _as_matrix(X)
    y = np.ascontiguousarray(y, dtype=np.float64).ravel()
    if X.shape[0] == 0 or y.size == 0:
        raise FitError("cannot fit on empty input")
    if X.shape[0] != y.size:
        raise ShapeError(f"{X.shape[0]} feature rows but {y.size} targets")
    if not (np.isfinite(X).all() and np.isfinite(y).all()):
        raise DataError("features and targets must be finite (missing values are not supported)")
    return X, y


class SortCache:
    """Per-feature presort of ``X`` with its tie groups.

    ``order(y)`` returns rows sorted by (feature value, target).  Ordering
    ties by target makes every running sum independent of the input row
    order, which is what makes fits permutation invariant.  Only features
    with repeated values need re-sorting when the targets change.
    """

    def __init__(self, X):
        n, p = X.shape
        self._base = np.empty((p, n), dtype=np.int32)
        self._groups = []
        for f in range(p):
            o = np.argsort(X[:, f], kind="stable")
            self._base[f] = o
            xs = X[o, f]
            if n > 1 and np.any(xs[1:] == xs[:-1]):
                gid = np.concatenate(([0], np.cumsum(xs[1:] != xs[:-1])))
                self._groups.append((f, gid))

    def order(self, y):
        order = self._base.copy()
        for f, gid in self._groups:
            o = self._base[f]
            order[f] = o[np.lexsort((y[o], gid))]
        return order


def canonical_order(X, y):
    return SortCache(X).order(y)


def fit_tree(features, targets, max_depth=2, min_samples_leaf=1):
    """Fit a regression tree by exhaustive greedy search on SSE.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values.  Among equal-gain splits the lowest feature index wins, then the
    smallest threshold.  Growth stops at ``max_depth``, on pure nodes, and
    where no split leaves ``min_samples_leaf`` rows on both sides.
    """
    if max_depth < 0 or int(max_depth) != max_depth:
        raise ParameterError("max_depth must be a non-negative integer")
    if min_samples_leaf < 1:
        raise ParameterError("min_samples_leaf must be >= 1")
    X, y = check_training_data(features, targets)
    tree, _ = _fit_tree_checked(X, y, int(max_depth), int(min_samples_leaf))
    return tree


def _fit_tree_checked(X, y, max_depth, min_samples_leaf, cache=None):
    order = (cache or SortCache(X)).order(y)
    feature, threshold, left, right, nsamp, value, leaf_of = _backend.kernel().build_tree(
        X, y, order, max_depth, min_samples_leaf
    )
    tree = RegressionTree(feature, threshold, left, right, value, nsamp)
    return tree, leaf_of
