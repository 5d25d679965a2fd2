"""Least-squares gradient boosting with shrinkage."""

from dataclasses import dataclass, field
import json
import math

import numpy as np

from ..errors import ParameterError, RangeError, ShapeError
from .tree import RegressionTree, SortCache, _as_matrix, _fit_tree_checked, check_training_data

FORMAT_NAME = "mlreact.gbrt"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class GbrtHyperParams:
    """Defaults are depth 2, 50 trees, learning rate 0.1."""

    max_depth: int = 2
    n_estimators: int = 50
    learning_rate: float = 0.1
    min_samples_leaf: int = 1

    def __post_init__(self):
        for name in ("max_depth", "n_estimators", "min_samples_leaf"):
            v = getattr(self, name)
            if isinstance(v, bool) or int(v) != v or v < 1:
                raise ParameterError(f"{name} must be a positive integer, got {v!r}")
        if not (0.0 < self.learning_rate <= 1.0):
            raise ParameterError(f"learning_rate must lie in (0, 1], got {self.learning_rate!r}")

    def to_dict(self):
        return {
            "max_depth": int(self.max_depth),
            "n_estimators": int(self.n_estimators),
            "learning_rate": float(self.learning_rate),
            "min_samples_leaf": int(self.min_samples_leaf),
        }


@dataclass(frozen=True, eq=False)
class GbrtModel:
    base_value: float
    trees: tuple
    learning_rate: float
    n_features: int
    feature_names: tuple = ()
    hyper: GbrtHyperParams = field(default_factory=GbrtHyperParams)
    train_mse: tuple = ()

    @property
    def n_trees(self):
        return len(self.trees)

    def to_json(self):
        doc = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "base_value": self.base_value,
            "learning_rate": self.learning_rate,
            "n_features": self.n_features,
            "feature_names": list(self.feature_names),
            "hyper": self.hyper.to_dict(),
            "train_mse": list(self.train_mse),
            "trees": [t.to_dict() for t in self.trees],
        }
        return json.dumps(doc)

    @classmethod
    def from_json(cls, text):
        doc = json.loads(text)
        if doc.get("format") != FORMAT_NAME:
            raise ParameterError(f"not a {FORMAT_NAME} document")
        if doc.get("version") != FORMAT_VERSION:
            raise ParameterError(f"unsupported model version {doc.get('version')!r}")
        return cls(
            base_value=float(doc["base_value"]),
            trees=tuple(RegressionTree.from_dict(t) for t in doc["trees"]),
            learning_rate=float(doc["learning_rate"]),
            n_features=int(doc["n_features"]),
            feature_names=tuple(doc.get("feature_names", ())),
            hyper=GbrtHyperParams(**doc["hyper"]),
            train_mse=tuple(doc.get("train_mse", ())),
        )


def _sq_mean(r):
    return float(r @ r) / len(r)


def fit_gbrt(features, targets, hyper=None, feature_names=()):
    """Boost ``hyper.n_estimators`` trees on squared-loss residuals.

    The ensemble starts at the target mean; each stage fits a tree to the
    current residuals and adds ``learning_rate`` times its output.
    ``model.train_mse[m]`` is the training MSE after ``m`` stages.
    """
    hyper = hyper or GbrtHyperParams()
    X, y = check_training_data(features, targets)
    if feature_names and len(feature_names) != X.shape[1]:
        raise ShapeError("feature_names length does not match feature count")
    gamma = float(hyper.learning_rate)
    base = math.fsum(y) / len(y)
    pred = np.full(len(y), base)
    cache = SortCache(X)
    trees = []
    losses = [_sq_mean(y - pred)]
    for _ in range(hyper.n_estimators):
        resid = y - pred
        tree, leaf_of = _fit_tree_checked(
            X, resid, hyper.max_depth, hyper.min_samples_leaf, cache
        )
        pred = pred + gamma * tree.value[leaf_of]
        trees.append(tree)
        losses.append(_sq_mean(y - pred))
    return GbrtModel(
        base_value=base,
        trees=tuple(trees),
        learning_rate=gamma,
        n_features=X.shape[1],
        feature_names=tuple(feature_names),
        hyper=hyper,
        train_mse=tuple(losses),
    )


def staged_predict(model, features, upto_m):
    """Prediction using only the first ``upto_m`` trees."""
    if upto_m < 0 or upto_m > model.n_trees:
        raise RangeError(f"upto_m={upto_m} outside [0, {model.n_trees}]")
    X = _as_matrix(features)
    if X.shape[1] != model.n_features:
        raise ShapeError(f"model expects {model.n_features} features, got {X.shape[1]}")
    pred = np.full(X.shape[0], model.base_value)
    for tree in model.trees[:upto_m]:
        pred = pred + model.learning_rate * tree.predict(X)
    return pred


def predict(model, features):
    return staged_predict(model, features, model.n_trees)


def iter_staged_predict(model, features):
    """Yield predictions after 0, 1, ..., M stages."""
    X = _as_matrix(features)
    if X.shape[1] != model.n_features:
        raise ShapeError(f"model expects {model.n_features} features, got {X.shape[1]}")
    pred = np.full(X.shape[0], model.base_value)
    yield pred
    for tree in model.trees:
        pred = pred + model.learning_rate * tree.predict(X)
        yield pred
