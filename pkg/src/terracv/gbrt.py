"""Least-squares gradient boosting on exact greedy regression trees.

Stagewise boosting with a constant base model and depth-bounded trees fit to
residuals.  Splits minimise squared error over every (feature, threshold)
candidate; equal gains resolve to the lowest feature index, then the lowest
threshold, so fits are reproducible across platforms and kernel backends.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels

logger = logging.getLogger(__name__)

SERIAL_VERSION = 1


@dataclass(frozen=True)
class GBRTParams:
    """Boosting hyperparameters.  Defaults suit desk-scale tabular runs."""

    n_trees: int = 200
    max_depth: int = 6
    learning_rate: float = 0.1
    min_samples_leaf: int = 5
    subsample_rows: float = 1.0
    seed: int = 0

    def validate(self) -> None:
        if self.n_trees < 0:
            raise ValueError("n_trees must be >= 0")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.min_samples_leaf < 1:
            raise ValueError("min_samples_leaf must be >= 1")
        if not 0 < self.subsample_rows <= 1:
            raise ValueError("subsample_rows must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "min_samples_leaf": self.min_samples_leaf,
            "subsample_rows": self.subsample_rows,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GBRTParams":
        return cls(**d)


class _Tree:
    """Flat array representation of one regression tree.

    ``feature[i] == -1`` marks a leaf; routing is ``x <= threshold`` left.
    """

    __slots__ = ("feature", "threshold", "left", "right", "value")

    def __init__(self, feature, threshold, left, right, value):
        self.feature = np.asarray(feature, dtype=np.int32)
        self.threshold = np.asarray(threshold, dtype=np.float64)
        self.left = np.asarray(left, dtype=np.int32)
        self.right = np.asarray(right, dtype=np.int32)
        self.value = np.asarray(value, dtype=np.float64)

    def predict_into(self, X, out):
        _kernels.apply_tree(self.feature, self.threshold, self.left,
                            self.right, self.value, X, out)
        return out

    def to_nested(self, node=0):
        if self.feature[node] < 0:
            return {"leaf": float(self.value[node])}
        return {
            "feature": int(self.feature[node]),
            "threshold": float(self.threshold[node]),
            "left": self.to_nested(int(self.left[node])),
            "right": self.to_nested(int(self.right[node])),
        }

    @classmethod
    def from_nested(cls, nested):
        feature, threshold, left, right, value = [], [], [], [], []

        def build(nd):
            i = len(feature)
            feature.append(-1)
            threshold.append(0.0)
            left.append(-1)
            right.append(-1)
            value.append(0.0)
            if "leaf" in nd:
                value[i] = float(nd["leaf"])
            else:
                feature[i] = int(nd["feature"])
                threshold[i] = float(nd["threshold"])
                left[i] = build(nd["left"])
                right[i] = build(nd["right"])
            return i

        build(nested)
        return cls(feature, threshold, left, right, value)


class _TreeGrower:
    """Grows one tree by recursively partitioning presorted row tables.

    A node's table lists its rows in ascending order of each feature, so the
    split kernel never sorts; children inherit filtered tables, keeping the
    per-level work linear in the number of rows.
    """

    def __init__(self, X, residual, max_depth, min_leaf, importances):
        self.X = X
        self.residual = residual
        self.max_depth = max_depth
        self.min_leaf = min_leaf
        self.importances = importances
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.value = []

    def grow(self, order):
        root = self._build(order, 0)
        assert root == 0
        return _Tree(self.feature, self.threshold, self.left, self.right, self.value)

    def _new_node(self):
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def _leaf_value(self, order):
        return float(np.mean(self.residual[order[0]]))

    def _build(self, order, depth):
        node = self._new_node()
        p, m = order.shape
        if depth >= self.max_depth or m < 2 * self.min_leaf:
            self.value[node] = self._leaf_value(order)
            return node

        j, pos, gain, lo, hi = _kernels.best_split(
            order, self.X, self.residual, self.min_leaf)
        if j < 0:
            self.value[node] = self._leaf_value(order)
            return node

        thr = (lo + hi) / 2.0
        if thr >= hi:  # midpoint rounded up to the right value; keep routing consistent
            thr = lo
        self.importances[j] += gain
        self.feature[node] = j
        self.threshold[node] = float(thr)

        left_rows = order[j, :pos]
        in_left = np.zeros(self.X.shape[0], dtype=bool)
        in_left[left_rows] = True
        mask = in_left[order]
        left_order = order[mask].reshape(p, pos)
        right_order = order[~mask].reshape(p, m - pos)
        self.left[node] = self._build(left_order, depth + 1)
        self.right[node] = self._build(right_order, depth + 1)
        return node


class GradientBoostedTrees:
    """Boosted regression tree ensemble with a constant base prediction.

    Use :func:`fit_gbrt` to construct; instances are immutable after fitting
    and safe to share across threads.
    """

    def __init__(self, params: GBRTParams):
        params.validate()
        self.params = params
        self.base_: float = 0.0
        self.trees_: list[_Tree] = []
        self.n_features_: int = 0
        self.train_rmse_: tuple[float, ...] = ()
        self.degenerate_: str | None = None
        self._importances: np.ndarray | None = None

    # -- fitting -----------------------------------------------------------

    def fit(self, X, y) -> "GradientBoostedTrees":
        X = np.ascontiguousarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        n, p = X.shape
        if y.shape != (n,):
            raise ValueError("X and y lengths differ")
        if n < 2 * self.params.min_samples_leaf:
            raise ValueError(
                f"need at least {2 * self.params.min_samples_leaf} rows, got {n}"
            )
        if not np.isfinite(X).all():
            raise ValueError("X contains non-finite values")
        if not np.isfinite(y).all():
            raise ValueError("y contains non-finite values")

        self.n_features_ = p
        self._importances = np.zeros(p, dtype=np.float64)
        self.base_ = float(np.mean(y))
        self.trees_ = []

        if p == 0:
            self.degenerate_ = "no features; constant-mean predictor"
        elif np.ptp(y) == 0.0:
            self.degenerate_ = "constant target; constant-mean predictor"
        if self.degenerate_ is not None:
            logger.warning("gbrt degenerate fit: %s", self.degenerate_)
            self.train_rmse_ = (self._rmse(y, np.full(n, self.base_)),)
            return self

        rng = np.random.default_rng(self.params.seed)
        current = np.full(n, self.base_)
        losses = [self._rmse(y, current)]
        buf = np.empty(n, dtype=np.float64)
        m_sub = int(round(self.params.subsample_rows * n))
        m_sub = max(1, min(n, m_sub))
        # per-feature row order, computed once and partitioned down the trees
        full_order = np.ascontiguousarray(np.argsort(X.T, axis=1, kind="stable"),
                                          dtype=np.int32)

        for _ in range(self.params.n_trees):
            residual = y - current
            if self.params.subsample_rows < 1.0:
                rows = rng.choice(n, size=m_sub, replace=False)
                in_sample = np.zeros(n, dtype=bool)
                in_sample[rows] = True
                root_order = full_order[in_sample[full_order]].reshape(p, m_sub)
            else:
                root_order = full_order
            grower = _TreeGrower(X, residual, self.params.max_depth,
                                 self.params.min_samples_leaf, self._importances)
            tree = grower.grow(root_order)
            self.trees_.append(tree)
            tree.predict_into(X, buf)
            current = current + self.params.learning_rate * buf
            losses.append(self._rmse(y, current))

        self.train_rmse_ = tuple(losses)
        return self

    @staticmethod
    def _rmse(y, pred):
        d = y - pred
        return float(np.sqrt(np.mean(d * d)))

    # -- inference ---------------------------------------------------------

    def predict(self, X) -> np.ndarray:
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be 2-dimensional")
        if self.n_features_ and X.shape[1] != self.n_features_:
            raise ValueError(
                f"expected {self.n_features_} features, got {X.shape[1]}"
            )
        out = np.full(X.shape[0], self.base_, dtype=np.float64)
        if not self.trees_:
            return out
        buf = np.empty(X.shape[0], dtype=np.float64)
        for tree in self.trees_:
            tree.predict_into(X, buf)
            out += self.params.learning_rate * buf
        return out

    def feature_importances(self) -> np.ndarray:
        """Total split gain accumulated per feature (non-negative)."""
        if self._importances is None:
            raise RuntimeError("model is not fitted")
        return self._importances.copy()

    # -- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "version": SERIAL_VERSION,
            "kind": "gbrt",
            "params": self.params.to_dict(),
            "base": self.base_,
            "n_features": self.n_features_,
            "degenerate": self.degenerate_,
            "importances": [float(v) for v in (self._importances if self._importances is not None else [])],
            "trees": [t.to_nested() for t in self.trees_],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GradientBoostedTrees":
        if d.get("kind") != "gbrt":
            raise ValueError("not a serialized gbrt model")
        if d.get("version") != SERIAL_VERSION:
            raise ValueError(f"unsupported gbrt serialization version {d.get('version')!r}")
        model = cls(GBRTParams.from_dict(d["params"]))
        model.base_ = float(d["base"])
        model.n_features_ = int(d["n_features"])
        model.degenerate_ = d.get("degenerate")
        model._importances = np.asarray(d.get("importances", []), dtype=np.float64)
        model.trees_ = [_Tree.from_nested(t) for t in d["trees"]]
        return model


def fit_gbrt(X, y, params: GBRTParams | None = None, **overrides) -> GradientBoostedTrees:
    """Fit a boosted tree ensemble; keyword overrides patch the params."""
    params = params or GBRTParams()
    if overrides:
        params = replace(params, **overrides)
    return GradientBoostedTrees(params).fit(X, y)
