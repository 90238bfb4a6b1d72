"""Squared-error gradient boosting with exact greedy splits.

Small, deterministic regressor used for the conditional-mean model of the
exposure. No subsampling, no shrinkage schedules: each round fits one
depth-limited regression tree to the current residuals on sorted features
and adds it with a fixed learning rate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class _Tree:
    # column-oriented node storage; leaf nodes have feature == -1
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    def predict(self, X):
        n = X.shape[0]
        out = np.empty(n)
        node = np.zeros(n, dtype=np.int64)
        active = np.arange(n)
        while active.size:
            nd = node[active]
            feat = self.feature[nd]
            at_leaf = feat < 0
            leaf_rows = active[at_leaf]
            out[leaf_rows] = self.value[nd[at_leaf]]
            rows = active[~at_leaf]
            if rows.size == 0:
                break
            nd = nd[~at_leaf]
            go_left = X[rows, self.feature[nd]] <= self.threshold[nd]
            node[rows[go_left]] = self.left[nd[go_left]]
            node[rows[~go_left]] = self.right[nd[~go_left]]
            active = rows
        return out


def _best_split(X, residual, idx, min_leaf):
    """Exact greedy search over all features; first best split wins ties."""
    best_gain = 0.0
    best = None
    n = idx.size
    r = residual[idx]
    total = r.sum()
    parent_score = total * total / n
    for j in range(X.shape[1]):
        v = X[idx, j]
        order = np.argsort(v, kind="stable")
        vs = v[order]
        rs = r[order]
        csum = np.cumsum(rs)[:-1]
        cnt = np.arange(1, n)
        valid = (vs[1:] > vs[:-1]) & (cnt >= min_leaf) & ((n - cnt) >= min_leaf)
        if not np.any(valid):
            continue
        left = csum * csum / cnt
        right = (total - csum) ** 2 / (n - cnt)
        gain = np.where(valid, left + right - parent_score, -np.inf)
        k = int(np.argmax(gain))
        if gain[k] > best_gain + 1e-12 * max(1.0, abs(parent_score)):
            best_gain = float(gain[k])
            best = (j, 0.5 * (vs[k] + vs[k + 1]))
    return best


def _fit_tree(X, residual, max_depth, min_leaf):
    feature, threshold, left, right, value = [], [], [], [], []

    def build(idx, depth):
        node_id = len(feature)
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(residual[idx].mean()))
        if depth >= max_depth or idx.size < 2 * min_leaf:
            return node_id
        split = _best_split(X, residual, idx, min_leaf)
        if split is None:
            return node_id
        j, thr = split
        mask = X[idx, j] <= thr
        feature[node_id] = j
        threshold[node_id] = thr
        left[node_id] = build(idx[mask], depth + 1)
        right[node_id] = build(idx[~mask], depth + 1)
        return node_id

    build(np.arange(X.shape[0]), 0)
    return _Tree(
        np.array(feature, dtype=np.int64),
        np.array(threshold),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value),
    )


class BoostedTrees:
    """Gradient-boosted regression trees for a continuous target."""

    def __init__(self, rounds=200, max_depth=3, learning_rate=0.1, min_leaf=5):
        self.rounds = int(rounds)
        self.max_depth = int(max_depth)
        self.learning_rate = float(learning_rate)
        self.min_leaf = int(min_leaf)
        self.base_ = 0.0
        self.trees_: list[_Tree] = []

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        self.base_ = float(y.mean())
        pred = np.full(y.shape[0], self.base_)
        self.trees_ = []
        for _ in range(self.rounds):
            tree = _fit_tree(X, y - pred, self.max_depth, self.min_leaf)
            pred += self.learning_rate * tree.predict(X)
            self.trees_.append(tree)
        return self

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        out = np.full(X.shape[0], self.base_)
        for tree in self.trees_:
            out += self.learning_rate * tree.predict(X)
        return out


class RidgeLinear:
    """Linear least squares with a small ridge penalty on the slopes."""

    def __init__(self, penalty=1e-6):
        self.penalty = float(penalty)
        self.coef_ = None
        self.intercept_ = 0.0

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        xm = X.mean(axis=0)
        ym = float(y.mean())
        Xc = X - xm
        g = Xc.T @ Xc + self.penalty * np.eye(X.shape[1])
        self.coef_ = np.linalg.solve(g, Xc.T @ (y - ym))
        self.intercept_ = ym - float(xm @ self.coef_)
        return self

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef_ + self.intercept_
