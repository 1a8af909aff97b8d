"""Weighted gradient-boosted regression trees under the logistic loss.

Trees are grown level by level with exact greedy split search on
second-order statistics.  Per round every row contributes
``g = w (p - y)`` and ``h = w p (1 - p)``; a leaf predicts
``-G / (H + split_l2)`` and the model output is
``sigmoid(base_score + learning_rate * sum(leaf values))``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import ConfigError, DataError, ShapeError

LEAF = -1


@dataclass(frozen=True)
class GbtConfig:
    n_trees: int = 100
    max_depth: int = 4
    learning_rate: float = 0.1
    min_child_weight: float = 1e-3
    split_l2: float = 1e-6

    def __post_init__(self):
        if self.n_trees < 0:
            raise ConfigError("n_trees must be non-negative", "n_trees")
        if self.max_depth < 1:
            raise ConfigError("max_depth must be at least 1", "max_depth")
        if not 0 < self.learning_rate <= 1:
            raise ConfigError("learning_rate must lie in (0, 1]", "learning_rate")
        if self.min_child_weight < 0:
            raise ConfigError("min_child_weight must be >= 0", "min_child_weight")
        if self.split_l2 < 0:
            raise ConfigError("split_l2 must be >= 0", "split_l2")


@dataclass(frozen=True)
class Tree:
    """Binary tree as parallel arrays in preorder.

    Internal node ``k`` sends rows with ``x[feature[k]] < threshold[k]``
    to ``left[k]`` and the rest to ``right[k]``; leaves have
    ``feature == -1`` and carry ``value``.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self):
        return self.feature.shape[0]

    def depth(self):
        def walk(k):
            if self.feature[k] == LEAF:
                return 0
            return 1 + max(walk(self.left[k]), walk(self.right[k]))
        return walk(0)

    def apply(self, X):
        node = np.zeros(X.shape[0], dtype=np.int64)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            inner = feat != LEAF
            if not inner.any():
                return node
            idx = rows[inner]
            go_left = X[idx, feat[inner]] < self.threshold[node[inner]]
            nxt = np.where(go_left, self.left[node[inner]], self.right[node[inner]])
            node[idx] = nxt

    def predict(self, X):
        return self.value[self.apply(X)]

    def as_array(self):
        """(n_nodes, 5) float64 rows: feature, threshold, left, right, value."""
        return np.column_stack([self.feature, self.threshold, self.left,
                                self.right, self.value]).astype(np.float64)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=np.float64).reshape(-1, 5)
        return cls(feature=a[:, 0].astype(np.int64), threshold=a[:, 1].copy(),
                   left=a[:, 2].astype(np.int64), right=a[:, 3].astype(np.int64),
                   value=a[:, 4].copy())


@dataclass
class GbtModel:
    base_score: float
    learning_rate: float
    n_features: int
    trees: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)

    def raw_score(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(
                f"model expects {self.n_features} features, got shape {X.shape}")
        score = np.full(X.shape[0], self.base_score)
        for tree in self.trees:
            score += self.learning_rate * tree.predict(X)
        return score


@dataclass(frozen=True)
class WeightedDataset:
    X: np.ndarray
    y: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        y = np.asarray(self.y, dtype=np.float64).reshape(-1)
        w = np.asarray(self.w, dtype=np.float64).reshape(-1)
        if X.ndim != 2 or not (X.shape[0] == y.shape[0] == w.shape[0]):
            raise ShapeError(
                f"inconsistent dataset shapes X{X.shape} y{y.shape} w{w.shape}")
        if not np.all(w > 0):
            raise DataError("sample weights must be positive")
        if not np.isin(y, (0.0, 1.0)).all():
            raise DataError("labels must be 0 or 1")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "w", w)

    def __len__(self):
        return self.X.shape[0]


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def weighted_log_loss(y, p, w):
    p = np.clip(p, 1e-300, 1.0)
    q = np.clip(1.0 - p, 1e-300, 1.0)
    return float(-(w * (y * np.log(p) + (1.0 - y) * np.log(q))).sum() / w.sum())


def _score(G, H, lam):
    """G^2 / (H + lam), with 0 where the denominator vanishes."""
    den = H + lam
    return np.divide(G * G, den, out=np.zeros(np.broadcast(G, den).shape), where=den > 0)


def best_split(g, h, values, split_l2=0.0):
    """Best threshold for one column.

    Candidate thresholds are midpoints between consecutive distinct sorted
    values; the gain is
    ``0.5 * (GL^2/(HL+l2) + GR^2/(HR+l2) - G^2/(H+l2))``.  Ties go to the
    smaller threshold.  Returns ``(None, 0.0)`` for a constant column.
    """
    g = np.asarray(g, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    order = np.argsort(values, kind="stable")
    v = values[order]
    valid = v[:-1] < v[1:]
    if not valid.any():
        return None, 0.0
    GL = np.cumsum(g[order])[:-1]
    HL = np.cumsum(h[order])[:-1]
    G, H = g.sum(), h.sum()
    gain = 0.5 * (_score(GL, HL, split_l2) + _score(G - GL, H - HL, split_l2)
                  - _score(G, H, split_l2))
    gain = np.where(valid, gain, -np.inf)
    j = int(np.argmax(gain))
    return 0.5 * (v[j] + v[j + 1]), float(gain[j])


@njit(cache=True)
def _scan_level(X, order, slot_of_row, n_slots, g, h, G_tot, H_tot, lam):
    """Best split per node slot from one pass over every presorted column.

    Rows with ``slot_of_row < 0`` are ignored.  Columns are visited in
    index order and values ascending, and only strictly better gains
    replace the incumbent, so ties go to the lowest feature and then the
    smallest threshold.
    """
    n, F = X.shape
    best_gain = np.zeros(n_slots)
    best_feat = np.full(n_slots, -1)
    best_thr = np.zeros(n_slots)
    GL = np.zeros(n_slots)
    HL = np.zeros(n_slots)
    last = np.zeros(n_slots)
    seen = np.zeros(n_slots, dtype=np.bool_)
    parent = np.zeros(n_slots)
    for s in range(n_slots):
        den = H_tot[s] + lam
        parent[s] = G_tot[s] * G_tot[s] / den if den > 0 else 0.0
    for f in range(F):
        GL[:] = 0.0
        HL[:] = 0.0
        seen[:] = False
        for i in range(n):
            r = order[i, f]
            s = slot_of_row[r]
            if s < 0:
                continue
            v = X[r, f]
            if seen[s] and last[s] < v:
                gl = GL[s]
                hl = HL[s]
                gr = G_tot[s] - gl
                hr = H_tot[s] - hl
                dl = hl + lam
                dr = hr + lam
                sl = gl * gl / dl if dl > 0 else 0.0
                sr = gr * gr / dr if dr > 0 else 0.0
                gain = 0.5 * (sl + sr - parent[s])
                if gain > best_gain[s]:
                    best_gain[s] = gain
                    best_feat[s] = f
                    best_thr[s] = 0.5 * (last[s] + v)
            GL[s] += g[r]
            HL[s] += h[r]
            last[s] = v
            seen[s] = True
    return best_feat, best_thr, best_gain


class _Grower:
    """Level-wise exact greedy growth over a fixed presorted design matrix."""

    def __init__(self, X, cfg: GbtConfig):
        self.X = np.ascontiguousarray(X, dtype=np.float64)
        self.cfg = cfg
        # Presort once; ties keep ascending row index.
        self.order = np.ascontiguousarray(np.argsort(X, axis=0, kind="stable"))

    def grow(self, g, h):
        cfg = self.cfg
        X = self.X
        n = X.shape[0]
        lam = cfg.split_l2
        feat, thr, left, right, val = [], [], [], [], []

        def new_node():
            feat.append(LEAF)
            thr.append(0.0)
            left.append(LEAF)
            right.append(LEAF)
            val.append(0.0)
            return len(feat) - 1

        root = new_node()
        node_of_row = np.zeros(n, dtype=np.int64)
        active = [root]
        G_node = {root: float(g.sum())}
        H_node = {root: float(h.sum())}

        for depth in range(cfg.max_depth + 1):
            splittable = []
            for k in active:
                val[k] = -G_node[k] / (H_node[k] + lam) if H_node[k] + lam > 0 else 0.0
                if depth < cfg.max_depth and H_node[k] >= cfg.min_child_weight:
                    splittable.append(k)
            if not splittable:
                break
            slot = np.full(len(feat), -1, dtype=np.int64)
            slot[splittable] = np.arange(len(splittable))
            row_slot = np.where(node_of_row >= 0, slot[np.maximum(node_of_row, 0)], -1)
            G_tot = np.array([G_node[k] for k in splittable])
            H_tot = np.array([H_node[k] for k in splittable])
            bf, bt, _ = _scan_level(X, self.order, row_slot, len(splittable),
                                    g, h, G_tot, H_tot, lam)
            next_children = []
            for s, k in enumerate(splittable):
                f = int(bf[s])
                if f < 0:
                    continue
                t = float(bt[s])
                lk, rk = new_node(), new_node()
                feat[k], thr[k], left[k], right[k] = f, t, lk, rk
                in_node = row_slot == s
                goes_left = in_node & (X[:, f] < t)
                goes_right = in_node & ~goes_left
                node_of_row[goes_left] = lk
                node_of_row[goes_right] = rk
                G_node[lk], H_node[lk] = float(g[goes_left].sum()), float(h[goes_left].sum())
                G_node[rk], H_node[rk] = float(g[goes_right].sum()), float(h[goes_right].sum())
                next_children.extend((lk, rk))
            # Rows in nodes that became leaves drop out of later levels.
            for k in active:
                if feat[k] == LEAF:
                    node_of_row[node_of_row == k] = -1
            active = next_children
            if not active:
                break
        return _to_preorder(feat, thr, left, right, val)


def _to_preorder(feat, thr, left, right, val):
    order = []
    stack = [0]
    while stack:
        k = stack.pop()
        order.append(k)
        if feat[k] != LEAF:
            stack.append(right[k])
            stack.append(left[k])
    new_index = {k: i for i, k in enumerate(order)}
    remap = lambda c: new_index[c] if c != LEAF else LEAF  # noqa: E731
    return Tree(
        feature=np.array([feat[k] for k in order], dtype=np.int64),
        threshold=np.array([thr[k] for k in order], dtype=np.float64),
        left=np.array([remap(left[k]) for k in order], dtype=np.int64),
        right=np.array([remap(right[k]) for k in order], dtype=np.int64),
        value=np.array([val[k] for k in order], dtype=np.float64),
    )


def fit_gbt(data: WeightedDataset, cfg: GbtConfig = GbtConfig()) -> GbtModel:
    X, y, w = data.X, data.y, data.w
    if X.shape[0] == 0 or y.min() == y.max():
        raise DataError("gradient boosting needs both classes in the training data")
    prevalence = float((w * y).sum() / w.sum())
    base = float(np.log(prevalence / (1.0 - prevalence)))
    model = GbtModel(base_score=base, learning_rate=cfg.learning_rate,
                     n_features=X.shape[1])
    score = np.full(X.shape[0], base)
    p = sigmoid(score)
    model.train_loss.append(weighted_log_loss(y, p, w))
    grower = _Grower(X, cfg)
    for _ in range(cfg.n_trees):
        g = w * (p - y)
        h = w * p * (1.0 - p)
        tree = grower.grow(g, h)
        model.trees.append(tree)
        score += cfg.learning_rate * tree.predict(X)
        p = sigmoid(score)
        model.train_loss.append(weighted_log_loss(y, p, w))
    return model


def gbt_predict(model: GbtModel, X):
    """Seizure probability per row."""
    return sigmoid(model.raw_score(X))


def fit_one_vs_rest(X, labels, cfg: GbtConfig):
    """One binary model per class; used as a multi-class probe."""
    labels = np.asarray(labels)
    classes = np.unique(labels)
    w = np.ones(len(labels))
    return classes, [fit_gbt(WeightedDataset(X, (labels == c).astype(float), w), cfg)
                     for c in classes]


def predict_one_vs_rest(classes, models, X):
    scores = np.column_stack([m.raw_score(X) for m in models])
    return classes[np.argmax(scores, axis=1)]
