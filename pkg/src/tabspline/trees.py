"""Univariate CART and gradient boosting, used only to harvest split thresholds.

The feature is sorted once, so every node is a contiguous range of the
sorted order and each split search is a single prefix-sum sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import EmptyInput

REGRESSION = "regression"
CLASSIFICATION = "classification"

# equal gains within this relative band count as ties
_TIE_RTOL = 1e-12


@dataclass(frozen=True)
class SplitRecord:
    threshold: float
    gain: float
    node_samples: int


@dataclass
class Node:
    n_samples: int
    impurity: float
    value: np.ndarray
    depth: int
    threshold: Optional[float] = None
    gain: float = 0.0
    left: Optional["Node"] = None
    right: Optional["Node"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None


@dataclass
class UnivariateTree:
    root: Node
    task: str
    max_depth: Optional[int]
    min_samples_leaf: int
    min_samples_split: int
    classes: Optional[np.ndarray] = None

    def nodes(self):
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    @property
    def depth(self) -> int:
        return max(n.depth for n in self.nodes())

    def leaves(self):
        return [n for n in self.nodes() if n.is_leaf]

    def predict(self, x) -> np.ndarray:
        """Leaf means (regression) or class probabilities (classification)."""
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        out = np.empty((x.size, self.root.value.size))
        stack = [(self.root, np.arange(x.size))]
        while stack:
            node, idx = stack.pop()
            if node.is_leaf:
                out[idx] = node.value
                continue
            go_left = x[idx] <= node.threshold
            stack.append((node.left, idx[go_left]))
            stack.append((node.right, idx[~go_left]))
        return out[:, 0] if self.task == REGRESSION else out


def _best_split(xs, ys, task, n_classes, min_leaf):
    """Best cut of a sorted node range.  Returns (gain, cut, parent impurity)."""
    n = xs.size
    if task == REGRESSION:
        yc = ys - ys.mean()
        parent = float(np.dot(yc, yc)) / n
        cs = np.cumsum(yc)
        cs2 = np.cumsum(yc * yc)
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        sl, sl2 = cs[:-1], cs2[:-1]
        sr, sr2 = cs[-1] - sl, cs2[-1] - sl2
        sse_l = sl2 - sl * sl / nl
        sse_r = sr2 - sr * sr / nr
        gains = parent - (sse_l + sse_r) / n
    else:
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), ys] = 1.0
        counts = np.cumsum(onehot, axis=0)
        total = counts[-1]
        parent = 1.0 - float(np.sum((total / n) ** 2))
        nl = np.arange(1, n, dtype=np.float64)
        nr = n - nl
        cl = counts[:-1]
        cr = total - cl
        gini_l = 1.0 - np.sum((cl / nl[:, None]) ** 2, axis=1)
        gini_r = 1.0 - np.sum((cr / nr[:, None]) ** 2, axis=1)
        gains = parent - (nl * gini_l + nr * gini_r) / n
    # cut i puts xs[:i] left; valid only between distinct values
    cuts = np.arange(1, n)
    valid = (xs[1:] > xs[:-1]) & (cuts >= min_leaf) & (n - cuts >= min_leaf)
    if not valid.any():
        return 0.0, None, parent
    gains = np.where(valid, gains, -np.inf)
    best = gains.max()
    pick = int(np.flatnonzero(gains >= best - _TIE_RTOL * abs(best))[0])
    return float(best), int(cuts[pick]), parent


def _leaf_value(ys, task, n_classes):
    if task == REGRESSION:
        return np.array([ys.mean()])
    return np.bincount(ys, minlength=n_classes) / ys.size


def fit_cart(
    x,
    y,
    task: str = REGRESSION,
    max_depth: Optional[int] = None,
    min_samples_leaf: int = 1,
    min_samples_split: int = 2,
) -> UnivariateTree:
    """Greedy univariate CART with variance (regression) or Gini impurity."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if x.size == 0:
        raise EmptyInput("cannot fit a tree on zero samples")
    if x.size != y.size:
        raise ValueError("x and y must have the same length")
    order = np.argsort(x, kind="stable")
    xs = x[order]
    classes = None
    n_classes = 0
    if task == REGRESSION:
        ys = y.astype(np.float64)[order]
    elif task == CLASSIFICATION:
        classes, codes = np.unique(y, return_inverse=True)
        n_classes = classes.size
        ys = codes.reshape(-1)[order]
    else:
        raise ValueError(f"unknown task {task!r}")

    def make_node(lo, hi, depth):
        seg = ys[lo:hi]
        imp = 0.0
        if hi - lo > 0:
            if task == REGRESSION:
                imp = float(np.var(seg))
            else:
                p = np.bincount(seg, minlength=n_classes) / seg.size
                imp = 1.0 - float(np.sum(p * p))
        return Node(n_samples=hi - lo, impurity=imp, value=_leaf_value(seg, task, n_classes), depth=depth)

    root = make_node(0, xs.size, 0)
    stack = [(root, 0, xs.size)]
    while stack:
        node, lo, hi = stack.pop()
        n = hi - lo
        if max_depth is not None and node.depth >= max_depth:
            continue
        if n < min_samples_split or n < 2 * min_samples_leaf:
            continue
        seg_y = ys[lo:hi]
        if seg_y.min() == seg_y.max():
            continue
        gain, cut, parent = _best_split(xs[lo:hi], seg_y, task, n_classes, min_samples_leaf)
        if cut is None or not gain > _TIE_RTOL * parent:
            continue
        mid = lo + cut
        node.threshold = 0.5 * (xs[mid - 1] + xs[mid])
        if not xs[mid - 1] <= node.threshold < xs[mid]:
            node.threshold = float(xs[mid - 1])
        node.gain = gain
        node.left = make_node(lo, mid, node.depth + 1)
        node.right = make_node(mid, hi, node.depth + 1)
        stack.append((node.right, mid, hi))
        stack.append((node.left, lo, mid))
    return UnivariateTree(
        root=root,
        task=task,
        max_depth=max_depth,
        min_samples_leaf=min_samples_leaf,
        min_samples_split=min_samples_split,
        classes=classes,
    )


def extract_splits(tree: UnivariateTree) -> list[SplitRecord]:
    """One record per internal node; gain is the unweighted node impurity drop."""
    return [
        SplitRecord(threshold=float(n.threshold), gain=float(n.gain), node_samples=n.n_samples)
        for n in tree.nodes()
        if not n.is_leaf
    ]


@dataclass
class BoostedStumps:
    trees: list = field(default_factory=list)
    n_estimators: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    task: str = REGRESSION
    init: float = 0.0
    positive_class: object = None

    def raw_predict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        out = np.full(x.size, self.init)
        for tree in self.trees:
            out += self.learning_rate * tree.predict(x)
        return out


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def fit_boosted(
    x,
    y,
    task: str = REGRESSION,
    n_estimators: int = 100,
    max_depth: int = 3,
    learning_rate: float = 0.1,
    min_samples_leaf: int = 20,
) -> BoostedStumps:
    """Gradient boosting with regression trees on the negative loss gradient.

    Squared loss for regression, logistic loss for classification.  Multiclass
    targets are reduced to most-frequent-class versus rest.  Boosting stops
    early once a round produces a tree without splits, since every later
    round would be identical.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if x.size == 0:
        raise EmptyInput("cannot boost on zero samples")
    model = BoostedStumps(
        n_estimators=n_estimators, max_depth=max_depth, learning_rate=learning_rate, task=task
    )
    if task == REGRESSION:
        target = y.astype(np.float64)
        model.init = float(target.mean())
    elif task == CLASSIFICATION:
        classes, counts = np.unique(y, return_counts=True)
        if classes.size < 2:
            return model
        positive = classes[-1] if classes.size == 2 else classes[np.argmax(counts)]
        model.positive_class = positive
        target = (y == positive).astype(np.float64)
        rate = target.mean()
        model.init = float(np.log(rate / (1.0 - rate)))
    else:
        raise ValueError(f"unknown task {task!r}")

    raw = np.full(x.size, model.init)
    for _ in range(n_estimators):
        if task == REGRESSION:
            residual = target - raw
        else:
            residual = target - _sigmoid(raw)
        tree = fit_cart(x, residual, REGRESSION, max_depth=max_depth, min_samples_leaf=min_samples_leaf)
        model.trees.append(tree)
        if tree.root.is_leaf:
            break
        raw = raw + learning_rate * tree.predict(x)
    return model


def aggregate_boosted_gains(model: BoostedStumps) -> list[SplitRecord]:
    """Sum per-split SSE reductions over identical thresholds across trees."""
    totals: dict[float, float] = {}
    samples: dict[float, int] = {}
    for tree in model.trees:
        for node in tree.nodes():
            if node.is_leaf:
                continue
            sse_drop = node.gain * node.n_samples
            totals[node.threshold] = totals.get(node.threshold, 0.0) + sse_drop
            samples[node.threshold] = samples.get(node.threshold, 0) + node.n_samples
    return [SplitRecord(threshold=float(t), gain=float(g), node_samples=samples[t]) for t, g in sorted(totals.items())]
