"""Slow, textbook reference implementations used as test oracles.

Nothing here imports the package under test.
"""

from __future__ import annotations

import math

import numpy as np


# ---- bases ------------------------------------------------------------------


def bspline_scalar(tau, p, i, x):
    """Cox-de Boor recursion, one basis function at one point, 0/0 := 0."""
    tau = [float(t) for t in tau]
    last = max(j for j in range(len(tau) - 1) if tau[j] < tau[j + 1])

    def N(i, k):
        if k == 0:
            if tau[i] <= x < tau[i + 1]:
                return 1.0
            # close the last non-empty span on the right
            return 1.0 if (i == last and x == tau[i + 1]) else 0.0
        a = tau[i + k] - tau[i]
        b = tau[i + k + 1] - tau[i + 1]
        left = (x - tau[i]) / a * N(i, k - 1) if a > 0 else 0.0
        right = (tau[i + k + 1] - x) / b * N(i + 1, k - 1) if b > 0 else 0.0
        return left + right

    return N(i, p)


def full_knots(internal, p, lo=0.0, hi=1.0):
    return [lo] * (p + 1) + list(internal) + [hi] * (p + 1)


def bspline_row(internal, p, x, lo=0.0, hi=1.0):
    tau = full_knots(internal, p, lo, hi)
    m = len(internal) + p + 1
    return np.array([bspline_scalar(tau, p, i, x) for i in range(m)])


def mspline_row(internal, p, x, lo=0.0, hi=1.0):
    tau = full_knots(internal, p, lo, hi)
    b = bspline_row(internal, p, x, lo, hi)
    out = np.zeros_like(b)
    for i in range(b.size):
        span = tau[i + p + 1] - tau[i]
        out[i] = (p + 1) / span * b[i] if span > 0 else 0.0
    return out


def ispline_row(internal, p, x, lo=0.0, hi=1.0, n_per_span=6):
    """Integral of the M-spline oracle with Gauss-Legendre on each knot span."""
    nodes, weights = np.polynomial.legendre.leggauss(n_per_span)
    edges = sorted({lo, hi, *internal})
    total = np.zeros(len(internal) + p + 1)
    for a, b in zip(edges[:-1], edges[1:]):
        if x <= a:
            break
        b = min(b, x)
        for t, w in zip(nodes, weights):
            u = 0.5 * (b - a) * t + 0.5 * (a + b)
            total += 0.5 * (b - a) * w * mspline_row(internal, p, u, lo, hi)
    return total


def bernstein_row(p, x, lo=0.0, hi=1.0):
    u = (x - lo) / (hi - lo)
    return np.array([math.comb(p, i) * u**i * (1 - u) ** (p - i) for i in range(p + 1)])


# ---- splits -----------------------------------------------------------------


def impurity(y, task):
    y = np.asarray(y)
    if task == "regression":
        return float(np.mean((y - y.mean()) ** 2))
    _, c = np.unique(y, return_counts=True)
    p = c / y.size
    return 1.0 - float(np.sum(p * p))


def best_split(x, y, task, min_leaf=1):
    """Enumerate every midpoint; ties go to the lowest threshold."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    vals = np.unique(x)
    parent = impurity(y, task)
    best = None
    for a, b in zip(vals[:-1], vals[1:]):
        t = 0.5 * (a + b)
        L, R = x <= t, x > t
        if L.sum() < min_leaf or R.sum() < min_leaf:
            continue
        g = parent - (L.sum() * impurity(y[L], task) + R.sum() * impurity(y[R], task)) / y.size
        if best is None or g > best[1] * (1 + 1e-9) + 1e-15:
            best = (t, g)
    return best, parent


def cart_splits(x, y, task, max_depth=None, min_leaf=1, min_split=2, depth=0):
    """(threshold, gain, n) for every internal node of a brute-force CART."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y)
    if max_depth is not None and depth >= max_depth:
        return []
    if y.size < min_split or y.size < 2 * min_leaf or np.all(y == y[0]):
        return []
    found, parent = best_split(x, y, task, min_leaf)
    if found is None or not found[1] > 1e-12 * parent:
        return []
    t, g = found
    L = x <= t
    return (
        [(t, g, y.size)]
        + cart_splits(x[L], y[L], task, max_depth, min_leaf, min_split, depth + 1)
        + cart_splits(x[~L], y[~L], task, max_depth, min_leaf, min_split, depth + 1)
    )


def _tree_predict(splits_tree, x):
    node = splits_tree
    while node[0] == "split":
        _, t, left, right = node
        node = left if x <= t else right
    return node[1]


def _build_tree(x, y, max_depth, min_leaf, depth=0):
    """Regression tree as nested tuples, built the same brute-force way."""
    if (max_depth is not None and depth >= max_depth) or y.size < max(2, 2 * min_leaf) or np.all(y == y[0]):
        return ("leaf", float(y.mean())), []
    found, parent = best_split(x, y, "regression", min_leaf)
    if found is None or not found[1] > 1e-12 * parent:
        return ("leaf", float(y.mean())), []
    t, g = found
    L = x <= t
    lt, ls = _build_tree(x[L], y[L], max_depth, min_leaf, depth + 1)
    rt, rs = _build_tree(x[~L], y[~L], max_depth, min_leaf, depth + 1)
    return ("split", t, lt, rt), [(t, g * y.size)] + ls + rs


def boosted_gains(x, y, n_estimators, max_depth, lr, min_leaf):
    """Squared-loss boosting; returns {threshold: summed SSE reduction}."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    raw = np.full(y.size, y.mean())
    totals = {}
    for _ in range(n_estimators):
        tree, splits = _build_tree(x, y - raw, max_depth, min_leaf)
        if not splits:
            break
        for t, g in splits:
            totals[t] = totals.get(t, 0.0) + g
        raw = raw + lr * np.array([_tree_predict(tree, v) for v in x])
    return totals


def type7_quantile(samples, q):
    s = sorted(float(v) for v in samples)
    h = (len(s) - 1) * q
    j = math.floor(h)
    if j + 1 >= len(s):
        return s[-1]
    return s[j] + (h - j) * (s[j + 1] - s[j])


def select_from_gains(gains, K, x, spacing):
    """Greedy spacing filter on clipped thresholds, then quantile supplement."""
    lo, hi = float(np.min(x)), float(np.max(x))
    best = {}
    for t, g in gains:
        t = min(max(t, lo), hi)
        if t <= 0.0:
            t = spacing / 2
        elif t >= 1.0:
            t = 1.0 - spacing / 2
        best[t] = max(best.get(t, 0.0), g)
    kept = []
    for t, _ in sorted(best.items(), key=lambda kv: (-kv[1], kv[0])):
        if len(kept) < K and all(abs(t - k) >= spacing and t != k for k in kept):
            kept.append(t)
    return sorted(kept)


def supplement(kept, K, x, spacing):
    """Fill a shortfall (or an empty selection): training quantiles, then uniform positions, then widest-gap midpoints."""
    kept = list(kept)

    def ok(t):
        return 0.0 < t < 1.0 and all(abs(t - k) >= spacing and t != k for k in kept)

    levels = [l / (K + 1) for l in range(1, K + 1)]
    for t in [type7_quantile(x, q) for q in levels] + levels:
        if len(kept) < K and ok(t):
            kept.append(t)
    while len(kept) < K:
        edges = [0.0] + sorted(kept) + [1.0]
        gaps = [b - a for a, b in zip(edges[:-1], edges[1:])]
        i = gaps.index(max(gaps))
        kept.append(0.5 * (edges[i] + edges[i + 1]))
    return sorted(kept)


# ---- PLE --------------------------------------------------------------------


def ple_row(x, b):
    T = len(b) - 1
    x = min(max(x, b[0]), b[-1])
    out = []
    for t in range(1, T + 1):
        if x < b[t - 1] and t > 1:
            out.append(0.0)
        elif x >= b[t] and t < T:
            out.append(1.0)
        else:
            out.append((x - b[t - 1]) / (b[t] - b[t - 1]))
    return np.array(out)


# ---- ranks ------------------------------------------------------------------


def brute_ranks(row, higher_is_better=True):
    """Rank = 1 + #strictly better + half the number of ties."""
    row = list(row)
    out = []
    for v in row:
        better = sum(1 for u in row if (u > v if higher_is_better else u < v))
        ties = sum(1 for u in row if u == v) - 1
        out.append(1 + better + 0.5 * ties)
    return out


def brute_friedman(values, higher_is_better=True):
    R = np.array([brute_ranks(r, higher_is_better) for r in values])
    N, k = R.shape
    s = 0.0
    for j in range(k):
        s += (R[:, j].mean() - (k + 1) / 2) ** 2
    return 12 * N / (k * (k + 1)) * s


# ---- derivatives ------------------------------------------------------------


def central_diff(f, x, h=1e-6):
    """Gradient of a scalar function of a flat array by central differences."""
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e.flat[i] = h
        g.flat[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g
