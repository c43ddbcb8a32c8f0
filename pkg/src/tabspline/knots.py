"""Internal-knot placement: uniform, quantile and tree-derived (target-aware)."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np

from .basis import KnotVector, build_clamped_knots
from .errors import DegenerateDomain, EmptyInput, InvalidBudget, TabSplineError
from .trees import (
    CLASSIFICATION,
    REGRESSION,
    SplitRecord,
    aggregate_boosted_gains,
    extract_splits,
    fit_boosted,
    fit_cart,
)

log = logging.getLogger(__name__)

DEFAULT_MIN_KNOT_SPACING = 0.01


@dataclass(frozen=True)
class Uniform:
    pass


@dataclass(frozen=True)
class Quantile:
    pass


@dataclass(frozen=True)
class Cart:
    max_depth: int = 6
    min_knot_spacing: float = DEFAULT_MIN_KNOT_SPACING
    min_samples_leaf: int = 1
    min_samples_split: int = 2

    def __post_init__(self):
        _check_spacing(self.min_knot_spacing)


@dataclass(frozen=True)
class Boosted:
    n_estimators: int = 100
    max_depth: int = 3
    learning_rate: float = 0.1
    min_knot_spacing: float = DEFAULT_MIN_KNOT_SPACING
    min_samples_leaf: int = 20

    def __post_init__(self):
        _check_spacing(self.min_knot_spacing)


@dataclass(frozen=True)
class Learnable:
    """Knots start uniform and are moved by gradient descent during training."""


PlacementStrategy = Union[Uniform, Quantile, Cart, Boosted, Learnable]


def _check_spacing(eps):
    if not 0.0 < eps < 1.0:
        raise ValueError(f"min_knot_spacing must lie in (0, 1), got {eps}")


@dataclass(frozen=True)
class KnotBudget:
    m: int
    p: int = 3

    def __post_init__(self):
        if self.m < self.p + 1:
            raise InvalidBudget(f"output size m={self.m} needs m >= p + 1 = {self.p + 1}")

    @property
    def K(self) -> int:
        return self.m - self.p - 1


@dataclass(frozen=True)
class KnotSet:
    """Placed internal knots and how they were obtained.

    ``source`` is one of ``uniform``, ``quantile``, ``quantile-dedup``,
    ``tree``, ``tree+quantile``, ``quantile-fallback`` or ``uniform-fallback``.
    """

    knots: np.ndarray
    source: str

    @property
    def fallback(self) -> bool:
        return self.source.endswith("fallback")


def tree_task(task: str) -> str:
    return REGRESSION if task == REGRESSION else CLASSIFICATION


def uniform_knots(lo: float, hi: float, K: int) -> np.ndarray:
    if not lo < hi:
        raise DegenerateDomain(f"domain [{lo}, {hi}] is empty")
    return lo + np.arange(1, K + 1) / (K + 1) * (hi - lo)


def empirical_quantiles(samples, levels) -> np.ndarray:
    """Linear interpolation between order statistics at ``1 + (n-1)q``."""
    return np.quantile(np.asarray(samples, dtype=np.float64), levels, method="linear")


def _far(t: float, kept: Sequence[float], spacing: float) -> bool:
    if not kept:
        return True
    d = float(np.min(np.abs(np.asarray(kept) - t)))
    return d >= spacing and d > 0.0


def _fill_largest_gaps(kept: list, K: int, lo: float, hi: float) -> list:
    kept = sorted(kept)
    while len(kept) < K:
        edges = np.concatenate([[lo], kept, [hi]])
        i = int(np.argmax(np.diff(edges)))
        kept.append(0.5 * (edges[i] + edges[i + 1]))
        kept.sort()
    return kept


def quantile_knots(samples, K: int, lo: float = 0.0, hi: float = 1.0) -> KnotSet:
    """Knots at the ``l/(K+1)`` empirical quantiles of ``samples``.

    Quantiles that collide (ties, or mass on the boundary) are deduplicated and
    the shortfall is filled by bisecting the widest remaining gaps.  A sample
    with no usable spread falls back to uniform knots.
    """
    s = np.asarray(samples, dtype=np.float64).reshape(-1)
    if K == 0:
        return KnotSet(np.empty(0), "quantile")
    if s.size < 2 or s.min() == s.max():
        log.debug("degenerate distribution, uniform fallback")
        return KnotSet(uniform_knots(lo, hi, K), "uniform-fallback")
    q = empirical_quantiles(s, np.arange(1, K + 1) / (K + 1))
    inside = q[(q > lo) & (q < hi)]
    if inside.size == K and np.all(np.diff(inside) > 0):
        return KnotSet(inside, "quantile")
    distinct = np.unique(inside)
    if distinct.size == 0:
        return KnotSet(uniform_knots(lo, hi, K), "uniform-fallback")
    return KnotSet(np.array(_fill_largest_gaps(list(distinct), K, lo, hi)), "quantile-dedup")


def _supplement(kept: list, K: int, x, spacing: float, lo: float, hi: float) -> list:
    """Top up with training quantiles, then uniform positions, then gap midpoints."""
    kept = list(kept)
    levels = np.arange(1, K + 1) / (K + 1)
    candidates = list(empirical_quantiles(x, levels)) + list(lo + levels * (hi - lo))
    for t in candidates:
        if len(kept) == K:
            break
        if lo < t < hi and _far(t, kept, spacing):
            kept.append(float(t))
    return _fill_largest_gaps(kept, K, lo, hi)


def _spaced_fallback(x, K: int, spacing: float, lo: float, hi: float) -> KnotSet:
    """Quantile knots for targets with no usable split, kept ``spacing`` apart."""
    if x.min() == x.max():
        return KnotSet(uniform_knots(lo, hi, K), "uniform-fallback")
    return KnotSet(np.sort(np.asarray(_supplement([], K, x, spacing, lo, hi))), "quantile-fallback")


def select_knots(
    records: Sequence[SplitRecord],
    K: int,
    x,
    spacing: float,
    lo: float = 0.0,
    hi: float = 1.0,
) -> KnotSet:
    """Turn split records into exactly ``K`` sorted knots strictly inside (lo, hi).

    Thresholds are clipped to the observed range, deduplicated (keeping the
    larger gain), ranked by gain and
    greedily kept while they respect ``spacing``.  Shortfalls are filled with
    training quantiles, then uniform positions, then gap midpoints.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise EmptyInput("no training values")
    if K == 0:
        return KnotSet(np.empty(0), "tree")
    if not records:
        return _spaced_fallback(x, K, spacing, lo, hi)

    xmin, xmax = float(x.min()), float(x.max())
    gains: dict[float, float] = {}
    for rec in records:
        t = min(max(rec.threshold, xmin), xmax)
        if t <= lo:
            t = lo + spacing / 2
        elif t >= hi:
            t = hi - spacing / 2
        if not lo < t < hi:
            continue
        gains[t] = max(gains.get(t, 0.0), rec.gain)
    ranked = sorted(gains.items(), key=lambda kv: (-kv[1], kv[0]))

    kept: list[float] = []
    for t, _ in ranked:
        if len(kept) == K:
            break
        if _far(t, kept, spacing):
            kept.append(t)
    if not kept:
        return _spaced_fallback(x, K, spacing, lo, hi)
    source = "tree"
    if len(kept) < K:
        source = "tree+quantile"
        kept = _supplement(kept, K, x, spacing, lo, hi)
    return KnotSet(np.sort(np.asarray(kept)), source)


def target_aware_knots(x, y, task: str, budget: KnotBudget, strategy: Union[Cart, Boosted]) -> KnotSet:
    """Knots from univariate tree split points on a feature scaled to [0, 1]."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    y = np.asarray(y).reshape(-1)
    if x.size == 0:
        raise EmptyInput("no training values")
    ttask = tree_task(task)
    try:
        if isinstance(strategy, Cart):
            tree = fit_cart(
                x,
                y,
                ttask,
                max_depth=strategy.max_depth,
                min_samples_leaf=strategy.min_samples_leaf,
                min_samples_split=strategy.min_samples_split,
            )
            records = extract_splits(tree)
        elif isinstance(strategy, Boosted):
            model = fit_boosted(
                x,
                y,
                ttask,
                n_estimators=strategy.n_estimators,
                max_depth=strategy.max_depth,
                learning_rate=strategy.learning_rate,
                min_samples_leaf=strategy.min_samples_leaf,
            )
            records = aggregate_boosted_gains(model)
        else:
            raise TypeError(f"not a target-aware strategy: {strategy!r}")
    except TabSplineError as exc:
        log.warning("tree fit failed (%s), using quantile knots", exc)
        records = []
    return select_knots(records, budget.K, x, strategy.min_knot_spacing)


def place_feature(x, y, task: str, strategy: PlacementStrategy, budget: KnotBudget) -> KnotSet:
    if isinstance(strategy, (Uniform, Learnable)):
        return KnotSet(uniform_knots(0.0, 1.0, budget.K), "uniform")
    if isinstance(strategy, Quantile):
        return quantile_knots(x, budget.K)
    return target_aware_knots(x, y, task, budget, strategy)


def place_all(features, y, task: str, strategy: PlacementStrategy, budget: KnotBudget) -> list[KnotVector]:
    """One clamped knot vector over [0, 1] per column of ``features``."""
    features = np.asarray(features, dtype=np.float64)
    if features.ndim == 1:
        features = features[:, None]
    out = []
    for j in range(features.shape[1]):
        try:
            ks = place_feature(features[:, j], y, task, strategy, budget)
            out.append(build_clamped_knots(ks.knots, budget.p, 0.0, 1.0))
        except TabSplineError as exc:
            raise type(exc)(f"feature {j}: {exc}") from exc
    return out
