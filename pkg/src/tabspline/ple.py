"""Piecewise linear encoding with uniform, quantile, CART and adaptive bins."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, NonIncreasingKnots
from .knots import empirical_quantiles, select_knots, tree_task
from .trees import extract_splits, fit_cart

log = logging.getLogger(__name__)

PLE_MODES = ("uniform", "quantile", "cart")


@dataclass(frozen=True)
class PleBoundaries:
    bounds: np.ndarray
    source: str = "given"

    def __post_init__(self):
        b = np.asarray(self.bounds, dtype=np.float64).reshape(-1)
        if b.size < 2:
            raise ValueError("need at least one bin (two boundaries)")
        if not np.all(np.diff(b) > 0):
            raise NonIncreasingKnots("bin boundaries must be strictly increasing")
        b.setflags(write=False)
        object.__setattr__(self, "bounds", b)

    @property
    def T(self) -> int:
        return self.bounds.size - 1

    @property
    def fallback(self) -> bool:
        return self.source.endswith("fallback")

    def to_dict(self) -> dict:
        return {"bounds": [float(b) for b in self.bounds], "source": self.source}


def encode_ple_batch(xs, bounds: PleBoundaries) -> np.ndarray:
    """(n, T) matrix; inputs are clipped to [b_0, b_T] first."""
    b = bounds.bounds
    T = bounds.T
    x = np.clip(np.asarray(xs, dtype=np.float64).reshape(-1), b[0], b[-1])[:, None]
    left, right = b[None, :-1], b[None, 1:]
    t = np.arange(1, T + 1)[None, :]
    frac = (x - left) / (right - left)
    out = np.where((x >= right) & (t < T), 1.0, frac)
    return np.where((x < left) & (t > 1), 0.0, out)


def encode_ple(x: float, bounds: PleBoundaries) -> np.ndarray:
    return encode_ple_batch([x], bounds)[0]


def _fallback(T: int) -> PleBoundaries:
    log.debug("degenerate feature, uniform PLE bins on [0, 1]")
    return PleBoundaries(np.linspace(0.0, 1.0, T + 1), "uniform-fallback")


def _assemble(lo, hi, internal, source) -> PleBoundaries:
    return PleBoundaries(np.concatenate([[lo], np.sort(internal), [hi]]), source)


def build_ple_boundaries(
    x,
    y=None,
    task: str = "regression",
    T: int = 7,
    mode: str = "cart",
    min_samples_leaf: int = 1,
    min_samples_split: int = 2,
) -> PleBoundaries:
    """Boundaries b_0 = min(x) < ... < b_T = max(x) for ``T`` bins."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise EmptyInput("no training values")
    if T < 1:
        raise ValueError("T must be at least 1")
    if mode not in PLE_MODES:
        raise ValueError(f"unknown PLE mode {mode!r}")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return _fallback(T)
    if mode == "uniform":
        return PleBoundaries(lo + np.arange(T + 1) / T * (hi - lo), "uniform")
    if mode == "quantile":
        q = empirical_quantiles(x, np.arange(1, T) / T)
        inner = q[(q > lo) & (q < hi)]
        if inner.size == T - 1 and np.all(np.diff(inner) > 0):
            return _assemble(lo, hi, inner, "quantile")
        # ties: reuse the knot routine's gap filling
        ks = select_knots([], T - 1, x, 0.0, lo, hi)
        return _assemble(lo, hi, ks.knots, "quantile-dedup")
    if y is None:
        raise ValueError("cart mode needs a target")
    tree = fit_cart(x, y, tree_task(task), min_samples_leaf=min_samples_leaf, min_samples_split=min_samples_split)
    ks = select_knots(extract_splits(tree), T - 1, x, 0.0, lo, hi)
    return _assemble(lo, hi, ks.knots, ks.source)


def build_adaptive_ple(
    x,
    y,
    task: str = "regression",
    min_bins: int = 5,
    max_bins: int = 50,
    min_samples_leaf: int = 25,
    min_samples_split: int = 2,
) -> PleBoundaries:
    """Bin count taken from the number of CART thresholds, clamped to [min_bins, max_bins]."""
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise EmptyInput("no training values")
    lo, hi = float(x.min()), float(x.max())
    if lo == hi:
        return _fallback(min_bins)
    tree = fit_cart(x, y, tree_task(task), min_samples_leaf=min_samples_leaf, min_samples_split=min_samples_split)
    records = extract_splits(tree)
    n_thr = len({min(max(r.threshold, lo), hi) for r in records} - {lo, hi})
    T = int(np.clip(n_thr + 1, min_bins, max_bins))
    ks = select_knots(records, T - 1, x, 0.0, lo, hi)
    return _assemble(lo, hi, ks.knots, ks.source)
