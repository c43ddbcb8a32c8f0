"""Learnable knot locations: softmax widths with a floor, cumulated into knots.

For one feature with logits ``a`` of length K+1::

    pi = softmax(a)
    w  = delta + (1 - (K+1) delta) * pi
    kappa_l = w_1 + ... + w_l,   l = 1..K

so the knots are strictly increasing inside (0, 1) and every gap is at least
``delta``.  A reciprocal barrier on the widths discourages collapse.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import InvalidBudget, InvalidDelta

DEFAULT_DELTA = 1e-3


@dataclass
class KnotLogits:
    a: np.ndarray
    delta: float = DEFAULT_DELTA

    def __post_init__(self):
        self.a = np.array(self.a, dtype=np.float64).reshape(-1)
        if self.a.size < 1:
            raise ValueError("need at least one logit (K + 1 >= 1)")
        if self.delta < 0 or self.a.size * self.delta >= 1.0:
            raise InvalidDelta(f"(K+1)*delta = {self.a.size * self.delta} must be < 1 and delta >= 0")

    @property
    def K(self) -> int:
        return self.a.size - 1

    @classmethod
    def uniform(cls, K: int, delta: float = DEFAULT_DELTA) -> "KnotLogits":
        return cls(np.zeros(K + 1), delta)

    def copy(self) -> "KnotLogits":
        return KnotLogits(self.a.copy(), self.delta)


@dataclass(frozen=True)
class KnotRegularizerConfig:
    lam: float = 1e-4
    eps: float = 1e-6

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be nonnegative")
        if not self.eps > 0:
            raise ValueError("epsilon must be positive")


def _softmax(a: np.ndarray) -> np.ndarray:
    z = np.exp(a - a.max())
    return z / z.sum()


def knots_from_logits(logits: KnotLogits) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(widths, internal_knots)``."""
    pi = _softmax(logits.a)
    n = logits.a.size
    widths = logits.delta + (1.0 - n * logits.delta) * pi
    return widths, np.cumsum(widths)[:-1]


def spacing_regularizer(all_logits: Sequence[KnotLogits], eps: float = 1e-6) -> float:
    if len(all_logits) == 0:
        return 0.0
    total = 0.0
    for lg in all_logits:
        w, _ = knots_from_logits(lg)
        total += float(np.mean(1.0 / (w + eps)))
    return total / len(all_logits)


def _softmax_vjp(pi: np.ndarray, g: np.ndarray) -> np.ndarray:
    return pi * (g - np.dot(pi, g))


def spacing_regularizer_grad(logits: KnotLogits, eps: float, n_features: int = 1) -> np.ndarray:
    """Gradient of one feature's share of the regularizer with respect to its logits."""
    pi = _softmax(logits.a)
    n = logits.a.size
    w = logits.delta + (1.0 - n * logits.delta) * pi
    g_w = -1.0 / (n_features * n * (w + eps) ** 2)
    return _softmax_vjp(pi, (1.0 - n * logits.delta) * g_w)


def knot_logit_gradient(
    logits: KnotLogits,
    upstream,
    reg_cfg: KnotRegularizerConfig | None = None,
    n_features: int = 1,
) -> np.ndarray:
    """Map ``dL/dkappa`` (length K) to ``dL/da`` (length K+1), plus the barrier term."""
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if upstream.size != logits.K:
        raise ValueError(f"expected {logits.K} knot gradients, got {upstream.size}")
    n = logits.a.size
    pi = _softmax(logits.a)
    # kappa_l depends on w_r for r <= l
    g_w = np.zeros(n)
    g_w[:-1] = np.cumsum(upstream[::-1])[::-1]
    grad = _softmax_vjp(pi, (1.0 - n * logits.delta) * g_w)
    if reg_cfg is not None and reg_cfg.lam > 0:
        grad = grad + reg_cfg.lam * spacing_regularizer_grad(logits, reg_cfg.eps, n_features)
    return grad


def learnable_param_count(d: int, m: int, p: int = 3) -> int:
    """One logit per width: d (K + 1) = d (m - p)."""
    if m <= p:
        raise InvalidBudget(f"m={m} must exceed p={p}")
    if d < 0:
        raise ValueError("d must be nonnegative")
    return d * (m - p)


@dataclass
class KnotHistory:
    """Knot positions per feature, one snapshot per logged epoch."""

    epochs: list = field(default_factory=list)
    knots: list = field(default_factory=list)

    def log(self, epoch: int, all_logits: Sequence[KnotLogits]) -> None:
        self.epochs.append(int(epoch))
        self.knots.append([knots_from_logits(lg)[1].copy() for lg in all_logits])

    def __len__(self) -> int:
        return len(self.epochs)

    def rows(self):
        for epoch, snap in zip(self.epochs, self.knots):
            for j, kn in enumerate(snap):
                for l, v in enumerate(kn):
                    yield epoch, j, l, float(v)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "feature", "knot_index", "value"])
            for epoch, j, l, v in self.rows():
                w.writerow([epoch, j, l, f"{v:.17g}"])
