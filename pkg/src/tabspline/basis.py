"""B-, M- and I-spline bases over clamped knot sequences.

All evaluators are vectorised over points.  Knot derivatives come in two
flavours: :func:`basis_knot_jacobian` propagates dual numbers forward through
the Cox-de Boor recursion, while :func:`basis_and_vjp` runs the same recursion
in reverse and returns only the contracted gradient, which is what training
needs.  The two are tested against each other and against finite differences.

Interval convention: spans are half-open ``[tau_i, tau_{i+1})`` except the last
non-degenerate span, which is closed at ``hi`` so the basis does not vanish
at the right boundary.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateDomain, KnotOutOfDomain, NonIncreasingKnots


class BasisFamily(str, enum.Enum):
    BSPLINE = "BS"
    MSPLINE = "MS"
    ISPLINE = "IS"


@dataclass(frozen=True, eq=False)
class KnotVector:
    """Internal knots plus the clamped full sequence for one feature.

    ``full`` holds ``lo`` repeated ``degree + 1`` times, the internal knots,
    then ``hi`` repeated ``degree + 1`` times.
    """

    degree: int
    internal: np.ndarray
    lo: float = 0.0
    hi: float = 1.0
    full: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError(f"degree must be non-negative, got {self.degree}")
        lo, hi = float(self.lo), float(self.hi)
        if not lo < hi:
            raise DegenerateDomain(f"domain [{lo}, {hi}] is empty")
        internal = np.array(self.internal, dtype=np.float64).reshape(-1)
        if internal.size and np.any(np.diff(internal) <= 0):
            raise NonIncreasingKnots(f"internal knots must be strictly increasing: {internal}")
        if internal.size and (internal[0] <= lo or internal[-1] >= hi):
            raise KnotOutOfDomain(f"internal knots must lie strictly inside ({lo}, {hi})")
        internal.setflags(write=False)
        p1 = self.degree + 1
        full = np.concatenate([np.full(p1, lo), internal, np.full(p1, hi)])
        full.setflags(write=False)
        object.__setattr__(self, "internal", internal)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        object.__setattr__(self, "full", full)

    @property
    def n_internal(self) -> int:
        return self.internal.size

    @property
    def n_basis(self) -> int:
        return self.internal.size + self.degree + 1

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "lo": self.lo,
            "hi": self.hi,
            "internal": [float(k) for k in self.internal],
        }


def build_clamped_knots(
    internal: Sequence[float], degree: int, lo: float = 0.0, hi: float = 1.0
) -> KnotVector:
    return KnotVector(degree=int(degree), internal=np.asarray(internal, dtype=np.float64), lo=lo, hi=hi)


# --------------------------------------------------------------------------
# Cox-de Boor recursion on raw knot arrays
# --------------------------------------------------------------------------


def _safe_inv(den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(den)
    np.divide(1.0, den, out=out, where=den > 0)
    return out


def _span_index(tau: np.ndarray, p: int, x: np.ndarray) -> np.ndarray:
    """Index ``mu`` with ``tau[mu] <= x < tau[mu+1]``, last span closed."""
    mu = np.searchsorted(tau, x, side="right") - 1
    return np.clip(mu, p, tau.size - p - 2)


def _bspline_levels(tau: np.ndarray, p: int, x: np.ndarray):
    """Evaluate degree-``p`` B-splines and keep the per-level coefficients."""
    L = tau.size
    n = x.size
    b = np.zeros((n, L - 1))
    b[np.arange(n), _span_index(tau, p, x)] = 1.0
    X = x[:, None]
    levels = []
    for q in range(1, p + 1):
        nb = L - 1 - q
        left, right = tau[:nb], tau[q : q + nb]
        a, c = tau[1 : 1 + nb], tau[q + 1 : q + 1 + nb]
        inv1, inv2 = _safe_inv(right - left), _safe_inv(c - a)
        w1 = (X - left) * inv1
        w2 = (c - X) * inv2
        levels.append((b, w1, w2, inv1, inv2))
        b = w1 * b[:, :nb] + w2 * b[:, 1 : nb + 1]
    return b, levels


def _bspline_vjp(tau, p, x, levels, g):
    """Reverse pass: returns (d/dtau summed over points, d/dx per point)."""
    tbar = np.zeros(tau.size)
    xbar = np.zeros(x.size)
    X = x[:, None]
    for q in range(p, 0, -1):
        bprev, w1, w2, inv1, inv2 = levels[q - 1]
        nb = w1.shape[1]
        w1b = g * bprev[:, :nb]
        w2b = g * bprev[:, 1 : nb + 1]
        gprev = np.zeros_like(bprev)
        gprev[:, :nb] += w1 * g
        gprev[:, 1:] += w2 * g
        xbar += (w1b * inv1 - w2b * inv2).sum(axis=1)
        left, right = tau[:nb], tau[q : q + nb]
        a, c = tau[1 : 1 + nb], tau[q + 1 : q + 1 + nb]
        tbar[:nb] += (w1b * (X - right)).sum(axis=0) * inv1**2
        tbar[q : q + nb] -= (w1b * (X - left)).sum(axis=0) * inv1**2
        tbar[q + 1 : q + 1 + nb] += (w2b * (X - a)).sum(axis=0) * inv2**2
        tbar[1 : 1 + nb] += (w2b * (c - X)).sum(axis=0) * inv2**2
        g = gprev
    return tbar, xbar


def _bspline_jvp(tau, p, x, dtau, dx):
    """Forward-mode pass with dual parts ``dtau`` (L, D) and ``dx`` (n, D)."""
    L = tau.size
    n = x.size
    D = dtau.shape[1]
    b = np.zeros((n, L - 1))
    b[np.arange(n), _span_index(tau, p, x)] = 1.0
    db = np.zeros((n, L - 1, D))
    X = x[:, None]
    dX = dx[:, None, :]
    for q in range(1, p + 1):
        nb = L - 1 - q
        left, right = tau[:nb], tau[q : q + nb]
        a, c = tau[1 : 1 + nb], tau[q + 1 : q + 1 + nb]
        dl, dr = dtau[:nb], dtau[q : q + nb]
        da, dc = dtau[1 : 1 + nb], dtau[q + 1 : q + 1 + nb]
        inv1, inv2 = _safe_inv(right - left), _safe_inv(c - a)
        w1 = (X - left) * inv1
        w2 = (c - X) * inv2
        dw1 = (dX - dl) * inv1[:, None] - ((X - left) * inv1**2)[:, :, None] * (dr - dl)
        dw2 = (dc - dX) * inv2[:, None] - ((c - X) * inv2**2)[:, :, None] * (dc - da)
        db = (
            dw1 * b[:, :nb, None]
            + w1[:, :, None] * db[:, :nb]
            + dw2 * b[:, 1 : nb + 1, None]
            + w2[:, :, None] * db[:, 1 : nb + 1]
        )
        b = w1 * b[:, :nb] + w2 * b[:, 1 : nb + 1]
    return b, db


def _mspline_scale(tau, p):
    m = tau.size - p - 1
    inv = _safe_inv(tau[p + 1 : p + 1 + m] - tau[:m])
    return (p + 1) * inv, inv


def _mspline_values(tau, p, x):
    b, levels = _bspline_levels(tau, p, x)
    c, _ = _mspline_scale(tau, p)
    return b * c, (b, levels)


def _mspline_vjp(tau, p, x, cache, g):
    b, levels = cache
    c, inv = _mspline_scale(tau, p)
    m = c.size
    cbar = (g * b).sum(axis=0)
    tbar, xbar = _bspline_vjp(tau, p, x, levels, g * c)
    scale = cbar * (p + 1) * inv**2
    tbar[p + 1 : p + 1 + m] -= scale
    tbar[:m] += scale
    return tbar, xbar


def _mspline_jvp(tau, p, x, dtau, dx):
    b, db = _bspline_jvp(tau, p, x, dtau, dx)
    c, inv = _mspline_scale(tau, p)
    m = c.size
    dc = -((p + 1) * inv**2)[:, None] * (dtau[p + 1 : p + 1 + m] - dtau[:m])
    return b * c, db * c[None, :, None] + b[:, :, None] * dc[None]


@lru_cache(maxsize=None)
def _gauss_legendre(p: int):
    # ceil((p+1)/2) nodes integrate degree-p polynomials exactly
    u, w = np.polynomial.legendre.leggauss(max(1, math.ceil((p + 1) / 2)))
    return (u + 1.0) / 2.0, w / 2.0


def _spans(tau, p):
    return np.arange(p, tau.size - p - 1)


def _ispline_values(tau, p, x):
    """Integrate M-splines span by span with exact Gauss-Legendre rules."""
    frac, wts = _gauss_legendre(p)
    q = frac.size
    spans = _spans(tau, p)
    m = tau.size - p - 1
    h = tau[spans + 1] - tau[spans]
    t_full = (tau[spans, None] + h[:, None] * frac).ravel()
    m_full, full_cache = _mspline_values(tau, p, t_full)
    m_full = m_full.reshape(spans.size, q, m)
    per_span = h[:, None] * np.einsum("g,sgm->sm", wts, m_full)
    before = np.vstack([np.zeros((1, m)), np.cumsum(per_span, axis=0)[:-1]])

    mu = _span_index(tau, p, x)
    hx = x - tau[mu]
    t_part = (tau[mu, None] + hx[:, None] * frac).ravel()
    m_part, part_cache = _mspline_values(tau, p, t_part)
    m_part = m_part.reshape(x.size, q, m)
    values = before[mu - p] + hx[:, None] * np.einsum("g,ngm->nm", wts, m_part)
    cache = (spans, h, t_full, m_full, full_cache, mu, hx, t_part, m_part, part_cache)
    return values, cache


def _ispline_vjp(tau, p, x, cache, g):
    spans, h, t_full, m_full, full_cache, mu, hx, t_part, m_part, part_cache = cache
    frac, wts = _gauss_legendre(p)
    n, m = g.shape
    q = frac.size

    # partial span [tau_mu, x]
    hx_bar = np.einsum("nm,g,ngm->n", g, wts, m_part)
    mp_bar = (g * hx[:, None])[:, None, :] * wts[None, :, None]
    tbar, tp_bar = _mspline_vjp(tau, p, t_part, part_cache, mp_bar.reshape(n * q, m))
    tp_bar = tp_bar.reshape(n, q)
    hx_bar = hx_bar + tp_bar @ frac
    root_bar = tp_bar.sum(axis=1) - hx_bar
    tbar += np.bincount(mu, weights=root_bar, minlength=tau.size)
    xbar = hx_bar

    # complete spans strictly left of x
    onehot = np.zeros((n, spans.size))
    onehot[np.arange(n), mu - p] = 1.0
    acc = onehot.T @ g
    span_bar = np.vstack([np.cumsum(acc[::-1], axis=0)[::-1][1:], np.zeros((1, m))])
    h_bar = np.einsum("sm,g,sgm->s", span_bar, wts, m_full)
    mf_bar = (span_bar * h[:, None])[:, None, :] * wts[None, :, None]
    tb_full, tf_bar = _mspline_vjp(tau, p, t_full, full_cache, mf_bar.reshape(-1, m))
    tbar += tb_full
    tf_bar = tf_bar.reshape(spans.size, q)
    h_bar = h_bar + tf_bar @ frac
    np.add.at(tbar, spans, tf_bar.sum(axis=1) - h_bar)
    np.add.at(tbar, spans + 1, h_bar)
    return tbar, xbar


def _ispline_jvp(tau, p, x, dtau, dx):
    frac, wts = _gauss_legendre(p)
    q = frac.size
    spans = _spans(tau, p)
    m = tau.size - p - 1
    D = dtau.shape[1]
    h = tau[spans + 1] - tau[spans]
    dh = dtau[spans + 1] - dtau[spans]
    t_full = (tau[spans, None] + h[:, None] * frac).ravel()
    dt_full = (dtau[spans, None, :] + dh[:, None, :] * frac[None, :, None]).reshape(-1, D)
    mf, dmf = _mspline_jvp(tau, p, t_full, dtau, dt_full)
    mf = mf.reshape(spans.size, q, m)
    dmf = dmf.reshape(spans.size, q, m, D)
    per_span = h[:, None] * np.einsum("g,sgm->sm", wts, mf)
    dper_span = dh[:, None, :] * np.einsum("g,sgm->sm", wts, mf)[:, :, None] + h[:, None, None] * np.einsum(
        "g,sgmd->smd", wts, dmf
    )
    before = np.concatenate([np.zeros((1, m)), np.cumsum(per_span, axis=0)[:-1]])
    dbefore = np.concatenate([np.zeros((1, m, D)), np.cumsum(dper_span, axis=0)[:-1]])

    mu = _span_index(tau, p, x)
    hx = x - tau[mu]
    dhx = dx - dtau[mu]
    t_part = (tau[mu, None] + hx[:, None] * frac).ravel()
    dt_part = (dtau[mu][:, None, :] + dhx[:, None, :] * frac[None, :, None]).reshape(-1, D)
    mp, dmp = _mspline_jvp(tau, p, t_part, dtau, dt_part)
    mp = mp.reshape(x.size, q, m)
    dmp = dmp.reshape(x.size, q, m, D)
    integral = np.einsum("g,ngm->nm", wts, mp)
    values = before[mu - p] + hx[:, None] * integral
    dvalues = (
        dbefore[mu - p]
        + dhx[:, None, :] * integral[:, :, None]
        + hx[:, None, None] * np.einsum("g,ngmd->nmd", wts, dmp)
    )
    return values, dvalues


_VALUES = {
    BasisFamily.BSPLINE: lambda tau, p, x: _bspline_levels(tau, p, x),
    BasisFamily.MSPLINE: _mspline_values,
    BasisFamily.ISPLINE: _ispline_values,
}
_VJP = {
    BasisFamily.BSPLINE: lambda tau, p, x, cache, g: _bspline_vjp(tau, p, x, cache, g),
    BasisFamily.MSPLINE: _mspline_vjp,
    BasisFamily.ISPLINE: _ispline_vjp,
}
_JVP = {
    BasisFamily.BSPLINE: _bspline_jvp,
    BasisFamily.MSPLINE: _mspline_jvp,
    BasisFamily.ISPLINE: _ispline_jvp,
}


# --------------------------------------------------------------------------
# Public API
# --------------------------------------------------------------------------


def _points(kv: KnotVector, xs) -> np.ndarray:
    xs = np.asarray(xs, dtype=np.float64).reshape(-1)
    # out-of-domain inputs are clipped, same rule as at inference time
    return np.clip(xs, kv.lo, kv.hi)


def eval_basis_batch(family: BasisFamily, kv: KnotVector, xs) -> np.ndarray:
    """Basis matrix of shape ``(len(xs), kv.n_basis)``."""
    family = BasisFamily(family)
    values, _ = _VALUES[family](kv.full, kv.degree, _points(kv, xs))
    return values


def eval_basis(family: BasisFamily, kv: KnotVector, x: float) -> np.ndarray:
    return eval_basis_batch(family, kv, [x])[0]


def basis_knot_jacobian(family: BasisFamily, kv: KnotVector, x: float) -> np.ndarray:
    """Partial derivatives of each basis value w.r.t. each internal knot.

    Returns an ``(m, K)`` matrix.  Boundary knots are held fixed.
    """
    family = BasisFamily(family)
    p, K = kv.degree, kv.n_internal
    dtau = np.zeros((kv.full.size, K))
    dtau[p + 1 + np.arange(K), np.arange(K)] = 1.0
    xs = _points(kv, [x])
    _, dvalues = _JVP[family](kv.full, p, xs, dtau, np.zeros((1, K)))
    return dvalues[0]


def basis_and_vjp(
    family: BasisFamily, kv: KnotVector, xs
) -> tuple[np.ndarray, Callable[[np.ndarray], np.ndarray]]:
    """Evaluate the basis and return a closure mapping ``dL/dvalues`` to ``dL/dknots``.

    The closure accepts an ``(n, m)`` upstream gradient and returns the
    gradient with respect to the ``K`` internal knots, summed over points.
    """
    family = BasisFamily(family)
    tau, p = kv.full, kv.degree
    xs = _points(kv, xs)
    values, cache = _VALUES[family](tau, p, xs)
    K = kv.n_internal

    def vjp(upstream: np.ndarray) -> np.ndarray:
        upstream = np.asarray(upstream, dtype=np.float64)
        tbar, _ = _VJP[family](tau, p, xs, cache, upstream)
        return tbar[p + 1 : p + 1 + K]

    return values, vjp
