"""Method tags, per-fold scalers and the fitted numerical encoders.

An encoder is fit on training rows only and maps a raw ``(n, d + c)`` block
(numerical columns first, then categorical codes) to the model input.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .backbone import LayerNormBlock
from .basis import BasisFamily, KnotVector, basis_and_vjp, build_clamped_knots, eval_basis_batch
from .errors import ConfigError, ConstantColumnWarning, EmptyInput
from .knots import Boosted, Cart, KnotBudget, Quantile, Uniform, place_feature
from .learnable import (
    DEFAULT_DELTA,
    KnotLogits,
    KnotRegularizerConfig,
    knot_logit_gradient,
    knots_from_logits,
    spacing_regularizer,
)
from .ple import PleBoundaries, build_adaptive_ple, build_ple_boundaries, encode_ple_batch

REGRESSION = "regression"

_FAMILIES = {"BS": BasisFamily.BSPLINE, "MS": BasisFamily.MSPLINE, "IS": BasisFamily.ISPLINE}
_PLACEMENTS = ("U", "Q", "CART", "LGBM", "Grad-U")
_PLE_TAGS = {"PLE": "cart", "PLE-U": "uniform", "PLE-Q": "quantile"}

SPLINE_METHODS = tuple(f"{f}-{p}" for f in _FAMILIES for p in _PLACEMENTS)
ALL_METHODS = ("Std", "MinMax", *_PLE_TAGS, "PLE_adp", *SPLINE_METHODS)

# Std, MinMax, PLE, BS-* and IS-* placements, plus learnable M-splines
MAIN_METHODS = (
    "Std",
    "MinMax",
    "PLE",
    *(f"BS-{p}" for p in _PLACEMENTS),
    *(f"IS-{p}" for p in _PLACEMENTS),
    "MS-Grad-U",
)
ABLATION_REFERENCES = ("Std", "MinMax", "PLE_adp")
ABLATION_METHODS = ("PLE", *SPLINE_METHODS)

_CANON = {t.lower(): t for t in ALL_METHODS}


@dataclass(frozen=True)
class EncoderSpec:
    method: str
    m: int = 7
    p: int = 3

    def __post_init__(self):
        tag = _CANON.get(str(self.method).lower())
        if tag is None:
            raise ConfigError(f"unknown method tag {self.method!r}; expected one of {', '.join(ALL_METHODS)}")
        object.__setattr__(self, "method", tag)
        if self.kind == "spline":
            KnotBudget(self.m, self.p)
        elif self.kind == "ple" and self.m < 1:
            raise ConfigError("PLE needs m >= 1 bins")

    @property
    def kind(self) -> str:
        if self.method in ("Std", "MinMax"):
            return self.method.lower()
        if self.method == "PLE_adp":
            return "ple_adp"
        if self.method in _PLE_TAGS:
            return "ple"
        return "spline"

    @property
    def family(self) -> Optional[BasisFamily]:
        return _FAMILIES[self.method[:2]] if self.kind == "spline" else None

    @property
    def placement(self) -> Optional[str]:
        return self.method[3:] if self.kind == "spline" else None

    @property
    def learnable(self) -> bool:
        return self.placement == "Grad-U"

    @property
    def uses_m(self) -> bool:
        return self.kind in ("spline", "ple")

    def strategy(self):
        return {"U": Uniform(), "Q": Quantile(), "CART": Cart(), "LGBM": Boosted()}[self.placement]


@dataclass(frozen=True)
class ScalerState:
    """Training-row statistics.  Std uses the sample (n-1) deviation."""

    lo: np.ndarray
    hi: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    y_mean: float = 0.0
    y_std: float = 1.0

    @property
    def constant(self) -> np.ndarray:
        return self.hi == self.lo

    def minmax(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        span = np.where(self.constant, 1.0, self.hi - self.lo)
        out = np.clip((X - self.lo) / span, 0.0, 1.0)
        return np.where(self.constant, 0.5, out)

    def standardize(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        scale = np.where(self.std > 0, self.std, 1.0)
        return np.where(self.std > 0, (X - self.mean) / scale, 0.0)

    def z_target(self, y) -> np.ndarray:
        return (np.asarray(y, dtype=np.float64) - self.y_mean) / self.y_std

    def unz_target(self, z) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.y_std + self.y_mean

    def to_dict(self) -> dict:
        return {
            "min": self.lo.tolist(),
            "max": self.hi.tolist(),
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "y_mean": self.y_mean,
            "y_std": self.y_std,
        }


def fit_scalers(X_num, y=None, task: str = REGRESSION) -> ScalerState:
    X = np.asarray(X_num, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] == 0:
        raise EmptyInput("cannot fit scalers on zero rows")
    lo, hi = X.min(axis=0), X.max(axis=0)
    if np.any(lo == hi):
        cols = np.flatnonzero(lo == hi).tolist()
        warnings.warn(f"constant numerical columns {cols} map to 0.5", ConstantColumnWarning, stacklevel=2)
    std = X.std(axis=0, ddof=1) if X.shape[0] > 1 else np.zeros(X.shape[1])
    y_mean, y_std = 0.0, 1.0
    if y is not None and task == REGRESSION:
        y = np.asarray(y, dtype=np.float64)
        y_mean = float(y.mean())
        s = float(y.std(ddof=1)) if y.size > 1 else 0.0
        y_std = s if s > 0 else 1.0
    return ScalerState(lo, hi, X.mean(axis=0), std, y_mean, y_std)


class FittedEncoder:
    """Fixed (non-learnable) encoder: scaling plus optional expansion."""

    def __init__(self, spec: EncoderSpec, scaler: ScalerState, states: list, sources: list, n_cat: int):
        self.spec = spec
        self.scaler = scaler
        self.states = states
        self.sources = sources
        self.n_num = scaler.lo.size
        self.n_cat = n_cat

    @property
    def block_widths(self) -> list:
        if self.spec.kind in ("std", "minmax"):
            return [1] * self.n_num
        if self.spec.kind == "spline":
            return [self.spec.m] * self.n_num
        return [s.T for s in self.states]

    @property
    def width(self) -> int:
        return sum(self.block_widths) + self.n_cat

    layer_norm = None

    def encode_numeric(self, X_num) -> np.ndarray:
        X_num = np.asarray(X_num, dtype=np.float64)
        kind = self.spec.kind
        if kind == "std":
            return self.scaler.standardize(X_num)
        X01 = self.scaler.minmax(X_num)
        if kind == "minmax":
            return X01
        if kind == "spline":
            blocks = [eval_basis_batch(self.spec.family, kv, X01[:, j]) for j, kv in enumerate(self.states)]
        else:
            blocks = [encode_ple_batch(X01[:, j], b) for j, b in enumerate(self.states)]
        return np.hstack(blocks) if blocks else np.empty((X_num.shape[0], 0))

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.hstack([self.encode_numeric(X[:, : self.n_num]), X[:, self.n_num :]])

    def sidecar(self, names=None) -> dict:
        names = names or [f"x{j}" for j in range(self.n_num)]
        feats = []
        for j in range(self.n_num):
            entry = {"feature": names[j], "index": j}
            if self.spec.kind == "spline":
                kv: KnotVector = self.states[j]
                entry.update(knots=[float(v) for v in kv.internal], source=self.sources[j])
            elif self.spec.kind in ("ple", "ple_adp"):
                entry.update(self.states[j].to_dict())
            feats.append(entry)
        return {"method": self.spec.method, "m": self.spec.m, "p": self.spec.p, "scaler": self.scaler.to_dict(), "features": feats}


class LearnableSplineEncoder:
    """Spline expansion whose internal knots come from trainable logits."""

    def __init__(
        self,
        spec: EncoderSpec,
        scaler: ScalerState,
        n_cat: int,
        delta: float = DEFAULT_DELTA,
        reg: Optional[KnotRegularizerConfig] = None,
    ):
        self.spec = spec
        self.scaler = scaler
        self.n_num = scaler.lo.size
        self.n_cat = n_cat
        K = spec.m - spec.p - 1
        self.logits = [KnotLogits.uniform(K, delta) for _ in range(self.n_num)]
        self.reg = reg if reg is not None else KnotRegularizerConfig()
        self.sources = ["uniform"] * self.n_num

    @property
    def width(self) -> int:
        return self.spec.m * self.n_num + self.n_cat

    @property
    def layer_norm(self) -> Optional[LayerNormBlock]:
        if self.spec.family == BasisFamily.MSPLINE and self.n_num > 0:
            return LayerNormBlock(0, self.n_num, self.spec.m)
        return None

    @property
    def states(self) -> list:
        return [build_clamped_knots(knots_from_logits(lg)[1], self.spec.p) for lg in self.logits]

    def regularizer(self) -> float:
        return spacing_regularizer(self.logits, self.reg.eps)

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        X01 = self.scaler.minmax(X[:, : self.n_num])
        blocks = [eval_basis_batch(self.spec.family, kv, X01[:, j]) for j, kv in enumerate(self.states)]
        return np.hstack(blocks + [X[:, self.n_num :]])

    def transform_with_vjp(self, X):
        X = np.asarray(X, dtype=np.float64)
        X01 = self.scaler.minmax(X[:, : self.n_num])
        blocks, vjps = [], []
        for j, kv in enumerate(self.states):
            vals, vjp = basis_and_vjp(self.spec.family, kv, X01[:, j])
            blocks.append(vals)
            vjps.append(vjp)
        m, d = self.spec.m, self.n_num

        def vjp_all(g_in):
            return [
                knot_logit_gradient(self.logits[j], vjps[j](g_in[:, j * m : (j + 1) * m]), self.reg, d)
                for j in range(d)
            ]

        return np.hstack(blocks + [X[:, self.n_num :]]), vjp_all

    def get_state(self) -> list:
        return [lg.a.copy() for lg in self.logits]

    def set_state(self, state) -> None:
        for lg, a in zip(self.logits, state):
            lg.a[...] = a

    def log_knots(self, history, epoch: int) -> None:
        history.log(epoch, self.logits)

    def sidecar(self, names=None) -> dict:
        names = names or [f"x{j}" for j in range(self.n_num)]
        feats = [
            {"feature": names[j], "index": j, "knots": [float(v) for v in knots_from_logits(lg)[1]], "source": "learned"}
            for j, lg in enumerate(self.logits)
        ]
        return {"method": self.spec.method, "m": self.spec.m, "p": self.spec.p, "scaler": self.scaler.to_dict(), "features": feats}


def fit_encoder(spec: EncoderSpec, X_num, y, task: str, n_cat: int = 0, scaler: Optional[ScalerState] = None):
    """Fit scalers and knots/bins on training rows only."""
    X_num = np.asarray(X_num, dtype=np.float64)
    if scaler is None:
        scaler = fit_scalers(X_num, y, task)
    if spec.learnable:
        return LearnableSplineEncoder(spec, scaler, n_cat)
    X01 = scaler.minmax(X_num)
    states, sources = [], []
    if spec.kind == "spline":
        budget = KnotBudget(spec.m, spec.p)
        for j in range(X01.shape[1]):
            ks = place_feature(X01[:, j], y, task, spec.strategy(), budget)
            states.append(build_clamped_knots(ks.knots, spec.p))
            sources.append(ks.source)
    elif spec.kind == "ple":
        for j in range(X01.shape[1]):
            b = build_ple_boundaries(X01[:, j], y, task, T=spec.m, mode=_PLE_TAGS[spec.method])
            states.append(b)
            sources.append(b.source)
    elif spec.kind == "ple_adp":
        for j in range(X01.shape[1]):
            b = build_adaptive_ple(X01[:, j], y, task)
            states.append(b)
            sources.append(b.source)
    return FittedEncoder(spec, scaler, states, sources, n_cat)
