"""Reusable experiment drivers shared by the CLI and the acceptance tests."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .backbone import TrainConfig
from .basis import BasisFamily, build_clamped_knots, eval_basis_batch
from .encoding import ABLATION_METHODS, ABLATION_REFERENCES, EncoderSpec
from .knots import uniform_knots
from .metrics import brier, nrmse, roc_auc
from .pipeline import make_folds, run_fold
from .ple import PleBoundaries, encode_ple_batch
from .synthetic import (
    gen_ablation,
    gen_illustration_classification,
    gen_illustration_regression,
    logistic_fit,
    ridge_fit,
)

log = logging.getLogger(__name__)

ABLATION_SIZES = tuple(range(5, 55, 5))


def ablation_configs(methods: Sequence[str] = ABLATION_METHODS, sizes: Sequence[int] = ABLATION_SIZES,
                     references: Sequence[str] = ABLATION_REFERENCES) -> list:
    """(method, m) pairs; reference methods appear once with m = 0."""
    out = [(r, 0) for r in references]
    out += [(meth, m) for meth in methods for m in sizes]
    return out


@dataclass(frozen=True)
class AblationUnit:
    method: str
    m: int
    seed: int
    nrmse: float
    best_epoch: int
    epochs: int


def run_ablation_unit(method: str, m: int, seed: int, n: int = 8000, cfg: Optional[TrainConfig] = None,
                      k: int = 5, fold: int = 0) -> AblationUnit:
    """One training run: seeded data, one 80/20 split (a fold of a k-fold plan)."""
    cfg = cfg or TrainConfig()
    ds = gen_ablation(n, seed)
    plan = make_folds(ds, k, seed)
    spec = EncoderSpec(method, m if m > 0 else 7)
    res, train_res = run_fold(ds, plan, fold, spec, cfg)
    return AblationUnit(method, m, seed, res.value, res.best_epoch, res.epochs)


def summarize(units: Iterable[AblationUnit]) -> dict:
    """(method, m) -> (mean, sample std, count) of test NRMSE."""
    groups: dict = {}
    for u in units:
        groups.setdefault((u.method, u.m), []).append(u.nrmse)
    return {
        key: (float(np.mean(v)), float(np.std(v, ddof=1)) if len(v) > 1 else 0.0, len(v))
        for key, v in groups.items()
    }


def illustration_encoders(m: int = 10):
    ple = PleBoundaries(np.linspace(0.0, 1.0, m + 1), "uniform")
    kv = build_clamped_knots(uniform_knots(0.0, 1.0, m - 4), 3)
    return {
        "ple": lambda x: encode_ple_batch(x, ple),
        "bspline": lambda x: eval_basis_batch(BasisFamily.BSPLINE, kv, x),
    }


def run_illustration(seed: int = 0, m: int = 10, n: int = 2500, grid_size: int = 1001,
                     reg_strength: float = 1e-3, steps: int = 5000, lr: float = 0.5):
    """PLE vs cubic B-spline under Ridge (regression) and logistic regression.

    Regression NRMSE is measured on a dense grid against the noiseless target.
    AUC and Brier use the sampled labels.  Returns ``(metrics, curves)``.
    """
    enc = illustration_encoders(m)
    grid = np.linspace(0.0, 1.0, grid_size)
    x, y, f_true = gen_illustration_regression(n, seed)
    xc, labels, p_true = gen_illustration_classification(n, seed)
    metrics, curves = {}, {"grid": grid, "f_true": f_true(grid), "p_true": p_true(grid)}
    for name, phi in enc.items():
        ridge = ridge_fit(phi(x), y, reg_strength)
        fit_grid = ridge.decision(phi(grid))
        logit = logistic_fit(phi(xc), labels, steps=steps, lr=lr)
        prob = logit.predict_proba(phi(xc))
        metrics[name] = {
            "nrmse": nrmse(fit_grid, f_true(grid)),
            "auc": roc_auc(prob, labels),
            "brier": brier(prob, labels),
        }
        curves[f"{name}_regression"] = fit_grid
        curves[f"{name}_probability"] = logit.predict_proba(phi(grid))
    return metrics, curves
