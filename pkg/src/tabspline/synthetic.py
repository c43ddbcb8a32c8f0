"""Seeded synthetic datasets and the simple linear fits used on top of encodings."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularSystem

_MIX_WEIGHTS = (0.70, 0.20, 0.10)


def ablation_target(x0):
    """Smooth wave, a step at 0.55 and a narrow bump at 0.78."""
    x0 = np.asarray(x0, dtype=np.float64)
    return (
        0.8 * np.sin(2 * np.pi * x0)
        + 1.5 * (x0 > 0.55)
        + 2.0 * np.exp(-((x0 - 0.78) ** 2) / (2 * 0.03**2))
    )


def sample_ablation_x0(n: int, rng: np.random.Generator) -> np.ndarray:
    comp = rng.choice(3, size=n, p=_MIX_WEIGHTS)
    return np.where(
        comp == 0,
        rng.beta(2.0, 8.0, n),
        np.where(comp == 1, rng.beta(8.0, 2.0, n), rng.uniform(0.0, 1.0, n)),
    )


def gen_ablation(n: int = 8000, seed: int = 0, noise_std: float = 0.10):
    """Two features (informative x0, correlated nuisance x1) and a noisy target."""
    from .pipeline import Dataset

    if n < 1:
        raise ValueError("n must be positive")
    rng = np.random.default_rng(seed)
    x0 = sample_ablation_x0(n, rng)
    x1 = 0.6 * x0 + 0.4 * rng.uniform(0.0, 1.0, n)
    y = ablation_target(x0) + rng.normal(0.0, noise_std, n)
    return Dataset(np.column_stack([x0, x1]), y, "regression", numerical_names=["x0", "x1"], target_name="y")


def illustration_regression_target(x):
    x = np.asarray(x, dtype=np.float64)
    return np.sin(3 * np.pi * x) + 0.5 * np.cos(7 * np.pi * x) * np.exp(-2 * x) + 0.3 * x**2


def gen_illustration_regression(n: int = 2500, seed: int = 0, noise_std: float = 0.2):
    """Uniform x on [0, 1]; noise variance 0.04 by default."""
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    y = illustration_regression_target(x) + rng.normal(0.0, noise_std, n)
    return x, y, illustration_regression_target


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(z, dtype=np.float64)))


def illustration_probability(x):
    x = np.asarray(x, dtype=np.float64)
    return np.clip(_sigmoid(25 * (x - 0.33)) - _sigmoid(25 * (x - 0.72)) + 0.04, 0.04, 0.96)


def gen_illustration_classification(n: int = 2500, seed: int = 0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(0.0, 1.0, n)
    labels = (rng.uniform(0.0, 1.0, n) < illustration_probability(x)).astype(np.int64)
    return x, labels, illustration_probability


@dataclass(frozen=True)
class LinearModel:
    coef: np.ndarray
    intercept: float

    def decision(self, Phi) -> np.ndarray:
        return np.asarray(Phi, dtype=np.float64) @ self.coef + self.intercept


def ridge_fit(Phi, y, reg_strength: float = 1e-3) -> LinearModel:
    """Ridge with an unpenalized intercept, solved on centred data."""
    Phi = np.asarray(Phi, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    mu, ym = Phi.mean(axis=0), y.mean()
    Xc = Phi - mu
    A = Xc.T @ Xc + reg_strength * np.eye(Phi.shape[1])
    if reg_strength == 0 and np.linalg.matrix_rank(A) < A.shape[0]:
        raise SingularSystem("rank-deficient design without regularization")
    try:
        w = np.linalg.solve(A, Xc.T @ (y - ym))
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return LinearModel(w, float(ym - mu @ w))


@dataclass(frozen=True)
class LogisticModel(LinearModel):
    n_steps: int = 0
    converged: bool = False
    losses: tuple = field(default=(), repr=False)

    def predict_proba(self, Phi) -> np.ndarray:
        return _sigmoid(self.decision(Phi))


def _log_loss(z, y):
    # log(1 + e^z) - y z, written stably
    return float(np.mean(np.logaddexp(0.0, z) - y * z))


def logistic_fit(Phi, labels, steps: int = 5000, lr: float = 0.5, tol: float = 1e-6) -> LogisticModel:
    """Full-batch gradient descent on the mean log-loss (weights and intercept)."""
    Phi = np.asarray(Phi, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    n, m = Phi.shape
    w, b = np.zeros(m), 0.0
    losses = []
    converged = False
    step = 0
    for step in range(1, steps + 1):
        z = Phi @ w + b
        r = _sigmoid(z) - y
        gw, gb = Phi.T @ r / n, float(r.mean())
        losses.append(_log_loss(z, y))
        if np.sqrt(gw @ gw + gb * gb) <= tol:
            converged = True
            step -= 1
            break
        w = w - lr * gw
        b = b - lr * gb
    return LogisticModel(w, b, step, converged, tuple(losses))
