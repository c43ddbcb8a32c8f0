"""CSV ingestion, fold planning and the per-fold fit/train/evaluate loop."""

from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from .backbone import MlpModel, TrainConfig, TrainData, predict, train
from .encoding import EncoderSpec, ScalerState, fit_encoder, fit_scalers
from .errors import (
    AllRowsDropped,
    ClassSmallerThanKWarning,
    ConfigError,
    EmptyInput,
    TabSplineError,
    TargetMissing,
    TooFewRows,
)
from .metrics import nrmse, roc_auc, weighted_ovr_auc

log = logging.getLogger(__name__)

REGRESSION, BINARY, MULTICLASS = "regression", "binary", "multiclass"
TASKS = (REGRESSION, BINARY, MULTICLASS)

__all__ = [
    "Dataset",
    "CategoryEncoder",
    "FoldPlan",
    "FoldData",
    "FoldResult",
    "ScalerState",
    "fit_scalers",
    "ingest_csv",
    "make_folds",
    "prepare_fold",
    "run_fold",
    "run_config",
]


@dataclass
class Dataset:
    numerical: np.ndarray
    target: np.ndarray
    task: str
    categorical: Optional[np.ndarray] = None
    numerical_names: list = field(default_factory=list)
    categorical_names: list = field(default_factory=list)
    target_name: str = "y"
    classes: Optional[np.ndarray] = None

    def __post_init__(self):
        self.numerical = np.asarray(self.numerical, dtype=np.float64)
        if self.numerical.ndim == 1:
            self.numerical = self.numerical[:, None]
        n = self.numerical.shape[0]
        if self.categorical is None:
            self.categorical = np.empty((n, 0), dtype=object)
        self.categorical = np.asarray(self.categorical, dtype=object).reshape(n, -1)
        if self.task not in TASKS:
            raise ConfigError(f"unknown task {self.task!r}")
        target = np.asarray(self.target)
        if target.shape[0] != n:
            raise ValueError("row counts of features and target differ")
        if self.task == REGRESSION:
            self.target = target.astype(np.float64)
        else:
            if self.classes is None:
                self.classes, codes = np.unique(target, return_inverse=True)
                self.target = codes.reshape(-1).astype(np.int64)
            else:
                self.target = target.astype(np.int64)
        if not self.numerical_names:
            self.numerical_names = [f"x{j}" for j in range(self.d)]
        if not self.categorical_names:
            self.categorical_names = [f"c{j}" for j in range(self.c)]

    @property
    def n(self) -> int:
        return self.numerical.shape[0]

    @property
    def d(self) -> int:
        return self.numerical.shape[1]

    @property
    def c(self) -> int:
        return self.categorical.shape[1]

    @property
    def n_classes(self) -> int:
        return 0 if self.classes is None else len(self.classes)

    def subset(self, idx) -> "Dataset":
        return Dataset(
            self.numerical[idx],
            self.target[idx],
            self.task,
            self.categorical[idx],
            list(self.numerical_names),
            list(self.categorical_names),
            self.target_name,
            self.classes,
        )

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame(self.numerical, columns=self.numerical_names)
        for j, name in enumerate(self.categorical_names):
            df[name] = self.categorical[:, j]
        df[self.target_name] = self.target if self.classes is None else self.classes[self.target]
        return df


def infer_task(target: pd.Series) -> str:
    if pd.api.types.is_float_dtype(target):
        return REGRESSION
    if pd.api.types.is_integer_dtype(target) and target.nunique() > 10:
        return REGRESSION
    return BINARY if target.nunique() == 2 else MULTICLASS


def ingest_csv(
    path,
    target_column: str,
    categorical_columns: Optional[Sequence[str]] = None,
    task: Optional[str] = None,
) -> Dataset:
    """Read a CSV, drop incomplete rows, split numeric and categorical columns.

    Without an explicit list, non-numeric columns are treated as categorical.
    """
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    df = pd.read_csv(path)
    if target_column not in df.columns:
        raise TargetMissing(f"target column {target_column!r} not in {list(df.columns)}")
    n_before = len(df)
    df = df.replace(r"^\s*$", np.nan, regex=True).dropna(axis=0, how="any")
    if len(df) == 0:
        raise AllRowsDropped(f"all {n_before} rows contain missing values")
    if len(df) < n_before:
        log.info("dropped %d rows with missing values", n_before - len(df))
    features = [c for c in df.columns if c != target_column]
    if categorical_columns is None:
        categorical_columns = [c for c in features if not pd.api.types.is_numeric_dtype(df[c])]
    missing = [c for c in categorical_columns if c not in df.columns]
    if missing:
        raise ConfigError(f"categorical columns not found: {missing}")
    numeric = [c for c in features if c not in categorical_columns]
    try:
        num = df[numeric].to_numpy(dtype=np.float64)
    except ValueError as exc:
        raise TabSplineError(f"non-numeric value in numerical columns: {exc}") from exc
    cat = df[list(categorical_columns)].astype(str).to_numpy(dtype=object)
    task = task or infer_task(df[target_column])
    target = df[target_column].to_numpy()
    if task == REGRESSION:
        target = target.astype(np.float64)
    return Dataset(num, target, task, cat, numeric, list(categorical_columns), target_column)


@dataclass(frozen=True)
class CategoryEncoder:
    """Label encoding fit on training rows; unseen values map to -1."""

    vocab: tuple

    @classmethod
    def fit(cls, cat) -> "CategoryEncoder":
        cat = np.asarray(cat, dtype=object)
        return cls(tuple(tuple(sorted(set(cat[:, j].tolist()))) for j in range(cat.shape[1])))

    def transform(self, cat) -> np.ndarray:
        cat = np.asarray(cat, dtype=object)
        out = np.empty(cat.shape, dtype=np.float64)
        for j, values in enumerate(self.vocab):
            lookup = {v: i for i, v in enumerate(values)}
            out[:, j] = [lookup.get(v, -1) for v in cat[:, j]]
        return out


def canonical_order(ds: Dataset) -> np.ndarray:
    """Content-based row order, so plans do not depend on file row order."""
    # priority: target, numerical columns, categorical columns
    keys = [ds.target] + [ds.numerical[:, j] for j in range(ds.d)]
    keys += [ds.categorical[:, j].astype(str) for j in range(ds.c)]
    return np.lexsort(keys[::-1])


@dataclass(frozen=True)
class FoldPlan:
    k: int
    seed: int
    folds: tuple
    stratified: bool
    order: np.ndarray

    def fold_seed(self, fold_id: int) -> int:
        return self.seed + fold_id

    def train_test(self, fold_id: int):
        test = self.folds[fold_id]
        mask = np.ones(self.order.size, dtype=bool)
        mask[test] = False
        rank = np.empty(self.order.size, dtype=np.int64)
        rank[self.order] = np.arange(self.order.size)
        train_idx = np.flatnonzero(mask)
        return train_idx[np.argsort(rank[train_idx], kind="stable")], test


def make_folds(ds: Dataset, k: int = 5, seed: int = 0) -> FoldPlan:
    """Shuffled k folds; classification folds deal each class round-robin."""
    if ds.n < k:
        raise TooFewRows(f"{ds.n} rows cannot form {k} folds")
    order = canonical_order(ds)
    rng = np.random.default_rng(seed)
    assign = np.empty(ds.n, dtype=np.int64)
    stratified = ds.task != REGRESSION
    if stratified:
        counter = 0
        for cls in range(ds.n_classes):
            members = order[ds.target[order] == cls]
            if 0 < members.size < k:
                warnings.warn(f"class {cls} has {members.size} < {k} rows", ClassSmallerThanKWarning, stacklevel=2)
            members = members[rng.permutation(members.size)]
            assign[members] = (counter + np.arange(members.size)) % k
            counter += members.size
    else:
        shuffled = order[rng.permutation(ds.n)]
        assign[shuffled] = np.arange(ds.n) % k
    rank = np.empty(ds.n, dtype=np.int64)
    rank[order] = np.arange(ds.n)
    folds = []
    for f in range(k):
        idx = np.flatnonzero(assign == f)
        folds.append(idx[np.argsort(rank[idx], kind="stable")])
    return FoldPlan(k, seed, tuple(folds), stratified, order)


def validation_split(train_idx, target, task, frac: float, seed: int):
    """Split ``train_idx`` into (fit, validation), stratified for classification."""
    rng = np.random.default_rng(seed)
    train_idx = np.asarray(train_idx)
    if frac <= 0 or train_idx.size < 2:
        return train_idx, train_idx[:0]
    if task == REGRESSION:
        n_val = max(1, int(round(frac * train_idx.size)))
        pick = rng.permutation(train_idx.size)[:n_val]
    else:
        pick = []
        y = target[train_idx]
        for cls in np.unique(y):
            pos = np.flatnonzero(y == cls)
            n_val = int(round(frac * pos.size))
            pick.extend(pos[rng.permutation(pos.size)[:n_val]].tolist())
        pick = np.asarray(pick, dtype=np.int64)
        if pick.size == 0:
            pick = rng.permutation(train_idx.size)[:1]
    mask = np.zeros(train_idx.size, dtype=bool)
    mask[pick] = True
    return train_idx[~mask], train_idx[mask]


@dataclass
class FoldData:
    fold_id: int
    fit_idx: np.ndarray
    val_idx: np.ndarray
    test_idx: np.ndarray
    encoder: object
    categories: CategoryEncoder
    seed: int

    @property
    def scaler(self) -> ScalerState:
        return self.encoder.scaler


def raw_block(ds: Dataset, idx, categories: CategoryEncoder) -> np.ndarray:
    return np.hstack([ds.numerical[idx], categories.transform(ds.categorical[idx])])


def prepare_fold(ds: Dataset, plan: FoldPlan, fold_id: int, spec: EncoderSpec, val_frac: float = 0.1) -> FoldData:
    """Fit scalers, categories and knots/bins on the fold's fitting rows only."""
    train_idx, test_idx = plan.train_test(fold_id)
    if train_idx.size == 0:
        raise EmptyInput(f"fold {fold_id} has no training rows")
    seed = plan.fold_seed(fold_id)
    fit_idx, val_idx = validation_split(train_idx, ds.target, ds.task, val_frac, seed)
    categories = CategoryEncoder.fit(ds.categorical[fit_idx])
    task = REGRESSION if ds.task == REGRESSION else "classification"
    encoder = fit_encoder(spec, ds.numerical[fit_idx], ds.target[fit_idx], task, n_cat=ds.c)
    return FoldData(fold_id, fit_idx, val_idx, test_idx, encoder, categories, seed)


@dataclass(frozen=True)
class FoldResult:
    fold: int
    metric_name: str
    value: float
    best_epoch: int
    epochs: int


def _evaluate(ds: Dataset, fd: FoldData, model, task_kind: str):
    X_test = fd.encoder.transform(raw_block(ds, fd.test_idx, fd.categories))
    y_test = ds.target[fd.test_idx]
    if ds.task == REGRESSION:
        pred = fd.scaler.unz_target(predict(model, X_test, task_kind))
        return "nrmse", nrmse(pred, y_test)
    prob = predict(model, X_test, task_kind)
    if ds.n_classes == 2:
        return "auc", roc_auc(prob[:, 1], y_test)
    return "auc", weighted_ovr_auc(prob, y_test)


def run_fold(ds: Dataset, plan: FoldPlan, fold_id: int, spec: EncoderSpec, cfg: TrainConfig, val_frac: float = 0.1):
    """Fit, train and evaluate one fold.  Returns ``(FoldResult, TrainResult)``."""
    fd = prepare_fold(ds, plan, fold_id, spec, val_frac)
    enc = fd.encoder
    task_kind = REGRESSION if ds.task == REGRESSION else "classification"
    out_dim = 1 if ds.task == REGRESSION else ds.n_classes
    dtype = np.float32 if cfg.dtype == "float32" else np.float64
    model = MlpModel(
        enc.width,
        out_dim,
        cfg.hidden,
        cfg.dropout,
        layer_norm=enc.layer_norm,
        rng=np.random.default_rng(fd.seed),
        dtype=dtype,
    )
    if ds.task == REGRESSION:
        y_fit, y_val = fd.scaler.z_target(ds.target[fd.fit_idx]), fd.scaler.z_target(ds.target[fd.val_idx])
    else:
        y_fit, y_val = ds.target[fd.fit_idx], ds.target[fd.val_idx]
    X_fit = raw_block(ds, fd.fit_idx, fd.categories)
    X_val = raw_block(ds, fd.val_idx, fd.categories)
    learnable = spec.learnable
    if not learnable:
        X_fit, X_val = enc.transform(X_fit), enc.transform(X_val)
    data = TrainData(X_fit, y_fit, X_val, y_val)
    result = train(model, data, task_kind, cfg.with_(seed=fd.seed), encoder=enc if learnable else None)
    name, value = _evaluate(ds, fd, result.model, task_kind)
    return FoldResult(fold_id, name, float(value), result.best_epoch, len(result.history)), result


def run_config(
    ds: Dataset,
    spec: EncoderSpec,
    cfg: TrainConfig,
    k: int = 5,
    seed: int = 0,
    folds: Optional[Sequence[int]] = None,
    val_frac: float = 0.1,
) -> list:
    plan = make_folds(ds, k, seed)
    out = []
    for f in range(k) if folds is None else folds:
        try:
            res, _ = run_fold(ds, plan, f, spec, cfg, val_frac)
        except TabSplineError as exc:
            raise type(exc)(f"{spec.method} m={spec.m} fold {f}: {exc}") from exc
        out.append(res)
    return out
