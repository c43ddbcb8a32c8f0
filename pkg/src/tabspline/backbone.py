"""A small MLP with hand-written backward pass, AdamW and the training loop."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigError, EmptyTrainingSet, ShapeMismatch, StaleCache

log = logging.getLogger(__name__)

REGRESSION = "regression"


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-5
    batch_size: int = 512
    max_epochs: int = 200
    early_stop_patience: int = 15
    plateau_patience: int = 10
    plateau_factor: float = 0.1
    knot_lr: float = 2e-4
    warm_up: int = 50
    seed: int = 0
    hidden: tuple = (256, 128, 64)
    dropout: float = 0.3
    dtype: str = "float32"
    improve_rtol: float = 1e-8

    def __post_init__(self):
        for name in ("lr", "batch_size", "max_epochs", "early_stop_patience", "plateau_patience", "plateau_factor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.weight_decay < 0 or self.knot_lr < 0 or self.warm_up < 0:
            raise ConfigError("weight_decay, knot_lr and warm_up must be nonnegative")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")
        if self.dtype not in ("float32", "float64"):
            raise ConfigError("dtype must be float32 or float64")

    def with_(self, **kw) -> "TrainConfig":
        return replace(self, **kw)


@dataclass(frozen=True)
class LayerNormBlock:
    """Per-block LayerNorm over ``n_blocks`` contiguous groups of ``width`` columns."""

    start: int
    n_blocks: int
    width: int
    eps: float = 1e-5

    @property
    def stop(self) -> int:
        return self.start + self.n_blocks * self.width


@dataclass
class _Cache:
    version: int
    x: np.ndarray
    ln: Optional[tuple]
    acts: list
    masks: list


class MlpModel:
    """Affine layers with ReLU and inverted dropout between them.

    Parameters live in ``self.params`` keyed ``W{i}``, ``b{i}`` and, when a
    LayerNorm block is attached to the input, ``ln_gamma`` / ``ln_beta``.
    """

    def __init__(
        self,
        in_dim: int,
        out_dim: int,
        hidden: Sequence[int] = (256, 128, 64),
        dropout: float = 0.3,
        layer_norm: Optional[LayerNormBlock] = None,
        rng: Optional[np.random.Generator] = None,
        dtype=np.float64,
    ):
        if in_dim < 1 or out_dim < 1:
            raise ShapeMismatch("input and output widths must be positive")
        if layer_norm is not None and layer_norm.stop > in_dim:
            raise ShapeMismatch("LayerNorm block exceeds the input width")
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_dim, self.out_dim = in_dim, out_dim
        self.hidden = tuple(hidden)
        self.dropout = float(dropout)
        self.layer_norm = layer_norm
        self.dtype = np.dtype(dtype)
        self.params: dict[str, np.ndarray] = {}
        sizes = (in_dim, *self.hidden, out_dim)
        for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
            bound = 1.0 / math.sqrt(fan_in)
            self.params[f"W{i}"] = rng.uniform(-bound, bound, (fan_in, fan_out)).astype(self.dtype)
            self.params[f"b{i}"] = rng.uniform(-bound, bound, fan_out).astype(self.dtype)
        if layer_norm is not None:
            self.params["ln_gamma"] = np.ones((layer_norm.n_blocks, layer_norm.width), self.dtype)
            self.params["ln_beta"] = np.zeros((layer_norm.n_blocks, layer_norm.width), self.dtype)
        self.n_layers = len(sizes) - 1
        self.version = 0

    def decayed(self, name: str) -> bool:
        return name.startswith("W")

    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def get_state(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def set_state(self, state: dict) -> None:
        for k, v in state.items():
            self.params[k] = v.copy()
        self.version += 1

    def _ln_forward(self, x):
        ln = self.layer_norm
        blk = x[:, ln.start : ln.stop].reshape(x.shape[0], ln.n_blocks, ln.width)
        mu = blk.mean(axis=2, keepdims=True)
        xc = blk - mu
        inv = 1.0 / np.sqrt((xc * xc).mean(axis=2, keepdims=True) + ln.eps)
        xhat = xc * inv
        out = x.copy()
        out[:, ln.start : ln.stop] = (xhat * self.params["ln_gamma"] + self.params["ln_beta"]).reshape(x.shape[0], -1)
        return out, (xhat, inv)

    def _ln_backward(self, g, saved):
        ln = self.layer_norm
        xhat, inv = saved
        gy = g[:, ln.start : ln.stop].reshape(g.shape[0], ln.n_blocks, ln.width)
        d_gamma = np.sum(gy * xhat, axis=0)
        d_beta = np.sum(gy, axis=0)
        gxhat = gy * self.params["ln_gamma"]
        gx = inv * (
            gxhat - gxhat.mean(axis=2, keepdims=True) - xhat * (gxhat * xhat).mean(axis=2, keepdims=True)
        )
        out = g.copy()
        out[:, ln.start : ln.stop] = gx.reshape(g.shape[0], -1)
        return out, d_gamma, d_beta

    def forward(self, X, train_mode: bool = False, rng: Optional[np.random.Generator] = None):
        X = np.asarray(X, dtype=self.dtype)
        if X.ndim != 2 or X.shape[1] != self.in_dim:
            raise ShapeMismatch(f"expected (n, {self.in_dim}) input, got {X.shape}")
        h, ln_saved = X, None
        if self.layer_norm is not None:
            h, ln_saved = self._ln_forward(X)
        acts, masks = [h], []
        drop = train_mode and self.dropout > 0
        if drop and rng is None:
            raise ValueError("train-mode dropout needs an rng")
        if drop:
            # 16-bit uniform draws; the realised rate is cut / 2**16
            cut = int(round(self.dropout * 65536))
            scale = self.dtype.type(65536.0 / (65536 - cut))
        for i in range(self.n_layers):
            z = h @ self.params[f"W{i}"]
            z += self.params[f"b{i}"]
            if i == self.n_layers - 1:
                h = z
                break
            h = np.maximum(z, 0.0, out=z)
            if drop:
                h *= rng.integers(0, 65536, size=h.shape, dtype=np.uint16) >= cut
                h *= scale
            masks.append(scale if drop else None)
            acts.append(h)
        return h, _Cache(self.version, X, ln_saved, acts, masks)

    def backward(self, cache: _Cache, grad_out):
        """Return ``(param_grads, input_grad)`` for ``dL/doutput = grad_out``."""
        if cache.version != self.version:
            raise StaleCache("parameters changed since this forward pass")
        g = np.asarray(grad_out, dtype=self.dtype)
        grads: dict[str, np.ndarray] = {}
        for i in reversed(range(self.n_layers)):
            a = cache.acts[i]
            grads[f"W{i}"] = a.T @ g
            grads[f"b{i}"] = g.sum(axis=0)
            g = g @ self.params[f"W{i}"].T
            if i > 0:
                # a > 0 exactly where the unit was active and not dropped
                g *= a > 0
                scale = cache.masks[i - 1]
                if scale is not None:
                    g *= scale
        if self.layer_norm is not None:
            g, grads["ln_gamma"], grads["ln_beta"] = self._ln_backward(g, cache.ln)
        return grads, g


def forward(model: MlpModel, batch, train_mode: bool = False, rng=None):
    return model.forward(batch, train_mode, rng)


def backward(model: MlpModel, cache, loss_grad):
    return model.backward(cache, loss_grad)


def squared_loss(pred, y):
    """Mean squared error on a single output column and its gradient."""
    r = pred[:, 0] - y
    return float(np.mean(r * r)), (2.0 / r.size * r)[:, None].astype(pred.dtype)


def softmax_cross_entropy(logits, labels):
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = labels.size
    loss = -float(np.mean(logp[np.arange(n), labels]))
    g = np.exp(logp)
    g[np.arange(n), labels] -= 1.0
    return loss, (g / n).astype(logits.dtype)


def softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def task_loss(task: str, out, y):
    return squared_loss(out, y) if task == REGRESSION else softmax_cross_entropy(out, y)


@dataclass
class AdamState:
    t: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(
    params: dict,
    grads: dict,
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
    betas: tuple = (0.9, 0.999),
    eps: float = 1e-8,
    decay: Optional[dict] = None,
):
    """In-place AdamW update.  ``decay`` optionally maps name -> bool to skip decay."""
    b1, b2 = betas
    state.t += 1
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for name, g in grads.items():
        p = params[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        if weight_decay and (decay is None or decay.get(name, True)):
            p *= 1.0 - lr * weight_decay
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = np.sqrt(v)
        denom /= math.sqrt(c2)
        denom += eps
        p -= (lr / c1) * m / denom
    return params, state


@dataclass
class TrainData:
    """Training and validation arrays.

    Without an encoder the ``X`` arrays are model inputs; with one they are
    whatever the encoder's ``transform`` consumes.
    """

    X_train: np.ndarray
    y_train: np.ndarray
    X_val: np.ndarray
    y_val: np.ndarray


@dataclass
class TrainResult:
    model: MlpModel
    encoder: object
    history: list
    best_epoch: int
    best_val: float
    knot_history: object = None

    def history_to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_metric", "lr", "knot_lr"])
            for row in self.history:
                w.writerow([row["epoch"]] + [f"{row[k]:.17g}" for k in ("train_loss", "val_metric", "lr", "knot_lr")])


def _improved(value, best, rtol):
    return value < best - rtol * abs(best) if math.isfinite(best) else math.isfinite(value)


def train(model: MlpModel, data: TrainData, task: str, cfg: TrainConfig, encoder=None) -> TrainResult:
    """Mini-batch AdamW with plateau LR decay, early stopping and best-epoch restore.

    ``encoder``, when given, must provide ``transform(X)``,
    ``transform_with_vjp(X) -> (inputs, vjp)``, ``logits`` (list of
    ``KnotLogits``), ``get_state()`` / ``set_state()`` and ``log_knots(history, epoch)``.
    Its knot logits stay frozen for the first ``cfg.warm_up`` epochs.
    """
    n = len(data.y_train)
    if n == 0:
        raise EmptyTrainingSet("no training rows")
    rng = np.random.default_rng(cfg.seed)
    dt = model.dtype
    y_train = data.y_train.astype(dt) if task == REGRESSION else data.y_train.astype(np.int64)
    y_val = data.y_val.astype(dt) if task == REGRESSION else data.y_val.astype(np.int64)
    has_val = len(y_val) > 0

    decay = {k: model.decayed(k) for k in model.params}
    opt_state = AdamState()
    knot_state = AdamState()
    lr, knot_lr = cfg.lr, cfg.knot_lr

    knot_history = None
    frozen_inputs = None
    if encoder is not None:
        from .learnable import KnotHistory

        knot_history = KnotHistory()
        knot_history.log(0, encoder.logits)
    else:
        frozen_inputs = np.asarray(data.X_train, dtype=dt)

    def val_inputs():
        X = encoder.transform(data.X_val) if encoder is not None else data.X_val
        return np.asarray(X, dtype=dt)

    best_val, best_epoch = math.inf, 0
    best_state = model.get_state()
    best_enc = encoder.get_state() if encoder is not None else None
    bad_stop = bad_plateau = 0
    history = []
    for epoch in range(1, cfg.max_epochs + 1):
        learn_knots = encoder is not None and epoch > cfg.warm_up and knot_lr > 0
        if encoder is not None and not learn_knots and frozen_inputs is None:
            frozen_inputs = np.asarray(encoder.transform(data.X_train), dtype=dt)
        if learn_knots:
            frozen_inputs = None
        perm = rng.permutation(n)
        total = 0.0
        for s in range(0, n, cfg.batch_size):
            idx = perm[s : s + cfg.batch_size]
            if learn_knots:
                Xb, vjp = encoder.transform_with_vjp(data.X_train[idx])
                Xb = np.asarray(Xb, dtype=dt)
            else:
                Xb = frozen_inputs[idx]
            out, cache = model.forward(Xb, train_mode=True, rng=rng)
            loss, g = task_loss(task, out, y_train[idx])
            total += loss * idx.size
            grads, g_in = model.backward(cache, g)
            adamw_step(model.params, grads, opt_state, lr, cfg.weight_decay, decay=decay)
            model.version += 1
            if learn_knots:
                knot_grads = vjp(g_in.astype(np.float64))
                kparams = {str(j): lg.a for j, lg in enumerate(encoder.logits)}
                adamw_step(kparams, {str(j): gj for j, gj in enumerate(knot_grads)}, knot_state, knot_lr, 0.0)
        if encoder is not None:
            encoder.log_knots(knot_history, epoch)
        train_loss = total / n
        if has_val:
            out, _ = model.forward(val_inputs(), train_mode=False)
            val = task_loss(task, out, y_val)[0]
        else:
            val = train_loss
        history.append(
            {
                "epoch": epoch,
                "train_loss": train_loss,
                "val_metric": val,
                "lr": lr,
                "knot_lr": knot_lr if learn_knots else 0.0,
            }
        )
        if _improved(val, best_val, cfg.improve_rtol):
            best_val, best_epoch = val, epoch
            best_state = model.get_state()
            best_enc = encoder.get_state() if encoder is not None else None
            bad_stop = bad_plateau = 0
        else:
            bad_stop += 1
            bad_plateau += 1
            if bad_stop >= cfg.early_stop_patience:
                log.debug("early stop at epoch %d", epoch)
                break
            if bad_plateau >= cfg.plateau_patience:
                lr *= cfg.plateau_factor
                knot_lr *= cfg.plateau_factor
                bad_plateau = 0
    model.set_state(best_state)
    if encoder is not None:
        encoder.set_state(best_enc)
    return TrainResult(model, encoder, history, best_epoch, best_val, knot_history)


def predict(model: MlpModel, X, task: str, encoder=None) -> np.ndarray:
    """Regression values (n,) or class probabilities (n, C), eval mode."""
    X = encoder.transform(X) if encoder is not None else X
    out, _ = model.forward(np.asarray(X, dtype=model.dtype), train_mode=False)
    out = out.astype(np.float64)
    return out[:, 0] if task == REGRESSION else softmax(out)
