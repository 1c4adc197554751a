"""Feedforward neural Cox model (DeepSurv style) in plain numpy.

The network maps a standardized feature vector to one log-hazard score:
each hidden layer is affine -> [batch norm] -> activation -> [dropout],
followed by an affine output of width 1.  Training minimizes the negative
Cox partial likelihood with risk sets taken inside each minibatch.
"""

from __future__ import annotations

import copy
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .cohort import FeatureMatrix
from .coxph import StepFunction, _baseline
from .errors import ConfigError, DivergenceError, LREstimationError, SchemaError, ShapeError
from .metrics import concordance

log = logging.getLogger(__name__)

ACTIVATIONS = ("relu", "leaky_relu", "selu")
OPTIMIZERS = ("sgd_momentum", "adam")
BN_MOMENTUM = 0.9
BN_EPS = 1e-5
LEAKY_SLOPE = 0.01
SELU_ALPHA = 1.6732632423543772
SELU_SCALE = 1.0507009873554805


@dataclass
class MlpSpec:
    hidden_layers: tuple[int, ...] = (32,)
    activation: str = "relu"
    dropout_rate: float = 0.0
    batch_norm: bool = False
    weight_decay: float = 0.0
    optimizer: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    learning_rate: float = 1e-3
    batch_size: int = 256
    max_epochs: int = 100
    early_stop_patience: int = 10

    def __post_init__(self):
        self.hidden_layers = tuple(int(w) for w in self.hidden_layers)
        if len(self.hidden_layers) > 3 or any(w < 1 for w in self.hidden_layers):
            raise ConfigError(f"hidden_layers must be 0-3 widths >= 1, got {self.hidden_layers}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError("dropout_rate must lie in [0, 1)")
        if self.weight_decay < 0 or self.learning_rate < 0:
            raise ConfigError("weight_decay and learning_rate must be >= 0")
        if self.batch_size < 1 or self.max_epochs < 1 or self.early_stop_patience < 1:
            raise ConfigError("batch_size, max_epochs and early_stop_patience must be >= 1")

    def to_json(self):
        d = asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        return d


@dataclass
class Layer:
    W: np.ndarray
    b: np.ndarray
    gamma: np.ndarray | None = None
    beta: np.ndarray | None = None
    running_mean: np.ndarray | None = None
    running_var: np.ndarray | None = None

    def params(self):
        out = [("W", self.W), ("b", self.b)]
        if self.gamma is not None:
            out += [("gamma", self.gamma), ("beta", self.beta)]
        return out


@dataclass
class MlpSurvModel:
    spec: MlpSpec
    layers: list
    n_features: int
    column_names: tuple = ()
    scaling: dict = field(default_factory=dict)
    training_log: list = field(default_factory=list)
    best_epoch: int = 0

    def param_list(self):
        return [arr for layer in self.layers for _, arr in layer.params()]

    def to_json(self):
        layers = []
        for layer in self.layers:
            entry = {"W": layer.W.tolist(), "b": layer.b.tolist()}
            if layer.gamma is not None:
                entry.update(
                    gamma=layer.gamma.tolist(),
                    beta=layer.beta.tolist(),
                    running_mean=layer.running_mean.tolist(),
                    running_var=layer.running_var.tolist(),
                )
            layers.append(entry)
        return {
            "kind": "mlp",
            "spec": self.spec.to_json(),
            "n_features": self.n_features,
            "column_names": list(self.column_names),
            "scaling": {c: list(v) for c, v in self.scaling.items()},
            "layers": layers,
            "training_log": self.training_log,
            "best_epoch": self.best_epoch,
        }

    @classmethod
    def from_json(cls, doc):
        if doc.get("kind") != "mlp":
            raise SchemaError(f"not a neural model artifact (kind={doc.get('kind')!r})")
        layers = []
        for e in doc["layers"]:
            arr = {k: np.asarray(v, dtype=float) for k, v in e.items()}
            layers.append(Layer(**arr))
        return cls(
            spec=MlpSpec(**doc["spec"]),
            layers=layers,
            n_features=int(doc["n_features"]),
            column_names=tuple(doc.get("column_names", ())),
            scaling={c: tuple(v) for c, v in doc.get("scaling", {}).items()},
            training_log=list(doc.get("training_log", [])),
            best_epoch=int(doc.get("best_epoch", 0)),
        )


def init_model(spec, n_features, rng):
    """Uniform fan-in initialization: He bound sqrt(6/fan_in) for relu-type
    activations, LeCun bound sqrt(3/fan_in) for selu and the output layer."""
    widths = [n_features, *spec.hidden_layers]
    layers = []
    gain = 3.0 if spec.activation == "selu" else 6.0
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        lim = math.sqrt(gain / fan_in)
        layer = Layer(rng.uniform(-lim, lim, (fan_in, fan_out)), np.zeros(fan_out))
        if spec.batch_norm:
            layer.gamma = np.ones(fan_out)
            layer.beta = np.zeros(fan_out)
            layer.running_mean = np.zeros(fan_out)
            layer.running_var = np.ones(fan_out)
        layers.append(layer)
    lim = math.sqrt(3.0 / widths[-1])
    layers.append(Layer(rng.uniform(-lim, lim, (widths[-1], 1)), np.zeros(1)))
    return MlpSurvModel(spec, layers, n_features)


# --------------------------------------------------------------------------
# Forward / backward


def _act(kind, z):
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "leaky_relu":
        return np.where(z > 0, z, LEAKY_SLOPE * z)
    return SELU_SCALE * np.where(z > 0, z, SELU_ALPHA * np.expm1(np.minimum(z, 0.0)))


def _act_grad(kind, z):
    if kind == "relu":
        return (z > 0).astype(float)
    if kind == "leaky_relu":
        return np.where(z > 0, 1.0, LEAKY_SLOPE)
    return SELU_SCALE * np.where(z > 0, 1.0, SELU_ALPHA * np.exp(np.minimum(z, 0.0)))


def _forward(model, X, bn="running", dropout_rng=None, update_stats=False):
    """Run the network on rows of ``X``.

    ``bn`` selects batch-norm statistics: ``"batch"`` (training) or
    ``"running"`` (inference / frozen).  Dropout is applied only when
    ``dropout_rng`` is given.  Returns ``(scores, cache)``.
    """
    spec = model.spec
    h = X
    cache = []
    for layer in model.layers[:-1]:
        c = {"x": h}
        z = h @ layer.W + layer.b
        if layer.gamma is not None:
            if bn == "batch":
                mu = z.mean(axis=0)
                var = z.var(axis=0)
                if update_stats:
                    layer.running_mean[:] = BN_MOMENTUM * layer.running_mean + (1 - BN_MOMENTUM) * mu
                    unbiased = var * z.shape[0] / max(z.shape[0] - 1, 1)
                    layer.running_var[:] = BN_MOMENTUM * layer.running_var + (1 - BN_MOMENTUM) * unbiased
            else:
                mu, var = layer.running_mean, layer.running_var
            inv = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mu) * inv
            c.update(xhat=xhat, inv=inv, bn=bn)
            z = layer.gamma * xhat + layer.beta
        c["z"] = z
        h = _act(spec.activation, z)
        if dropout_rng is not None and spec.dropout_rate > 0:
            keep = 1.0 - spec.dropout_rate
            mask = (dropout_rng.random(h.shape) < keep) / keep
            h = h * mask
            c["mask"] = mask
        cache.append(c)
    out = model.layers[-1]
    cache.append({"x": h})
    return (h @ out.W + out.b)[:, 0], cache


def _backward(model, cache, dscores):
    """Gradients of a scalar loss given ``d loss / d scores``; returns a list
    of arrays aligned with ``model.param_list()``."""
    grads = [None] * len(model.layers)
    out = model.layers[-1]
    g = dscores[:, None]
    x = cache[-1]["x"]
    grads[-1] = [x.T @ g, g.sum(axis=0)]
    dh = g @ out.W.T
    for k in range(len(model.layers) - 2, -1, -1):
        layer, c = model.layers[k], cache[k]
        if "mask" in c:
            dh = dh * c["mask"]
        dz = dh * _act_grad(model.spec.activation, c["z"])
        lg = []
        if layer.gamma is not None:
            xhat = c["xhat"]
            dgamma = (dz * xhat).sum(axis=0)
            dbeta = dz.sum(axis=0)
            dxhat = dz * layer.gamma
            if c["bn"] == "batch":
                m = dz.shape[0]
                dz = c["inv"] / m * (m * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
            else:
                dz = dxhat * c["inv"]
            lg = [dgamma, dbeta]
        grads[k] = [c["x"].T @ dz, dz.sum(axis=0)] + lg
        dh = dz @ layer.W.T
    return [a for lg in grads for a in lg]


def forward(model, x, mode="infer", rng=None):
    """Log-hazard score(s).  ``mode="infer"`` uses running batch-norm
    statistics and no dropout; ``mode="train"`` uses batch statistics and
    applies dropout with ``rng`` (a fresh default generator if omitted)."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.n_features:
        raise ShapeError(f"expected {model.n_features} features, got shape {x.shape}")
    if mode == "infer":
        s, _ = _forward(model, X, bn="running")
    elif mode == "train":
        s, _ = _forward(model, X, bn="batch", dropout_rng=rng or np.random.default_rng())
    else:
        raise ConfigError(f"unknown mode {mode!r}")
    return float(s[0]) if single else s


def predict_scores(model, X):
    Xv = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
    return forward(model, Xv, mode="infer")


# --------------------------------------------------------------------------
# Loss


def _cox_loss(scores, duration, event):
    """Mean negative partial log-likelihood over the events of one batch
    (Breslow ties) and its gradient with respect to the scores."""
    n_ev = int(event.sum())
    if n_ev == 0:
        return None, None
    order = np.argsort(duration, kind="stable")
    t = duration[order]
    s = scores[order]
    e = event[order]
    # log sum_{t_j >= t_i} exp(s_j): reverse cumulative logsumexp, widened to tie groups
    rev = np.logaddexp.accumulate(s[::-1])[::-1]
    first = np.searchsorted(t, t, side="left")
    lse = rev[first]
    value = -(s[e] - lse[e]).sum() / n_ev
    # d/ds_k: -(e_k - exp(s_k) * sum_{events i, t_i <= t_k} exp(-lse_i)) / n_ev
    inv = np.where(e, -lse, -np.inf)
    acc = np.logaddexp.accumulate(inv)
    last = np.searchsorted(t, t, side="right") - 1
    soft = np.exp(s + acc[last])
    grad_sorted = -(e - soft) / n_ev
    grad = np.empty_like(grad_sorted)
    grad[order] = grad_sorted
    return float(value), grad


def cox_batch_loss(scores, y):
    """Return ``(value, gradient)`` of the batch Cox loss, or
    ``(None, None)`` when the batch has no events (callers skip it)."""
    scores = np.asarray(scores, dtype=float)
    if scores.shape != y.duration.shape:
        raise ShapeError("scores and outcomes differ in length")
    return _cox_loss(scores, y.duration, y.event)


def loss_and_grads(model, X, y, bn="running"):
    """Full-batch loss and parameter gradients without dropout (used by the
    learning-rate estimator and gradient checks)."""
    s, cache = _forward(model, X, bn=bn)
    value, g = _cox_loss(s, y.duration, y.event)
    if value is None:
        raise SchemaError("no events")
    return value, _backward(model, cache, g)


# --------------------------------------------------------------------------
# Optimizers


class _Optimizer:
    def __init__(self, spec, params):
        self.spec = spec
        self.state = [np.zeros_like(p) for p in params]
        self.state2 = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, model, grads, lr):
        spec = self.spec
        self.t += 1
        params = model.param_list()
        decay = _decay_mask(model)
        for i, (p, g) in enumerate(zip(params, grads)):
            if spec.optimizer == "adam":
                m, v = self.state[i], self.state2[i]
                m *= spec.beta1
                m += (1 - spec.beta1) * g
                v *= spec.beta2
                v += (1 - spec.beta2) * g * g
                mhat = m / (1 - spec.beta1**self.t)
                vhat = v / (1 - spec.beta2**self.t)
                upd = mhat / (np.sqrt(vhat) + 1e-8)
            else:
                buf = self.state[i]
                buf *= spec.momentum
                buf += g
                upd = buf
            if decay[i] and spec.weight_decay > 0:
                p -= lr * spec.weight_decay * p
            p -= lr * upd


def _decay_mask(model):
    return [name == "W" for layer in model.layers for name, _ in layer.params()]


# --------------------------------------------------------------------------
# Training


def _arrays(X, y):
    Xv = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
    if Xv.ndim != 2 or Xv.shape[0] != len(y):
        raise ShapeError(f"X has shape {Xv.shape} for {len(y)} outcomes")
    return Xv


def _run_epoch(model, opt, Xv, y, lr, rng, after_step=None):
    n = Xv.shape[0]
    bs = min(model.spec.batch_size, n)
    batches = np.array_split(rng.permutation(n), math.ceil(n / bs))
    losses = []
    skipped = 0
    for idx in batches:
        ev = y.event[idx]
        if not ev.any():
            skipped += 1
            continue
        s, cache = _forward(model, Xv[idx], bn="batch", dropout_rng=rng, update_stats=True)
        value, g = _cox_loss(s, y.duration[idx], ev)
        if not math.isfinite(value) or not np.all(np.isfinite(g)):
            return None, skipped
        grads = _backward(model, cache, g)
        if not all(np.all(np.isfinite(a)) for a in grads):
            return None, skipped
        opt.step(model, grads, lr)
        losses.append(value)
        if after_step is not None:
            after_step()
    if skipped:
        log.debug("skipped %d batches without events", skipped)
    return (float(np.mean(losses)) if losses else math.nan), skipped


def train(X_train, y_train, X_val, y_val, spec, seed=0):
    """Minibatch training with early stopping on validation concordance.

    Returns the model restored to its best-validation epoch.  Raises
    ``DivergenceError`` if the loss or gradients become non-finite.
    """
    Xt = _arrays(X_train, y_train)
    Xv = _arrays(X_val, y_val)
    if Xt.shape[1] != Xv.shape[1]:
        raise ShapeError("train and validation feature counts differ")
    rng = np.random.default_rng(seed)
    model = init_model(spec, Xt.shape[1], rng)
    if isinstance(X_train, FeatureMatrix):
        model.column_names = X_train.column_names
        model.scaling = dict(X_train.scaling)
    opt = _Optimizer(spec, model.param_list())
    best_c, best_layers, best_epoch, since = -math.inf, copy.deepcopy(model.layers), 0, 0
    for epoch in range(1, spec.max_epochs + 1):
        loss, _ = _run_epoch(model, opt, Xt, y_train, spec.learning_rate, rng)
        if loss is None:
            model.layers = best_layers
            raise DivergenceError(f"loss diverged in epoch {epoch}", last_finite_epoch=epoch - 1)
        val_scores, _ = _forward(model, Xv, bn="running")
        if not np.all(np.isfinite(val_scores)):
            raise DivergenceError(f"non-finite scores in epoch {epoch}", last_finite_epoch=epoch - 1)
        val_c = concordance(val_scores, y_val).c_index
        model.training_log.append({"epoch": epoch, "train_loss": loss, "val_c": val_c})
        if val_c > best_c:
            best_c, best_layers, best_epoch, since = val_c, copy.deepcopy(model.layers), epoch, 0
        else:
            since += 1
            if since >= spec.early_stop_patience:
                break
    model.layers = best_layers
    model.best_epoch = best_epoch
    return model


def train_fixed_epochs(X, y, spec, epochs, seed=0):
    """Train for exactly ``epochs`` epochs with no validation set (used to
    refit on train + validation once the epoch count is known)."""
    Xt = _arrays(X, y)
    rng = np.random.default_rng(seed)
    model = init_model(spec, Xt.shape[1], rng)
    if isinstance(X, FeatureMatrix):
        model.column_names = X.column_names
        model.scaling = dict(X.scaling)
    opt = _Optimizer(spec, model.param_list())
    for epoch in range(1, epochs + 1):
        loss, _ = _run_epoch(model, opt, Xt, y, spec.learning_rate, rng)
        if loss is None:
            raise DivergenceError(f"loss diverged in epoch {epoch}", last_finite_epoch=epoch - 1)
        model.training_log.append({"epoch": epoch, "train_loss": loss, "val_c": None})
    model.best_epoch = epochs
    return model


def lr_range_estimate(X, y, spec, lr_grid, seed=0, smoothing=0.9, eval_size=2048):
    """Pick a learning rate from a geometric grid.

    Every candidate trains one epoch from the same initialization and batch
    order.  After each step the full-batch loss on a fixed subsample (no
    dropout, batch statistics) is recorded and smoothed with a
    bias-corrected moving average.  The largest rate whose smoothed curve
    never rises and ends below its start wins.
    """
    grid = sorted(float(v) for v in lr_grid)
    if not grid or any(v <= 0 for v in grid):
        raise ConfigError("lr_grid must be nonempty and positive")
    if len(grid) > 2:
        ratios = np.diff(np.log(grid))
        if not np.allclose(ratios, ratios[0], rtol=1e-6, atol=1e-9):
            raise ConfigError("lr_grid must be geometric")
    Xv = _arrays(X, y)
    pick = np.random.default_rng([seed, 1]).permutation(Xv.shape[0])[:eval_size]
    Xe, ye = Xv[pick], y.subset(pick)
    if ye.n_events == 0:
        raise LREstimationError("evaluation subsample has no events")

    chosen = None
    for lr in grid:
        model = init_model(spec, Xv.shape[1], np.random.default_rng(seed))
        opt = _Optimizer(spec, model.param_list())
        curve = [loss_and_grads(model, Xe, ye, bn="batch")[0]]

        def record():
            curve.append(loss_and_grads(model, Xe, ye, bn="batch")[0])

        with np.errstate(all="ignore"):
            try:
                loss, _ = _run_epoch(model, opt, Xv, y, lr, np.random.default_rng([seed, 2]), after_step=record)
            except (FloatingPointError, SchemaError):
                loss = None
        raw = np.asarray(curve)
        if loss is None or not np.all(np.isfinite(raw)):
            log.debug("lr %g diverged", lr)
            continue
        sm = _ema(raw, smoothing)
        if np.all(np.diff(sm) <= 1e-12 * np.abs(sm[:-1])) and sm[-1] < sm[0]:
            chosen = lr
    if chosen is None:
        raise LREstimationError("no learning rate decreased the loss; try a smaller grid floor")
    return chosen


def _ema(x, beta):
    out = np.empty_like(x)
    avg = 0.0
    for i, v in enumerate(x):
        avg = beta * avg + (1 - beta) * v
        out[i] = avg / (1 - beta ** (i + 1))
    return out


def attach_baseline(model, X_train, y_train):
    """Breslow baseline cumulative hazard at the network's training scores,
    for turning scores into horizon risks."""
    scores = predict_scores(model, X_train)
    return _baseline(scores, y_train)


__all__ = [
    "MlpSpec",
    "MlpSurvModel",
    "StepFunction",
    "attach_baseline",
    "cox_batch_loss",
    "forward",
    "init_model",
    "loss_and_grads",
    "lr_range_estimate",
    "predict_scores",
    "train",
    "train_fixed_epochs",
]
