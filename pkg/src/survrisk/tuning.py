"""Hyperparameter search for the neural Cox model.

Trials are proposed by a Tree-structured Parzen Estimator and scored by
event-stratified k-fold cross-validated concordance.  Trial ``t`` draws its
randomness from ``default_rng([seed, t])`` so a search can be stopped,
persisted as JSON lines and resumed with identical results.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import special, stats

from .cohort import FeatureMatrix, SurvivalOutcome
from .errors import ConfigError, FoldError, ModelError, SearchError
from .metrics import c_index
from .neural import MlpSpec, predict_scores, train

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# Search space


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float


@dataclass(frozen=True)
class LogUniform:
    lo: float
    hi: float


@dataclass(frozen=True)
class IntRange:
    lo: int
    hi: int


@dataclass(frozen=True)
class Categorical:
    choices: tuple


NUMERIC = (Uniform, LogUniform, IntRange)


@dataclass
class SearchSpace:
    """Sampled hyperparameters plus fixed ones.

    Parameter names are ``MlpSpec`` fields, except ``n_layers`` and
    ``width`` which together form ``hidden_layers``.
    """

    params: dict
    fixed: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.params:
            raise ConfigError("search space is empty")
        for name, dist in self.params.items():
            if isinstance(dist, NUMERIC):
                if not (math.isfinite(dist.lo) and math.isfinite(dist.hi) and dist.lo < dist.hi):
                    raise ConfigError(f"{name}: bounds must be finite with lo < hi")
                if isinstance(dist, LogUniform) and dist.lo <= 0:
                    raise ConfigError(f"{name}: log-uniform bounds must be positive")
            elif isinstance(dist, Categorical):
                if not dist.choices:
                    raise ConfigError(f"{name}: no choices")
            else:
                raise ConfigError(f"{name}: unknown distribution {dist!r}")

    def contains(self, params):
        for name, dist in self.params.items():
            v = params[name]
            if isinstance(dist, Categorical):
                if v not in dist.choices:
                    return False
            elif not dist.lo <= v <= dist.hi:
                return False
            elif isinstance(dist, IntRange) and v != int(v):
                return False
        return True

    def to_json(self):
        out = {}
        for name, dist in self.params.items():
            kind = {Uniform: "uniform", LogUniform: "log_uniform", IntRange: "integer", Categorical: "categorical"}[
                type(dist)
            ]
            out[name] = {"type": kind, "choices": list(dist.choices)} if kind == "categorical" else {
                "type": kind,
                "lo": dist.lo,
                "hi": dist.hi,
            }
        return {"params": out, "fixed": dict(self.fixed)}

    @classmethod
    def from_json(cls, doc):
        params = {}
        for name, d in doc["params"].items():
            t = d["type"]
            if t == "categorical":
                params[name] = Categorical(tuple(d["choices"]))
            elif t == "uniform":
                params[name] = Uniform(float(d["lo"]), float(d["hi"]))
            elif t == "log_uniform":
                params[name] = LogUniform(float(d["lo"]), float(d["hi"]))
            elif t == "integer":
                params[name] = IntRange(int(d["lo"]), int(d["hi"]))
            else:
                raise ConfigError(f"{name}: unknown type {t!r}")
        return cls(params, dict(doc.get("fixed", {})))


def default_space():
    return SearchSpace(
        params={
            "n_layers": IntRange(0, 3),
            "width": IntRange(4, 64),
            "activation": Categorical(("relu", "leaky_relu", "selu")),
            "dropout_rate": Uniform(0.0, 0.5),
            "batch_norm": Categorical((False, True)),
            "weight_decay": LogUniform(1e-6, 1e-2),
            "optimizer": Categorical(("sgd_momentum", "adam")),
            "learning_rate": LogUniform(1e-4, 1e-1),
            "batch_size": Categorical((256, 512, 1024)),
        },
        fixed={"max_epochs": 50, "early_stop_patience": 5},
    )


def spec_from_params(params, fixed=None):
    p = dict(fixed or {})
    p.update(params)
    n_layers = int(p.pop("n_layers", 1))
    width = int(p.pop("width", 32))
    if "hidden_layers" not in p:
        p["hidden_layers"] = (width,) * n_layers
    for key in ("batch_size", "max_epochs", "early_stop_patience"):
        if key in p:
            p[key] = int(p[key])
    return MlpSpec(**p)


# --------------------------------------------------------------------------
# Trial records


@dataclass
class TrialRecord:
    trial_id: int
    params: dict
    spec: dict
    fold_c: list
    mean_c: float | None
    status: str
    error: str = ""

    def to_json(self):
        return {
            "trial_id": self.trial_id,
            "params": _jsonable(self.params),
            "spec": self.spec,
            "fold_c": self.fold_c,
            "mean_c": self.mean_c,
            "status": self.status,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, doc):
        return cls(**doc)


def _jsonable(params):
    out = {}
    for k, v in params.items():
        if isinstance(v, (np.integer,)):
            v = int(v)
        elif isinstance(v, (np.floating,)):
            v = float(v)
        elif isinstance(v, np.bool_):
            v = bool(v)
        out[k] = v
    return out


# --------------------------------------------------------------------------
# TPE


def _internal_bounds(dist):
    if isinstance(dist, LogUniform):
        return math.log(dist.lo), math.log(dist.hi)
    if isinstance(dist, IntRange):
        return dist.lo - 0.5, dist.hi + 0.5
    return float(dist.lo), float(dist.hi)


def _to_internal(dist, v):
    return math.log(v) if isinstance(dist, LogUniform) else float(v)


def _from_internal(dist, x):
    if isinstance(dist, LogUniform):
        return float(min(max(math.exp(x), dist.lo), dist.hi))
    if isinstance(dist, IntRange):
        return int(min(max(round(x), dist.lo), dist.hi))
    return float(min(max(x, dist.lo), dist.hi))


def _sample_prior(space, rng):
    out = {}
    for name, dist in space.params.items():
        if isinstance(dist, Categorical):
            out[name] = dist.choices[int(rng.integers(len(dist.choices)))]
        else:
            lo, hi = _internal_bounds(dist)
            out[name] = _from_internal(dist, rng.uniform(lo, hi))
    return out


_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)


class _Parzen:
    """1-d truncated Gaussian mixture over observations plus a uniform prior
    component; bandwidth per point is the larger gap to its neighbours,
    clipped to [range / min(100, n + 1), range]."""

    def __init__(self, obs, lo, hi):
        self.lo, self.hi = lo, hi
        width = hi - lo
        mus = np.sort(np.asarray(obs, dtype=float))
        n = mus.size
        if n:
            padded = np.concatenate([[lo], mus, [hi]])
            sig = np.maximum(padded[1:-1] - padded[:-2], padded[2:] - padded[1:-1])
            sig = np.clip(sig, width / min(100.0, n + 1.0), width)
        else:
            sig = np.empty(0)
        self.mus, self.sigmas = mus, sig
        self.weights = np.full(n + 1, 1.0 / (n + 1))  # last component is the prior

    def sample(self, rng, size):
        comp = rng.choice(self.weights.size, size=size, p=self.weights)
        out = rng.uniform(self.lo, self.hi, size)
        k = comp < self.mus.size
        if k.any():
            mu, sd = self.mus[comp[k]], self.sigmas[comp[k]]
            a, b = (self.lo - mu) / sd, (self.hi - mu) / sd
            out[k] = stats.truncnorm.rvs(a, b, loc=mu, scale=sd, random_state=rng)
        return out

    def logpdf(self, x):
        x = np.asarray(x, dtype=float)[:, None]
        parts = [np.full((x.shape[0], 1), -math.log(self.hi - self.lo))]
        if self.mus.size:
            mu, sd = self.mus[None, :], self.sigmas[None, :]
            mass = special.ndtr((self.hi - mu) / sd) - special.ndtr((self.lo - mu) / sd)
            z = (x - mu) / sd
            parts.insert(0, -0.5 * z * z - np.log(sd * mass) - _HALF_LOG_2PI)
        comp = np.hstack(parts) + np.log(self.weights)[None, :]
        m = comp.max(axis=1, keepdims=True)
        return (m + np.log(np.exp(comp - m).sum(axis=1, keepdims=True)))[:, 0]


def _cat_probs(dist, obs):
    counts = np.ones(len(dist.choices))
    for v in obs:
        counts[dist.choices.index(v)] += 1
    return counts / counts.sum()


def split_history(history, gamma=0.25):
    """Completed trials split into (good, bad) at the gamma-quantile of
    mean concordance; ties broken by trial id."""
    ok = sorted((t for t in history if t.status == "ok"), key=lambda t: (-t.mean_c, t.trial_id))
    n_good = max(1, math.ceil(gamma * len(ok)))
    return ok[:n_good], ok[n_good:]


def suggest(history, space, gamma=0.25, n_candidates=24, seed=0, n_startup=10, trial_id=None):
    """Propose raw hyperparameters for trial ``trial_id`` (default: the next
    one).  Prior sampling until ``n_startup`` trials completed; afterwards
    the candidate maximizing l(x)/g(x) among ``n_candidates`` draws from
    l."""
    if not space.params:
        raise ConfigError("search space is empty")
    t = len(history) if trial_id is None else trial_id
    rng = np.random.default_rng([seed, t])
    ok = [h for h in history if h.status == "ok"]
    if len(ok) < n_startup:
        return _sample_prior(space, rng)
    good, bad = split_history(history, gamma)
    cands = [dict() for _ in range(n_candidates)]
    score = np.zeros(n_candidates)
    for name, dist in space.params.items():
        gv = [h.params[name] for h in good]
        bv = [h.params[name] for h in bad]
        if isinstance(dist, Categorical):
            pl, pg = _cat_probs(dist, gv), _cat_probs(dist, bv)
            idx = rng.choice(len(dist.choices), size=n_candidates, p=pl)
            score += np.log(pl[idx]) - np.log(pg[idx])
            for c, i in zip(cands, idx):
                c[name] = dist.choices[int(i)]
        else:
            lo, hi = _internal_bounds(dist)
            lpdf = _Parzen([_to_internal(dist, v) for v in gv], lo, hi)
            gpdf = _Parzen([_to_internal(dist, v) for v in bv], lo, hi)
            xs = lpdf.sample(rng, n_candidates)
            vals = [_from_internal(dist, x) for x in xs]
            # score the value actually returned (after rounding/clipping)
            xi = np.array([_to_internal(dist, v) for v in vals])
            score += lpdf.logpdf(xi) - gpdf.logpdf(xi)
            for c, v in zip(cands, vals):
                c[name] = v
    return cands[int(np.argmax(score))]


def random_suggest(history, space, seed=0, trial_id=None, **_):
    t = len(history) if trial_id is None else trial_id
    return _sample_prior(space, np.random.default_rng([seed, t]))


def tpe_sample(history, space, gamma=0.25, n_candidates=24, seed=0, n_startup=10):
    """TPE proposal converted to an ``MlpSpec``."""
    return spec_from_params(suggest(history, space, gamma, n_candidates, seed, n_startup), space.fixed)


# --------------------------------------------------------------------------
# Cross-validation


def stratified_folds(y, k, seed):
    """Fold label per subject: events then non-events, each shuffled, dealt
    round-robin so fold sizes and event counts differ by at most one."""
    n = len(y)
    if k < 2 or n < k:
        raise FoldError(f"need 2 <= k <= n, got k={k}, n={n}")
    ev = np.flatnonzero(y.event)
    ne = np.flatnonzero(~y.event)
    if ev.size < k or ne.size < k:
        raise FoldError(f"cannot place both event classes in all {k} folds ({ev.size} events, {ne.size} censored)")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(ev), rng.permutation(ne)])
    folds = np.empty(n, dtype=int)
    folds[order] = np.arange(n) % k
    return folds


def _inner_split(y, seed, fraction=0.2):
    """Stratified holdout inside the training folds for early stopping."""
    rng = np.random.default_rng(seed)
    val = []
    for cls in (True, False):
        idx = rng.permutation(np.flatnonzero(y.event == cls))
        val.append(idx[: max(1, int(round(fraction * idx.size)))])
    val = np.sort(np.concatenate(val))
    mask = np.zeros(len(y), dtype=bool)
    mask[val] = True
    return np.flatnonzero(~mask), val


def cross_validate(spec, X, y, k=3, seed=0, params=None, trial_id=0):
    """k-fold concordance of ``spec``; any failing fold marks the trial failed."""
    Xv = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
    folds = stratified_folds(y, k, seed)
    fold_c = []
    try:
        for f in range(k):
            tr = np.flatnonzero(folds != f)
            te = np.flatnonzero(folds == f)
            ytr = y.subset(tr)
            inner_tr, inner_val = _inner_split(ytr, [seed, f])
            model = train(
                Xv[tr][inner_tr], ytr.subset(inner_tr), Xv[tr][inner_val], ytr.subset(inner_val), spec, seed=[seed, f]
            )
            fold_c.append(float(c_index(predict_scores(model, Xv[te]), y.subset(te))))
    except (ModelError, FloatingPointError) as exc:
        log.info("trial %s failed: %s", trial_id, exc)
        return TrialRecord(trial_id, dict(params or {}), spec.to_json(), fold_c, None, "failed", str(exc))
    return TrialRecord(trial_id, dict(params or {}), spec.to_json(), fold_c, float(np.mean(fold_c)), "ok")


# --------------------------------------------------------------------------
# Search


def load_history(path):
    path = Path(path)
    if not path.exists():
        return []
    out = []
    for line in path.read_text().splitlines():
        if line.strip():
            out.append(TrialRecord.from_json(json.loads(line)))
    return out


def append_history(path, record):
    with open(path, "a") as fh:
        fh.write(json.dumps(record.to_json(), sort_keys=True) + "\n")


def best_trial(history):
    ok = [t for t in history if t.status == "ok"]
    if not ok:
        return None
    return max(ok, key=lambda t: (t.mean_c, -t.trial_id))


def search(space, budget, X, y, k=3, seed=0, history=None, history_path=None, sampler="tpe", **tpe_kwargs):
    """Run ``budget`` new trials, continuing ``history`` (or the JSON-lines
    file at ``history_path``).  Returns ``(best, all_trials)``.

    ``sampler="random"`` draws every trial from the prior with the same
    per-trial generators, which makes it a paired baseline for TPE.
    """
    if budget < 1:
        raise ConfigError("budget must be >= 1")
    if history is None:
        history = load_history(history_path) if history_path else []
    history = list(history)
    if sampler not in ("tpe", "random"):
        raise ConfigError(f"unknown sampler {sampler!r}")
    propose = suggest if sampler == "tpe" else random_suggest
    for _ in range(budget):
        t = len(history)
        params = propose(history, space, seed=seed, trial_id=t, **tpe_kwargs)
        try:
            spec = spec_from_params(params, space.fixed)
        except ConfigError as exc:
            rec = TrialRecord(t, params, {}, [], None, "failed", str(exc))
        else:
            rec = cross_validate(spec, X, y, k=k, seed=seed, params=params, trial_id=t)
        history.append(rec)
        if history_path:
            append_history(history_path, rec)
        log.info("trial %d: %s mean_c=%s", t, rec.status, rec.mean_c)
    best = best_trial(history)
    if best is None:
        raise SearchError("all trials failed", history)
    return best, history


__all__ = [
    "Categorical",
    "IntRange",
    "LogUniform",
    "SearchSpace",
    "SurvivalOutcome",
    "TrialRecord",
    "Uniform",
    "cross_validate",
    "default_space",
    "search",
    "spec_from_params",
    "stratified_folds",
    "suggest",
    "tpe_sample",
]
