"""Cox proportional-hazards model.

Negative log partial likelihood with Breslow or Efron ties, Newton-Raphson
with step halving, Wald inference, the Breslow baseline cumulative hazard
and horizon risk prediction.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .cohort import FeatureMatrix, apply_scaling
from .errors import (
    ConfigError,
    ExtrapolationError,
    InferenceError,
    NoEventsError,
    NumericError,
    SchemaError,
    SingularityError,
)

log = logging.getLogger(__name__)

TIES = ("breslow", "efron")
SEPARATION_BOUND = 50.0
FALLBACK_RIDGE = 1e-6
MONOTONE_STEP = 0.5
INFORMATION_FLOOR = 1e-10
Z975 = stats.norm.ppf(0.975)


class SeparationWarning(UserWarning):
    """Coefficients diverge while the likelihood keeps improving."""


@dataclass
class CoxFitConfig:
    ties: str = "efron"
    max_iterations: int = 100
    tolerance: float = 1e-7
    ridge: float = 0.0
    step_halving_max: int = 10

    def __post_init__(self):
        if self.ties not in TIES:
            raise ConfigError(f"ties must be one of {TIES}, got {self.ties!r}")
        if not self.tolerance > 0:
            raise ConfigError("tolerance must be positive")
        if self.ridge < 0:
            raise ConfigError("ridge must be >= 0")
        if self.max_iterations < 1 or self.step_halving_max < 0:
            raise ConfigError("iteration limits must be positive")


class _RiskSets:
    """Sort order and tie structure of one outcome vector, reused across
    Newton iterations.

    Rows are sorted by ascending duration.  ``starts[g]`` is the first sorted
    row of the g-th distinct event time, so the risk set of that time is the
    suffix ``sorted[starts[g]:]``.  Each event contributes one Efron term;
    ``term_group`` and ``term_frac`` (l/d within its tie group) describe them.
    """

    def __init__(self, y):
        if y.n_events == 0:
            raise NoEventsError("no events")
        self.order = np.argsort(y.duration, kind="stable")
        t = y.duration[self.order]
        e = y.event[self.order]
        self.n = t.size
        ev_times, counts = np.unique(t[e], return_counts=True)
        self.event_times = ev_times
        self.counts = counts
        self.starts = np.searchsorted(t, ev_times, side="left")
        # event rows (sorted positions) and the tie group they belong to
        self.event_rows = np.flatnonzero(e)
        self.event_group = np.searchsorted(ev_times, t[e])
        self.term_group = np.repeat(np.arange(ev_times.size), counts)
        within = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
        self.term_frac = within / np.repeat(counts, counts)
        # for each sorted row, number of distinct event times <= its time
        self.groups_upto = np.searchsorted(ev_times, t, side="right")


def _nll_parts(beta, Xs, rs, ties, need_hessian=True):
    eta = Xs @ beta
    m = eta.max()
    w = np.exp(eta - m)
    wx = w[:, None] * Xs
    # suffix sums over sorted rows
    S0 = np.cumsum(w[::-1])[::-1][rs.starts]
    S1 = np.cumsum(wx[::-1], axis=0)[::-1][rs.starts]
    G = rs.event_times.size
    D0 = np.bincount(rs.event_group, weights=w[rs.event_rows], minlength=G)
    D1 = np.zeros((G, Xs.shape[1]))
    np.add.at(D1, rs.event_group, wx[rs.event_rows])

    frac = rs.term_frac if ties == "efron" else np.zeros_like(rs.term_frac)
    g = rs.term_group
    den = S0[g] - frac * D0[g]
    if not np.all(den > 0):
        raise NumericError("risk-set denominator underflow")
    num = S1[g] - frac[:, None] * D1[g]
    Z = num / den[:, None]

    value = -(eta[rs.event_rows].sum() - m * rs.event_rows.size) + np.log(den).sum()
    grad = -Xs[rs.event_rows].sum(axis=0) + Z.sum(axis=0)
    if not need_hessian:
        return value, grad, None

    # sum_terms S2/den = X' diag(w * a) X with a_j = sum over terms at times <= t_j
    A = np.bincount(g, weights=1.0 / den, minlength=G)
    B = np.bincount(g, weights=frac / den, minlength=G)
    cumA = np.concatenate([[0.0], np.cumsum(A)])
    a = cumA[rs.groups_upto]
    coef = w * a
    coef[rs.event_rows] -= w[rs.event_rows] * B[rs.event_group]
    H = (Xs * coef[:, None]).T @ Xs - Z.T @ Z
    return value, grad, H


def neg_log_partial_likelihood(beta, X, y, ties="efron", ridge=0.0, _rs=None):
    """Return ``(value, gradient, hessian)`` of the negative log partial
    likelihood at ``beta``.

    ``X`` may be a ``FeatureMatrix`` or a plain array.  A ridge term
    ``0.5 * ridge * |beta|^2`` is added when ``ridge > 0``.
    """
    Xv = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if Xv.ndim != 2 or Xv.shape[0] != len(y) or Xv.shape[1] != beta.size:
        raise SchemaError(f"dimension mismatch: X {Xv.shape}, n={len(y)}, beta {beta.shape}")
    if ties not in TIES:
        raise ConfigError(f"unknown ties method {ties!r}")
    rs = _rs or _RiskSets(y)
    value, grad, H = _nll_parts(beta, Xv[rs.order], rs, ties)
    if ridge > 0:
        value += 0.5 * ridge * beta @ beta
        grad = grad + ridge * beta
        H = H + ridge * np.eye(beta.size)
    if not (np.isfinite(value) and np.all(np.isfinite(grad)) and np.all(np.isfinite(H))):
        raise NumericError("non-finite partial likelihood")
    return value, grad, H


# --------------------------------------------------------------------------
# Baseline hazard


@dataclass(frozen=True)
class StepFunction:
    """Right-continuous step function: ``value(t) = values[k]`` for the
    largest ``times[k] <= t`` and ``initial`` before the first step."""

    times: np.ndarray
    values: np.ndarray
    initial: float = 0.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self.times, t, side="right")
        out = np.concatenate([[self.initial], self.values])[k]
        return out if out.ndim else float(out)


def _baseline(eta, y):
    order = np.argsort(y.duration, kind="stable")
    t = y.duration[order]
    e = y.event[order]
    w = np.exp(eta[order] - eta.max())
    ev_times, counts = np.unique(t[e], return_counts=True)
    starts = np.searchsorted(t, ev_times, side="left")
    S0 = np.cumsum(w[::-1])[::-1][starts] * np.exp(eta.max())
    return StepFunction(ev_times, np.cumsum(counts / S0))


def baseline_cumhaz(beta, X, y):
    """Breslow estimator of H0(t): increment ``d_i / sum_{risk set} exp(x.beta)``
    at each distinct event time."""
    Xv = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
    if y.n_events == 0:
        raise NoEventsError("no events")
    return _baseline(Xv @ np.asarray(beta, dtype=float), y)


# --------------------------------------------------------------------------
# Fitting


@dataclass
class CoxModel:
    beta: np.ndarray
    covariance: np.ndarray
    baseline: StepFunction
    column_names: tuple[str, ...]
    scaling: dict
    converged: bool
    final_nll: float
    n_iterations: int = 0
    max_time: float = np.inf
    ridge_fallback: bool = False
    config: CoxFitConfig = field(default_factory=CoxFitConfig)

    def linear_predictor(self, X):
        Xv = X.values if isinstance(X, FeatureMatrix) else np.asarray(X, dtype=float)
        if Xv.shape[-1] != self.beta.size:
            raise SchemaError(f"expected {self.beta.size} features, got {Xv.shape[-1]}")
        return Xv @ self.beta

    def to_json(self):
        return {
            "kind": "cox",
            "beta": self.beta.tolist(),
            "covariance": self.covariance.tolist(),
            "baseline_cumhaz": [[float(t), float(v)] for t, v in zip(self.baseline.times, self.baseline.values)],
            "column_names": list(self.column_names),
            "scaling": {c: list(self.scaling[c]) for c in self.column_names},
            "converged": bool(self.converged),
            "final_nll": float(self.final_nll),
            "n_iterations": int(self.n_iterations),
            "max_time": float(self.max_time),
            "ridge_fallback": bool(self.ridge_fallback),
            "config": vars(self.config).copy(),
        }

    @classmethod
    def from_json(cls, doc):
        if doc.get("kind", "cox") != "cox":
            raise SchemaError(f"not a Cox model artifact (kind={doc.get('kind')!r})")
        try:
            bh = np.asarray(doc["baseline_cumhaz"], dtype=float).reshape(-1, 2)
            return cls(
                beta=np.asarray(doc["beta"], dtype=float),
                covariance=np.asarray(doc["covariance"], dtype=float).reshape(len(doc["beta"]), -1),
                baseline=StepFunction(bh[:, 0], bh[:, 1]),
                column_names=tuple(doc["column_names"]),
                scaling={c: tuple(v) for c, v in doc["scaling"].items()},
                converged=bool(doc["converged"]),
                final_nll=float(doc["final_nll"]),
                n_iterations=int(doc.get("n_iterations", 0)),
                max_time=float(doc["max_time"]),
                ridge_fallback=bool(doc.get("ridge_fallback", False)),
                config=CoxFitConfig(**doc.get("config", {})),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise SchemaError(f"malformed Cox model artifact: {exc}") from exc


def _newton(Xs, rs, cfg, ridge, d):
    def evaluate(b):
        v, g, H = _nll_parts(b, Xs, rs, cfg.ties)
        if ridge > 0:
            v += 0.5 * ridge * b @ b
            g = g + ridge * b
            H = H + ridge * np.eye(d)
        return v, g, H

    beta = np.zeros(d)
    value, grad, H = evaluate(beta)
    h_scale = _top_eigenvalue(H)
    converged = False
    it = 0
    for it in range(1, cfg.max_iterations + 1):
        try:
            c, lower = _cho(H)
        except np.linalg.LinAlgError:
            if it > 1 and _information_gone(H, h_scale):
                _warn_separation("the information matrix vanished")
                return beta, value, H, False, it
            raise SingularityError("Hessian is singular") from None
        step = -_cho_solve(c, lower, grad)
        t = 1.0
        for _ in range(cfg.step_halving_max + 1):
            cand = beta + t * step
            try:
                v_new, g_new, H_new = evaluate(cand)
            except NumericError:
                v_new = np.inf
            if np.isfinite(v_new) and v_new <= value + 1e-12 * abs(value):
                break
            t *= 0.5
        else:
            # no descent even after halving: at the numerical minimum,
            # unless the objective is merely flat at float precision
            if _diverging(H, grad, Xs):
                if not _information_gone(H, h_scale):
                    raise SingularityError("likelihood flat along a degenerate direction")
                _warn_separation("the likelihood flattened out")
                return beta, value, H, False, it
            converged = True
            break
        delta = value - v_new
        beta, value, grad, H = cand, v_new, g_new, H_new
        if np.max(np.abs(beta)) > SEPARATION_BOUND and delta >= 0:
            _warn_separation(f"|beta| exceeded {SEPARATION_BOUND}")
            return beta, value, H, False, it
        if abs(delta) < cfg.tolerance and not _diverging(H, grad, Xs):
            converged = True
            break
    return beta, value, H, converged, it


def _warn_separation(what):
    warnings.warn(
        f"{what} while the likelihood kept decreasing; likely monotone likelihood (separation)",
        SeparationWarning,
        stacklevel=4,
    )


def _top_eigenvalue(H):
    return float(np.linalg.eigvalsh(0.5 * (H + H.T))[-1]) if np.all(np.isfinite(H)) else np.inf


def _information_gone(H, h_scale):
    """Every direction lost its curvature (the whole model separates), as
    opposed to one degenerate direction, which the ridge fallback handles."""
    return _top_eigenvalue(H) <= INFORMATION_FLOOR * h_scale


def _diverging(H, grad, Xs):
    """Monotone likelihood: the objective is flat but Newton still wants to
    move the linear predictor by order one, because gradient and curvature
    vanish together."""
    try:
        step = _cho_solve(*_cho(H), grad)
    except np.linalg.LinAlgError:
        return True  # curvature gone entirely
    return bool(np.ptp(Xs @ step) > MONOTONE_STEP)


def _cho(H):
    from scipy.linalg import cho_factor

    if not np.all(np.isfinite(H)):
        raise np.linalg.LinAlgError("non-finite Hessian")
    w = np.linalg.eigvalsh(H)
    if w[0] <= 1e-10 * abs(w[-1]):
        raise np.linalg.LinAlgError("Hessian not positive definite")
    return cho_factor(H)


def _cho_solve(c, lower, b):
    from scipy.linalg import cho_solve

    return cho_solve((c, lower), b)


def fit(X, y, cfg=None):
    """Fit a Cox model by Newton-Raphson from ``beta = 0``.

    If the Hessian is singular the fit is retried once with
    ``ridge = 1e-6`` (flagged as ``ridge_fallback``).  The covariance is the
    inverse of the final (penalized) Hessian.
    """
    cfg = cfg or CoxFitConfig()
    n, d = X.shape
    if n <= d:
        raise SchemaError(f"need n > d, got n={n}, d={d}")
    if len(y) != n:
        raise SchemaError("X and y disagree on the number of subjects")
    sd = X.values.std(axis=0)
    if np.any(sd == 0):
        bad = [c for c, s in zip(X.column_names, sd) if s == 0]
        raise SchemaError(f"zero-variance columns: {bad}")
    rs = _RiskSets(y)
    Xs = X.values[rs.order]

    ridge = cfg.ridge
    fallback = False
    try:
        beta, value, H, converged, it = _newton(Xs, rs, cfg, ridge, d)
        cov = _invert(H, converged)
    except SingularityError:
        if ridge >= FALLBACK_RIDGE:
            raise
        log.info("singular Hessian, refitting with ridge=%g", FALLBACK_RIDGE)
        ridge, fallback = FALLBACK_RIDGE, True
        beta, value, H, converged, it = _newton(Xs, rs, cfg, ridge, d)
        cov = _invert(H, converged)

    eta = X.values @ beta
    return CoxModel(
        beta=beta,
        covariance=cov,
        baseline=_baseline(eta, y),
        column_names=X.column_names,
        scaling=dict(X.scaling),
        converged=converged,
        final_nll=float(value),
        n_iterations=it,
        max_time=float(y.duration.max()),
        ridge_fallback=fallback,
        config=cfg,
    )


def _invert(H, converged=True):
    try:
        c = _cho(H)
    except np.linalg.LinAlgError:
        if not converged:
            # diverging fit: keep a usable (if meaningless) covariance
            return np.linalg.pinv(0.5 * (H + H.T), hermitian=True)
        raise SingularityError("final Hessian is singular") from None
    cov = _cho_solve(*c, np.eye(H.shape[0]))
    return 0.5 * (cov + cov.T)


# --------------------------------------------------------------------------
# Inference and prediction


@dataclass(frozen=True)
class WaldStats:
    column_names: tuple[str, ...]
    beta: np.ndarray
    standard_error: np.ndarray
    z: np.ndarray
    p_value: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray

    def to_rows(self):
        return [
            {
                "feature": c,
                "log_hr": float(b),
                "se": float(s),
                "z": float(z),
                "p": float(p),
                "ci_low": float(lo),
                "ci_high": float(hi),
            }
            for c, b, s, z, p, lo, hi in zip(
                self.column_names, self.beta, self.standard_error, self.z, self.p_value, self.ci_low, self.ci_high
            )
        ]


def wald_stats(model, alpha=0.05, require_converged=True):
    """Two-sided Wald tests of ``beta_j = 0`` with ``1 - alpha`` intervals."""
    if require_converged and not model.converged:
        raise InferenceError("model did not converge; refusing Wald inference")
    se = np.sqrt(np.clip(np.diag(model.covariance), 0.0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(se > 0, model.beta / se, 0.0)
    p = np.clip(2.0 * stats.norm.sf(np.abs(z)), 0.0, 1.0)
    q = stats.norm.ppf(1.0 - alpha / 2.0)
    return WaldStats(
        tuple(model.column_names), model.beta.copy(), se, z, p, model.beta - q * se, model.beta + q * se
    )


def _check_horizon(model, horizon):
    if horizon < 0:
        raise ExtrapolationError("horizon must be >= 0")
    if horizon > model.max_time:
        raise ExtrapolationError(f"horizon {horizon} beyond last observed time {model.max_time:.4f}")


def risk_from_scores(cumhaz, scores):
    return 1.0 - np.exp(-cumhaz * np.exp(scores))


def predict_risk(model, x, horizon=10.0, scaled=False):
    """Risk of an event by ``horizon`` years: ``1 - exp(-H0(h) exp(x.beta))``.

    ``x`` is one raw feature vector (or an ``n x d`` array) in the order of
    ``model.column_names``; pass ``scaled=True`` for already standardized
    rows.
    """
    _check_horizon(model, horizon)
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != len(model.column_names):
        raise SchemaError(f"expected {len(model.column_names)} features, got {x.shape[-1]}")
    xs = x if scaled else apply_scaling(x, model.column_names, model.scaling)
    out = risk_from_scores(model.baseline(horizon), xs @ model.beta)
    return out if np.ndim(out) else float(out)
