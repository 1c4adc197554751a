"""Univariate screening and backward elimination for Cox models.

Backward elimination removes the features with the largest Wald p-values
in batches, accepting a removal only when validation concordance does not
fall by more than ``drop_tolerance``.  Rejected batches are retried at half
the size; at size one each remaining feature gets an individual test and is
kept permanently if its removal is rejected.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from .coxph import CoxFitConfig, SeparationWarning, fit, wald_stats
from .errors import EmptyScreenError, ModelError
from .metrics import c_index

log = logging.getLogger(__name__)


@dataclass
class ScreenResult:
    kept: list
    dropped: list  # (feature, p_value); p is NaN when the fit failed


def _quiet_fit(X, y, cfg):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SeparationWarning)
        return fit(X, y, cfg)


def univariate_screen(X, y, alpha=0.1, cfg=None):
    """Fit one single-covariate Cox model per feature and drop those whose
    Wald p-value exceeds ``alpha``.  A feature whose fit fails or diverges
    is dropped with p = NaN."""
    cfg = cfg or CoxFitConfig()
    kept, dropped = [], []
    for name in X.column_names:
        try:
            m = _quiet_fit(X.select([name]), y, cfg)
            if not m.converged:
                raise ModelError("did not converge")
            p = float(wald_stats(m).p_value[0])
        except ModelError as exc:
            log.info("univariate fit for %s failed (%s); dropping", name, exc)
            dropped.append((name, math.nan))
            continue
        if p > alpha:
            dropped.append((name, p))
        else:
            kept.append(name)
    if not kept:
        raise EmptyScreenError(f"no feature has univariate p <= {alpha}")
    return ScreenResult(kept, dropped)


@dataclass
class EliminationRound:
    removed: list
    accepted: bool
    c_before: float
    c_after: float | None
    batch_size: int
    note: str = ""


@dataclass
class EliminationTrace:
    initial_features: list
    initial_c: float
    drop_tolerance: float
    rounds: list = field(default_factory=list)
    surviving_features: list = field(default_factory=list)
    final_c: float = math.nan
    batch_sizes: list = field(default_factory=list)

    def to_json(self):
        d = asdict(self)
        d["drop_tolerance"] = _finite_or_str(self.drop_tolerance)
        return d

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        doc["drop_tolerance"] = float(doc["drop_tolerance"])
        doc["rounds"] = [EliminationRound(**r) for r in doc["rounds"]]
        return cls(**doc)

    def render(self):
        """Plain-text table of the rounds."""
        lines = [f"{'#':>3}  {'k':>3}  {'accepted':>8}  {'c_before':>9}  {'c_after':>9}  removed"]
        for i, r in enumerate(self.rounds, 1):
            after = "   failed" if r.c_after is None else f"{r.c_after:9.5f}"
            lines.append(
                f"{i:>3}  {r.batch_size:>3}  {str(r.accepted):>8}  {r.c_before:9.5f}  {after}  {', '.join(r.removed)}"
            )
        lines.append(f"surviving ({len(self.surviving_features)}): {', '.join(self.surviving_features)}")
        return "\n".join(lines)


def _finite_or_str(v):
    return v if math.isfinite(v) else str(v)


def batch_schedule(d):
    """Geometric batch sizes: ceil(d/8), halved down to 1."""
    k = max(1, math.ceil(d / 8))
    sizes = [k]
    while k > 1:
        k = max(1, k // 2)
        sizes.append(k)
    return sizes


def _ranked(model):
    """Feature names ordered by descending Wald p-value, ties by name."""
    ws = wald_stats(model, require_converged=False)
    return [c for _, c in sorted(zip(-ws.p_value, model.column_names), key=lambda t: (t[0], t[1]))]


def _val_c(model, X_val, y_val):
    return c_index(model.linear_predictor(X_val.select(model.column_names)), y_val)


def backward_eliminate(X_train, y_train, X_val, y_val, drop_tolerance=0.001, cfg=None, schedule=None):
    """Iterative backward elimination driven by validation concordance.

    Each round refits on the current features, proposes dropping the ``k``
    least significant ones (never the last feature, never one already
    declared permanent) and accepts if ``c_before - c_after <=
    drop_tolerance``.  A rejected or non-convergent batch halves ``k``; at
    ``k = 1`` a rejected feature becomes permanent.  Ends when every
    remaining feature is permanent or only one is left.
    """
    cfg = cfg or CoxFitConfig()
    current = list(X_train.column_names)
    sizes = list(schedule) if schedule is not None else batch_schedule(len(current))
    if not sizes or sizes[-1] != 1 or any(a < b for a, b in zip(sizes, sizes[1:])):
        raise ValueError("schedule must be non-increasing and end at 1")

    model = _quiet_fit(X_train, y_train, cfg)
    if not model.converged:
        raise ModelError("initial fit did not converge")
    c_cur = _val_c(model, X_val, y_val)
    trace = EliminationTrace(list(current), c_cur, drop_tolerance, batch_sizes=sizes)
    permanent = set()
    level = 0

    while len(current) > 1:
        k = sizes[level]
        candidates = [f for f in _ranked(model) if f not in permanent]
        if not candidates:
            break
        k = min(k, len(candidates), len(current) - 1)
        batch = candidates[:k]
        remaining = [f for f in current if f not in batch]
        note = ""
        try:
            new = _quiet_fit(X_train.select(remaining), y_train, cfg)
            if not new.converged:
                raise ModelError("refit did not converge")
            c_new = _val_c(new, X_val, y_val)
            accepted = c_cur - c_new <= drop_tolerance
        except ModelError as exc:
            note = f"refit failed: {exc}"
            log.info("rejecting batch %s: %s", batch, exc)
            c_new, accepted = None, False
        trace.rounds.append(EliminationRound(batch, accepted, c_cur, c_new, k, note))
        if accepted:
            current, model, c_cur = remaining, new, c_new
        elif k > 1:
            while sizes[level] >= k:
                level += 1
        else:
            permanent.update(batch)

    trace.surviving_features = current
    trace.final_c = c_cur
    return trace


def replay(trace, X_train, y_train, X_val, y_val, cfg=None):
    """Refit on the surviving features and return validation concordance."""
    model = _quiet_fit(X_train.select(trace.surviving_features), y_train, cfg or CoxFitConfig())
    return _val_c(model, X_val, y_val)
