"""Evaluation metrics for right-censored risk scores.

Harrell's concordance, percentile bootstrap intervals, the Kaplan-Meier
estimator and horizon calibration with the Integrated Calibration Index.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .coxph import StepFunction
from .errors import BootstrapError, UndefinedConcordanceError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ConcordanceResult:
    c_index: float
    concordant: int
    discordant: int
    tied_risk: int
    comparable_pairs: int


def _cut_points(t_sorted, target):
    """Block boundaries for time-sorted rows: roughly every ``target`` rows
    but never inside a run of equal times."""
    n = t_sorted.size
    change = np.flatnonzero(np.diff(t_sorted) != 0) + 1
    cuts = [0]
    for c in change:
        if c - cuts[-1] >= target:
            cuts.append(int(c))
    cuts.append(n)
    return cuts


def concordance(scores, y):
    """Harrell's C for scores where higher means riskier.

    A pair (i, j) is comparable when ``t_i < t_j`` and subject i had the
    event; it is concordant if ``s_i > s_j`` and half-counted when the scores
    tie.  Pairs with equal times are not comparable.

    Rows are swept in blocks from the latest time backwards, keeping the
    scores of all later subjects in a sorted array; per-block counts come
    from ``searchsorted``, within-block pairs from a small dense comparison.
    """
    s = np.asarray(scores, dtype=float)
    if s.shape != y.duration.shape:
        raise ValueError("scores and outcomes differ in length")
    if len(y) < 2 or y.n_events == 0:
        raise UndefinedConcordanceError("need n >= 2 and at least one event")
    order = np.argsort(y.duration, kind="stable")
    t = y.duration[order]
    e = y.event[order]
    s = s[order]
    n = t.size
    block = max(32, int(math.sqrt(n)))
    cuts = _cut_points(t, block)

    conc = disc = tied = 0
    later = np.empty(0)
    for b in range(len(cuts) - 2, -1, -1):
        lo, hi = cuts[b], cuts[b + 1]
        tb, eb, sb = t[lo:hi], e[lo:hi], s[lo:hi]
        ev = eb.nonzero()[0]
        if ev.size:
            se = sb[ev]
            if later.size:
                below = np.searchsorted(later, se, side="left")
                upto = np.searchsorted(later, se, side="right")
                conc += int(below.sum())
                tied += int((upto - below).sum())
                disc += int((later.size - upto).sum())
            # within-block pairs with strictly later time
            later_mask = tb[None, :] > tb[ev][:, None]
            gt = (se[:, None] > sb[None, :]) & later_mask
            eq = (se[:, None] == sb[None, :]) & later_mask
            lt = (se[:, None] < sb[None, :]) & later_mask
            conc += int(gt.sum())
            tied += int(eq.sum())
            disc += int(lt.sum())
        later = np.sort(np.concatenate([later, sb]), kind="stable")
    total = conc + disc + tied
    if total == 0:
        raise UndefinedConcordanceError("no comparable pairs")
    return ConcordanceResult((conc + 0.5 * tied) / total, conc, disc, tied, total)


def c_index(scores, y):
    return concordance(scores, y).c_index


# --------------------------------------------------------------------------
# Bootstrap


@dataclass(frozen=True)
class BootstrapCI:
    point: float
    low: float
    high: float
    rounds: int
    level: float = 0.95
    samples: tuple = field(default=(), repr=False)

    def to_json(self):
        d = asdict(self)
        d.pop("samples")
        return d


_DEGENERATE = (UndefinedConcordanceError, ZeroDivisionError, FloatingPointError)


def _one_round(metric, n, seed, r, max_retries):
    rng = np.random.default_rng([seed, r])
    for _ in range(max_retries):
        idx = rng.integers(0, n, size=n)
        try:
            v = float(metric(idx))
        except _DEGENERATE:
            continue
        if math.isfinite(v):
            return v
    raise BootstrapError(f"round {r}: {max_retries} consecutive degenerate resamples")


def bootstrap_ci(metric, n, rounds=50, level=0.95, seed=0, workers=1, max_retries=10):
    """Percentile bootstrap interval of ``metric(indices)``.

    ``metric`` receives an index array into the data (the full sample for the
    point estimate, resampled indices for each round).  Round ``r`` draws
    from its own generator seeded with ``(seed, r)``, so results do not
    depend on ``workers``.  Bounds interpolate linearly between order
    statistics.
    """
    if rounds < 1:
        raise BootstrapError("rounds must be >= 1")
    if not 0 < level < 1:
        raise BootstrapError("level must lie in (0, 1)")
    point = float(metric(np.arange(n)))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            vals = list(pool.map(lambda r: _one_round(metric, n, seed, r, max_retries), range(rounds)))
    else:
        vals = [_one_round(metric, n, seed, r, max_retries) for r in range(rounds)]
    vals = np.asarray(vals)
    alpha = (1.0 - level) / 2.0
    low, high = np.percentile(vals, [100 * alpha, 100 * (1 - alpha)])
    return BootstrapCI(point, float(low), float(high), rounds, level, tuple(vals.tolist()))


def concordance_ci(scores, y, rounds=50, level=0.95, seed=0, workers=1):
    scores = np.asarray(scores, dtype=float)

    def metric(idx):
        return concordance(scores[idx], y.subset(idx)).c_index

    return bootstrap_ci(metric, len(y), rounds=rounds, level=level, seed=seed, workers=workers)


# --------------------------------------------------------------------------
# Kaplan-Meier


def kaplan_meier(y):
    """Product-limit survival estimate as a right-continuous step function.

    Censorings tied with an event time stay in that time's risk set.
    """
    t = y.duration
    e = y.event
    times = np.unique(t[e])
    if times.size == 0:
        return StepFunction(np.empty(0), np.empty(0), initial=1.0)
    ts = np.sort(t)
    at_risk = ts.size - np.searchsorted(ts, times, side="left")
    deaths = np.searchsorted(np.sort(t[e]), times, side="right") - np.searchsorted(np.sort(t[e]), times, side="left")
    surv = np.cumprod(1.0 - deaths / at_risk)
    return StepFunction(times, surv, initial=1.0)


# --------------------------------------------------------------------------
# Calibration


@dataclass
class CalibrationBin:
    mean_predicted: float
    km_observed: float
    subject_count: int
    flagged: bool = False


@dataclass
class CalibrationReport:
    horizon: float
    bins: list
    ici: float
    mean_predicted_overall: float
    mean_observed_overall: float

    def to_json(self):
        return asdict(self)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bin_index", "mean_predicted", "km_observed", "count"])
        for i, b in enumerate(self.bins):
            w.writerow([i, repr(b.mean_predicted), repr(b.km_observed), b.subject_count])
        return buf.getvalue()


def ici_from_bins(bins):
    """Count-weighted mean |predicted - observed| over unflagged bins."""
    use = [b for b in bins if not b.flagged]
    total = sum(b.subject_count for b in use)
    if total == 0:
        return math.nan
    return sum(b.subject_count * abs(b.mean_predicted - b.km_observed) for b in use) / total


def calibration(predicted, y, horizon=10.0, n_bins=10):
    """Compare predicted horizon risks with Kaplan-Meier observed risk.

    Subjects are sorted by predicted risk into ``n_bins`` equal-count bins;
    each bin's observed risk is ``1 - KM(horizon)`` within the bin.  A bin
    with nobody followed up to the horizon and survival still positive
    there is flagged and left out of the ICI.
    """
    p = np.asarray(predicted, dtype=float)
    if p.shape != y.duration.shape:
        raise ValueError("predicted and outcomes differ in length")
    if np.any((p < 0) | (p > 1)) or not np.all(np.isfinite(p)):
        raise ValueError("predicted risks must lie in [0, 1]")
    if horizon > y.duration.max():
        raise ValueError(f"horizon {horizon} beyond maximum follow-up {y.duration.max():.4f}")
    if not 1 <= n_bins <= p.size:
        raise ValueError("need 1 <= n_bins <= n")
    order = np.argsort(p, kind="stable")
    bins = []
    for idx in np.array_split(order, n_bins):
        yb = y.subset(idx)
        surv = kaplan_meier(yb)(horizon)
        flagged = not np.any(yb.duration >= horizon)
        if flagged:
            warnings.warn(f"calibration bin with {idx.size} subjects has nobody at risk at horizon {horizon}")
        bins.append(CalibrationBin(float(p[idx].mean()), float(1.0 - surv), int(idx.size), bool(flagged)))
    return CalibrationReport(
        horizon=float(horizon),
        bins=bins,
        ici=float(ici_from_bins(bins)),
        mean_predicted_overall=float(p.mean()),
        mean_observed_overall=float(1.0 - kaplan_meier(y)(horizon)),
    )
