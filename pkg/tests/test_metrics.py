import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survrisk import coxph
from survrisk.errors import BootstrapError, UndefinedConcordanceError
from survrisk.metrics import (
    CalibrationBin,
    bootstrap_ci,
    c_index,
    calibration,
    concordance,
    concordance_ci,
    ici_from_bins,
    kaplan_meier,
)

from conftest import brute_concordance, outcome, synth_split


def test_concordance_examples():
    y = outcome([1, 2, 3], [1, 1, 1])
    assert c_index([3, 2, 1], y) == 1.0
    assert c_index([1, 1, 1], y) == 0.5
    r = concordance([0.9, 0.3, 0.5], outcome([1, 2, 3], [1, 1, 0]))
    assert (r.concordant, r.discordant, r.tied_risk, r.comparable_pairs) == (2, 1, 0, 3)
    assert r.c_index == pytest.approx(2 / 3)


def test_undefined_concordance():
    with pytest.raises(UndefinedConcordanceError):
        concordance([1.0, 2.0], outcome([1, 2], [0, 0]))
    with pytest.raises(UndefinedConcordanceError):
        concordance([1.0, 0.0], outcome([2, 2], [1, 1]))


def _instance(rng, n):
    t = rng.integers(1, max(2, n // 3), n).astype(float) if rng.random() < 0.5 else rng.exponential(1, n)
    e = rng.random(n) < rng.uniform(0.1, 1.0)
    e[0] = True
    t[0] = t.min() * (1.0 if rng.random() < 0.5 else 0.5)
    s = rng.integers(0, 5, n).astype(float) if rng.random() < 0.5 else rng.normal(size=n)
    return s, outcome(t, e)


def test_brute_force_equivalence():
    rng = np.random.default_rng(2024)
    checked = 0
    while checked < 300:
        n = int(rng.integers(2, 201))
        s, y = _instance(rng, n)
        conc, disc, tied = brute_concordance(s, y.duration, y.event)
        if conc + disc + tied == 0:
            continue
        r = concordance(s, y)
        assert (r.concordant, r.discordant, r.tied_risk) == (conc, disc, tied)
        assert r.c_index == (conc + 0.5 * tied) / (conc + disc + tied)
        checked += 1


def test_large_input_matches_brute_force_counts():
    rng = np.random.default_rng(5)
    s, y = _instance(rng, 1500)
    conc, disc, tied = brute_concordance(s, y.duration, y.event)
    r = concordance(s, y)
    assert (r.concordant, r.discordant, r.tied_risk) == (conc, disc, tied)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 120))
def test_monotone_transform_invariance(seed, n):
    rng = np.random.default_rng(seed)
    s, y = _instance(rng, n)
    try:
        a = concordance(s, y)
    except UndefinedConcordanceError:
        return
    b = concordance(np.exp(s / 3.0) * 7 - 2, y)
    assert a == b


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 120))
def test_antisymmetry(seed, n):
    rng = np.random.default_rng(seed)
    _, y = _instance(rng, n)
    s = rng.normal(size=n)
    try:
        a = concordance(s, y)
    except UndefinedConcordanceError:
        return
    assert a.tied_risk == 0
    assert concordance(-s, y).c_index == pytest.approx(1 - a.c_index, abs=1e-15)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(2, 80))
def test_counts_sum(seed, n):
    rng = np.random.default_rng(seed)
    s, y = _instance(rng, n)
    try:
        r = concordance(s, y)
    except UndefinedConcordanceError:
        return
    assert r.concordant + r.discordant + r.tied_risk == r.comparable_pairs
    assert 0 <= r.c_index <= 1


# ---------------------------------------------------------------- bootstrap


def test_bootstrap_constant_metric():
    ci = bootstrap_ci(lambda idx: 0.7, 100, rounds=20)
    assert ci.low == ci.high == ci.point == 0.7


def test_bootstrap_single_round():
    ci = bootstrap_ci(lambda idx: float(np.mean(idx)), 50, rounds=1, seed=4)
    assert ci.low == ci.high == ci.samples[0]
    assert ci.rounds == 1


def test_bootstrap_deterministic_and_parallel_agree():
    rng = np.random.default_rng(0)
    s, y = _instance(rng, 300)
    a = concordance_ci(s, y, rounds=30, seed=9)
    b = concordance_ci(s, y, rounds=30, seed=9, workers=4)
    assert a == b
    assert a.low <= a.high


def test_bootstrap_percentiles_interpolate():
    def metric(idx):
        return float(idx[0]) if len(idx) else 0.0

    ci = bootstrap_ci(metric, 1000, rounds=7, seed=1)
    assert ci.low == pytest.approx(np.percentile(ci.samples, 2.5))
    assert ci.high == pytest.approx(np.percentile(ci.samples, 97.5))


def test_bootstrap_retries_and_errors():
    calls = []

    def flaky(idx):
        calls.append(1)
        if len(calls) in (2, 3):
            raise UndefinedConcordanceError("no events")
        return 1.0

    ci = bootstrap_ci(flaky, 10, rounds=3)
    assert ci.point == 1.0 and len(ci.samples) == 3

    def never(idx):
        if len(idx) == 10 and not np.array_equal(idx, np.arange(10)):
            raise UndefinedConcordanceError("no events")
        return 0.5

    with pytest.raises(BootstrapError):
        bootstrap_ci(never, 10, rounds=2)
    with pytest.raises(BootstrapError):
        bootstrap_ci(lambda idx: 1.0, 10, rounds=0)


# ---------------------------------------------------------------- Kaplan-Meier


def test_km_examples():
    S = kaplan_meier(outcome([1, 2, 3], [1, 0, 1]))
    assert S(0.0) == 1.0
    assert S(1.0) == pytest.approx(2 / 3)
    assert S(2.0) == pytest.approx(2 / 3)
    assert S(3.0) == 0.0
    S = kaplan_meier(outcome([1, 2, 3], [0, 0, 0]))
    assert S(0.5) == S(5.0) == 1.0


def test_km_censoring_tied_with_event_stays_at_risk():
    S = kaplan_meier(outcome([1, 1, 2], [1, 0, 1]))
    assert S(1.0) == pytest.approx(2 / 3)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(1, 30), min_size=1, max_size=60))
def test_km_uncensored_is_empirical_survival(times):
    t = np.array(times, dtype=float)
    S = kaplan_meier(outcome(t, np.ones_like(t, dtype=bool)))
    for u in np.unique(t):
        assert S(u) == pytest.approx(np.mean(t > u), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_km_nonincreasing(seed):
    rng = np.random.default_rng(seed)
    _, y = _instance(rng, 60)
    S = kaplan_meier(y)
    grid = np.linspace(0, y.duration.max() + 1, 200)
    v = S(grid)
    assert v[0] <= 1.0 and np.all(np.diff(v) <= 1e-15) and np.all(v >= 0)


# ---------------------------------------------------------------- calibration


def test_calibration_perfect_bins():
    # bin b holds 100 subjects, b + 1 of whom have the event before the horizon
    t = np.full(1000, 15.0)
    for b in range(10):
        t[100 * b : 100 * b + b + 1] = 5.0
    y = outcome(t, t < 10)
    p = np.repeat((np.arange(10) + 1) / 100.0, 100)
    rep = calibration(p, y, horizon=10)
    np.testing.assert_allclose([b.km_observed for b in rep.bins], (np.arange(10) + 1) / 100.0, atol=1e-15)
    assert rep.ici == pytest.approx(0.0, abs=1e-15)
    assert sum(b.subject_count for b in rep.bins) == 1000
    p[0] += 0.01
    assert calibration(p, y, horizon=10).ici > 0


def test_calibration_zero_predictions():
    rng = np.random.default_rng(2)
    n = 2000
    t = np.where(rng.random(n) < 0.1, rng.uniform(0.5, 9.5, n), 12.0)
    e = t < 10
    rep = calibration(np.zeros(n), outcome(t, e), horizon=10)
    assert rep.ici == pytest.approx(e.mean(), abs=1e-12)


def test_calibration_flagged_bin():
    t = np.r_[np.full(5, 2.0), np.full(5, 12.0)]
    e = np.r_[np.zeros(5, bool), np.ones(5, bool)]
    p = np.r_[np.full(5, 0.9), np.full(5, 0.1)]
    with pytest.warns(UserWarning):
        rep = calibration(p, outcome(t, e), horizon=10, n_bins=2)
    assert [b.flagged for b in rep.bins] == [False, True]
    assert rep.ici == pytest.approx(0.1)


def test_calibration_errors():
    y = outcome([1, 2, 3], [1, 1, 1])
    with pytest.raises(ValueError):
        calibration([0.1, 0.2, 1.5], y, horizon=2)
    with pytest.raises(ValueError):
        calibration([0.1, 0.2, 0.3], y, horizon=5)


def test_ici_nonnegative_and_zero_iff_perfect():
    bins = [CalibrationBin(0.1, 0.1, 10), CalibrationBin(0.2, 0.2, 5)]
    assert ici_from_bins(bins) == 0.0
    bins[1] = CalibrationBin(0.2, 0.25, 5)
    assert ici_from_bins(bins) > 0


def test_csv_export():
    rng = np.random.default_rng(3)
    y = outcome(rng.uniform(1, 15, 200), rng.random(200) < 0.4)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        rep = calibration(rng.uniform(0, 0.5, 200), y, horizon=10)
    lines = rep.to_csv().splitlines()
    assert lines[0] == "bin_index,mean_predicted,km_observed,count"
    assert len(lines) == 11


def test_well_specified_cox_is_calibrated():
    _, _, _, parts, _ = synth_split(seed=0, n_subjects=20000, target_prevalence=0.0323)
    (Xtr, ytr), (Xte, yte) = parts["train"], parts["test"]
    m = coxph.fit(Xtr, ytr)
    rep = calibration(coxph.predict_risk(m, Xte.values, 10, scaled=True), yte, horizon=10)
    assert rep.ici < 0.01
    assert abs(rep.mean_predicted_overall - rep.mean_observed_overall) < 0.005
