import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from survrisk import tuning
from survrisk.errors import ConfigError, FoldError, SearchError
from survrisk.neural import MlpSpec
from survrisk.tuning import (
    Categorical,
    IntRange,
    LogUniform,
    SearchSpace,
    TrialRecord,
    Uniform,
    cross_validate,
    default_space,
    search,
    stratified_folds,
    suggest,
    tpe_sample,
)

from conftest import outcome, synth_split

SMALL = SearchSpace(
    params={
        "n_layers": IntRange(0, 2),
        "width": IntRange(2, 8),
        "learning_rate": LogUniform(1e-3, 1e-1),
        "dropout_rate": Uniform(0.0, 0.5),
    },
    fixed={"max_epochs": 3, "early_stop_patience": 2, "batch_size": 128},
)


def _record(t, params, mean_c, status="ok"):
    return TrialRecord(t, params, {}, [mean_c] * 3 if mean_c is not None else [], mean_c, status)


@pytest.fixture(scope="module")
def small_data():
    _, _, _, parts, _ = synth_split(seed=4, n_subjects=600, target_prevalence=0.3)
    return parts["train"]


# ---------------------------------------------------------------- space and sampling


def test_space_validation():
    with pytest.raises(ConfigError):
        SearchSpace({})
    with pytest.raises(ConfigError):
        SearchSpace({"a": Uniform(1.0, 1.0)})
    with pytest.raises(ConfigError):
        SearchSpace({"a": Uniform(0.0, float("inf"))})
    with pytest.raises(ConfigError):
        SearchSpace({"a": Categorical(())})
    with pytest.raises(ConfigError):
        SearchSpace({"a": LogUniform(0.0, 1.0)})


def test_space_json_roundtrip():
    sp = default_space()
    assert SearchSpace.from_json(json.loads(json.dumps(sp.to_json()))) == sp


def test_empty_history_samples_within_bounds():
    sp = default_space()
    params = suggest([], sp, seed=0)
    assert sp.contains(params)
    spec = tpe_sample([], sp, seed=0)
    assert isinstance(spec, MlpSpec)
    assert len(spec.hidden_layers) == params["n_layers"]


def test_bounds_over_many_samples():
    sp = default_space()
    rng = np.random.default_rng(0)
    # a populated history so that the TPE branch is also exercised
    hist = [_record(t, suggest([], sp, seed=99, trial_id=t), float(rng.random())) for t in range(30)]
    for t in range(5000):
        assert sp.contains(suggest([], sp, seed=1, trial_id=t))
    for s in range(5000):
        assert sp.contains(suggest(hist, sp, seed=s))


def test_determinism():
    sp = default_space()
    rng = np.random.default_rng(3)
    hist = [_record(t, suggest([], sp, seed=5, trial_id=t), float(rng.random())) for t in range(15)]
    assert suggest(hist, sp, seed=7) == suggest(hist, sp, seed=7)
    assert tpe_sample(hist, sp, seed=7) == tpe_sample(hist, sp, seed=7)


def test_good_trials_attract_samples():
    sp = SearchSpace({"dropout_rate": Uniform(0.0, 0.5), "width": IntRange(2, 32)})
    rng = np.random.default_rng(0)
    hist = []
    for t in range(40):
        d = float(rng.uniform(0, 0.5))
        hist.append(_record(t, {"dropout_rate": d, "width": int(rng.integers(2, 33))}, 0.8 - abs(d - 0.1)))
    tpe = np.median([suggest(hist, sp, seed=s)["dropout_rate"] for s in range(100)])
    prior = np.median([suggest([], sp, seed=s)["dropout_rate"] for s in range(100)])
    assert abs(tpe - 0.1) < abs(prior - 0.1)


def test_failed_trials_ignored_by_density():
    sp = SearchSpace({"x": Uniform(0.0, 1.0)})
    hist = [_record(t, {"x": 0.1 * (t % 10)}, 0.5 + 0.01 * t) for t in range(12)]
    with_failed = hist + [_record(12 + i, {"x": 0.95}, None, "failed") for i in range(20)]
    assert suggest(hist, sp, seed=3, trial_id=40) == suggest(with_failed, sp, seed=3, trial_id=40)


def test_startup_uses_prior():
    sp = SearchSpace({"x": Uniform(0.0, 1.0)})
    hist = [_record(t, {"x": 0.5}, 0.6) for t in range(9)]
    assert suggest(hist, sp, seed=2) == tuning.random_suggest(hist, sp, seed=2)


# ---------------------------------------------------------------- folds and CV


def test_folds_n9_k3():
    y = outcome(np.arange(1, 10), [1, 1, 1, 0, 0, 0, 1, 0, 1])
    folds = stratified_folds(y, 3, seed=0)
    assert np.bincount(folds).tolist() == [3, 3, 3]


@settings(max_examples=100, deadline=None)
@given(n=st.integers(6, 400), frac=st.floats(0.05, 0.95), k=st.integers(2, 5), seed=st.integers(0, 2**16))
def test_fold_properties(n, frac, k, seed):
    e = np.zeros(n, dtype=bool)
    e[: int(round(frac * n))] = True
    y = outcome(np.arange(1, n + 1), e)
    try:
        folds = stratified_folds(y, k, seed)
    except FoldError:
        assert e.sum() < k or (~e).sum() < k
        return
    assert folds.shape == (n,) and set(folds.tolist()) == set(range(k))
    for f in range(k):
        size = np.sum(folds == f)
        assert abs(e[folds == f].sum() - e.sum() * size / n) < 1


def test_fold_error():
    with pytest.raises(FoldError):
        stratified_folds(outcome([1, 2, 3, 4], [1, 0, 0, 0]), 2, 0)


def test_lr_zero_on_null_data_is_chance():
    _, _, _, parts, _ = synth_split(seed=6, n_subjects=3000, true_log_hr=(0.0,) * 5, target_prevalence=0.3)
    X, y = parts["train"]
    spec = MlpSpec(hidden_layers=(8,), learning_rate=0.0, max_epochs=2, batch_size=256)
    rec = cross_validate(spec, X, y, k=3, seed=0)
    assert rec.status == "ok"
    assert abs(rec.mean_c - 0.5) <= 0.05


def test_cv_deterministic_and_mean_invariant(small_data):
    X, y = small_data
    spec = MlpSpec(hidden_layers=(4,), learning_rate=1e-2, max_epochs=3, batch_size=128)
    a = cross_validate(spec, X, y, k=3, seed=2)
    b = cross_validate(spec, X, y, k=3, seed=2)
    assert a == b
    assert len(a.fold_c) == 3
    assert a.mean_c == float(np.mean(a.fold_c))


def test_failed_trial_recorded(small_data):
    X, y = small_data
    spec = MlpSpec(hidden_layers=(8,), optimizer="sgd_momentum", learning_rate=1e12, max_epochs=5, batch_size=64)
    with np.errstate(all="ignore"):
        rec = cross_validate(spec, X.values * 100, y, k=3, seed=0)
    assert rec.status == "failed" and rec.mean_c is None


# ---------------------------------------------------------------- search


def test_budget_one(small_data):
    X, y = small_data
    best, hist = search(SMALL, 1, X, y, seed=0)
    assert len(hist) == 1 and best == hist[0]


def test_resume_matches_uninterrupted(small_data, tmp_path):
    X, y = small_data
    kw = dict(n_startup=2)
    _, full = search(SMALL, 5, X, y, seed=1, history_path=tmp_path / "a.jsonl", **kw)
    search(SMALL, 3, X, y, seed=1, history_path=tmp_path / "b.jsonl", **kw)
    _, resumed = search(SMALL, 2, X, y, seed=1, history_path=tmp_path / "b.jsonl", **kw)
    assert resumed == full
    assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
    for rec in full:
        if rec.status == "ok":
            assert rec.mean_c == float(np.mean(rec.fold_c))


def test_all_failed_raises(small_data):
    X, y = small_data
    sp = SearchSpace(
        {"learning_rate": LogUniform(1e11, 1e12)},
        fixed={"hidden_layers": (8,), "optimizer": "sgd_momentum", "max_epochs": 5, "batch_size": 64},
    )
    with np.errstate(all="ignore"), pytest.raises(SearchError):
        search(sp, 2, X.values * 100, y, seed=0)


def test_bad_sampler_and_budget(small_data):
    X, y = small_data
    with pytest.raises(ConfigError):
        search(SMALL, 0, X, y)
    with pytest.raises(ConfigError):
        search(SMALL, 1, X, y, sampler="grid")
