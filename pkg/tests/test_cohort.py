import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from survrisk import coxph
from survrisk.cohort import (
    ColumnSpec,
    SynthConfig,
    derive_prior_flag,
    from_arrays,
    generate_synthetic,
    load_cohort,
    load_schema,
    outcome_from_dates,
    preprocess,
    save_cohort,
    schema_to_json,
    stratified_split,
)
from survrisk.errors import (
    ConfigError,
    DegenerateColumnError,
    EmptyCohortError,
    ParseError,
    SchemaError,
    StratificationError,
)
from survrisk.metrics import c_index

from conftest import outcome

HEADER = "age,assessment_date,outcome_date,censor_date\n"


def _write(tmp_path, text, name="c.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def _simple_table(values, kind="continuous", categories=None, n=None):
    n = len(values) if n is None else n
    a = np.full(n, np.datetime64("2008-01-01"))
    return from_arrays(
        [ColumnSpec("v", kind, categories)],
        {"v": values},
        a,
        np.full(n, np.datetime64("NaT")),
        np.full(n, np.datetime64("2020-01-01")),
    )


# ---------------------------------------------------------------- loading


def test_load_three_rows(tmp_path):
    p = _write(tmp_path, HEADER + "50,2008-01-01,,2020-09-30\n61.5,2009-03-02,2012-01-01,2020-09-30\n40,2007-05-05,,2020-09-30\n")
    t = load_cohort(p, [ColumnSpec("age", "continuous")])
    assert t.n == 3
    assert t.missing_count() == 0
    np.testing.assert_array_equal(t.columns["age"], [50, 61.5, 40])


def test_empty_cell_is_missing_and_row_kept(tmp_path):
    p = _write(tmp_path, HEADER + ",2008-01-01,,2020-09-30\n3,2008-01-01,,2020-09-30\n")
    t = load_cohort(p, [ColumnSpec("age", "continuous")])
    assert t.n == 2
    assert np.isnan(t.columns["age"][0])
    assert t.missing_count() == 1


def test_header_mismatch(tmp_path):
    p = _write(tmp_path, HEADER.replace("age", "agee") + "1,2008-01-01,,2020-09-30\n")
    with pytest.raises(SchemaError):
        load_cohort(p, [ColumnSpec("age", "continuous")])


def test_malformed_date_names_row_and_column(tmp_path):
    p = _write(
        tmp_path,
        "age,dx,assessment_date,outcome_date,censor_date\n1,,2008-01-01,,2020-09-30\n2,2008-13-45,2008-01-01,,2020-09-30\n",
    )
    with pytest.raises(ParseError) as exc:
        load_cohort(p, [ColumnSpec("age", "continuous"), ColumnSpec("dx", "event_date")])
    assert exc.value.row == 2 and exc.value.column == "dx"


def test_rfc4180_quoting_and_categories(tmp_path):
    p = _write(
        tmp_path,
        'job,assessment_date,outcome_date,censor_date\n"a, b",2008-01-01,,2020-09-30\nzzz,2008-01-01,,2020-09-30\n',
    )
    t = load_cohort(p, [ColumnSpec("job", "categorical", ("a, b", "c"))])
    assert list(t.columns["job"]) == ["a, b", None]


def test_schema_roundtrip(tmp_path):
    schema = (ColumnSpec("a", "continuous"), ColumnSpec("b", "ordinal", ("lo", "hi")), ColumnSpec("c", "event_date"))
    import json

    p = tmp_path / "s.json"
    p.write_text(json.dumps(schema_to_json(schema)))
    assert load_schema(p) == schema


def test_schema_invariants():
    with pytest.raises(SchemaError):
        ColumnSpec("x", "categorical")
    with pytest.raises(SchemaError):
        ColumnSpec("x", "ordinal", ())
    with pytest.raises(SchemaError):
        from_arrays([ColumnSpec("x", "continuous"), ColumnSpec("x", "continuous")], {"x": [1.0]}, ["2008-01-01"], ["NaT"], ["2010-01-01"])


def test_csv_roundtrip(tmp_path):
    table, _ = generate_synthetic(SynthConfig(n_subjects=200, extra_columns=True, missing_rate=0.05, seed=3))
    save_cohort(table, tmp_path / "a.csv")
    back = load_cohort(tmp_path / "a.csv", table.schema)
    save_cohort(back, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    np.testing.assert_array_equal(back.columns["x0"], table.columns["x0"])


# ---------------------------------------------------------------- synthetic


def test_synthetic_deterministic(tmp_path):
    cfg = SynthConfig(n_subjects=500, extra_columns=True, missing_rate=0.02, seed=11)
    for name in ("a.csv", "b.csv"):
        save_cohort(generate_synthetic(cfg)[0], tmp_path / name)
    h = [hashlib.sha256((tmp_path / n).read_bytes()).hexdigest() for n in ("a.csv", "b.csv")]
    assert h[0] == h[1]


def test_synthetic_prevalence_and_followup():
    cfg = SynthConfig(n_subjects=20000, target_prevalence=0.0323, seed=2)
    table, truth = generate_synthetic(cfg)
    assert abs(truth["event_fraction"] - 0.0323) <= 0.2 * 0.0323
    d, e, _ = outcome_from_dates(table.assessment_date, table.outcome_date, table.censor_date)
    assert d.max() <= 13.8 + 1e-9
    assert d[~e].min() >= 13.8 - 2.0 - 1e-2


def test_synthetic_unsatisfiable_prevalence():
    with pytest.raises(ConfigError):
        generate_synthetic(SynthConfig(n_subjects=1000, weibull_scale=1e6, target_prevalence=0.3))
    with pytest.raises(ConfigError):
        SynthConfig(target_prevalence=1.5).validate()


def test_null_effects_give_chance_concordance():
    cfg = SynthConfig(n_subjects=10000, true_log_hr=(0.0, 0.0, 0.0), target_prevalence=0.2, seed=5)
    table, truth = generate_synthetic(cfg)
    X, y, _ = preprocess(table)
    lp = X.values @ np.zeros(3)
    assert c_index(lp, y) == 0.5
    # a random direction is still uninformative
    lp = X.values @ np.array([1.0, -0.5, 0.3])
    assert abs(c_index(lp, y) - 0.5) < 0.02


def test_single_feature_recovered_by_cox():
    cfg = SynthConfig(n_subjects=20000, true_log_hr=(1.0,), target_prevalence=0.0323, seed=0)
    X, y, _ = preprocess(generate_synthetic(cfg)[0])
    m = coxph.fit(X, y)
    assert abs(m.beta[0] - 1.0) < 0.1


def test_linear_predictor_ranks_event_times():
    cfg = SynthConfig(n_subjects=10000, true_log_hr=(0.5, 0.0), target_prevalence=0.3, seed=9)
    table, _ = generate_synthetic(cfg)
    X, y, _ = preprocess(table)
    lp = np.column_stack([table.columns["x0"], table.columns["x1"]]) @ np.array([0.5, 0.0])
    rho = stats.spearmanr(lp[y.event], y.duration[y.event]).statistic
    assert rho < -0.05


# ---------------------------------------------------------------- flags


def _flag_table(dx_dates, assess="2010-06-01"):
    n = len(dx_dates)
    return from_arrays(
        [ColumnSpec("dx1", "event_date"), ColumnSpec("dx2", "event_date")],
        {"dx1": dx_dates, "dx2": ["NaT"] * n},
        [assess] * n,
        ["NaT"] * n,
        ["2020-01-01"] * n,
    )


def test_prior_flag_cases():
    t = _flag_table(["2008-06-01", "2010-06-01", "NaT", "2012-01-01"])
    out = derive_prior_flag(t, ["dx1", "dx2"], "any_prior")
    np.testing.assert_array_equal(out.columns["any_prior"], [1, 0, 0, 0])
    assert out.spec("any_prior").kind == "ordinal"


def test_prior_flag_errors():
    t = _flag_table(["NaT"])
    with pytest.raises(SchemaError):
        derive_prior_flag(t, ["nope"], "f")
    t2 = _simple_table([1.0, 2.0])
    with pytest.raises(SchemaError):
        derive_prior_flag(t2, ["v"], "f")


# ---------------------------------------------------------------- preprocess


def test_scaling_unit_sample_variance():
    X, _, _ = preprocess(_simple_table([1.0, 2.0, 3.0]))
    np.testing.assert_allclose(X.values[:, 0], [-1.0, 0.0, 1.0])
    assert np.var(X.values[:, 0], ddof=1) == pytest.approx(1.0)
    assert X.scaling["v"] == (2.0, 1.0)


def test_rare_category_dropped_and_logged():
    n = 4000
    vals = ["a"] * 2000 + ["b"] * 1998 + ["c"] * 2  # c at 0.05%
    X, _, rep = preprocess(_simple_table(vals, "categorical", ("a", "b", "c")), rare_threshold=0.001)
    assert "v=c" not in X.column_names
    assert ["v", "c", 2 / n] in rep.columns_dropped_rare
    assert X.groups["v"] == ("v=a", "v=b")


def test_missing_continuous_row_excluded():
    X, y, rep = preprocess(_simple_table([1.0, np.nan, 3.0, 4.0]))
    assert rep.rows_excluded_missing == 1
    assert rep.rows_in == rep.rows_out + rep.rows_excluded_missing
    assert X.shape == (3, 1)


def test_missing_category_and_group_sums():
    vals = ["a", None, "b", "a", None, "b"] * 50
    X, _, _ = preprocess(_simple_table(vals, "categorical", ("a", "b")))
    assert X.column_names == ("v=a", "v=b", "v=missing")
    np.testing.assert_array_equal(X.values.sum(axis=1), 1.0)


def test_prior_outcome_excluded_and_duration_rule():
    a = ["2010-01-01"] * 4
    o = ["2009-01-01", "2012-01-01", "NaT", "2021-01-01"]
    c = ["2020-01-01"] * 4
    t = from_arrays([ColumnSpec("v", "continuous")], {"v": [1.0, 2.0, 3.0, 5.0]}, a, o, c)
    X, y, rep = preprocess(t)
    assert rep.rows_excluded_prior_outcome == 1
    assert rep.rows_in == rep.rows_out + rep.rows_excluded_missing + rep.rows_excluded_prior_outcome
    np.testing.assert_array_equal(y.event, [True, False, False])
    np.testing.assert_allclose(y.duration, np.array([730, 3652, 3652]) / 365.25)


def test_outcome_on_censor_date_is_event():
    d, e, _ = outcome_from_dates(
        np.array(["2010-01-01"], dtype="datetime64[D]"),
        np.array(["2015-01-01"], dtype="datetime64[D]"),
        np.array(["2015-01-01"], dtype="datetime64[D]"),
    )
    assert e[0] and d[0] == pytest.approx(1826 / 365.25)


def test_degenerate_and_empty():
    with pytest.raises(DegenerateColumnError) as exc:
        preprocess(_simple_table([2.0, 2.0, 2.0]))
    assert exc.value.column == "v"
    with pytest.raises(EmptyCohortError):
        preprocess(_simple_table([np.nan, np.nan]))


def test_preprocess_idempotent():
    table, _ = generate_synthetic(SynthConfig(n_subjects=300, seed=4))
    X, y, _ = preprocess(table)
    again = from_arrays(
        [ColumnSpec(c, "continuous") for c in X.column_names],
        {c: X.values[:, j] for j, c in enumerate(X.column_names)},
        np.full(len(y), np.datetime64("2008-01-01")),
        np.where(y.event, np.datetime64("2008-01-01") + np.rint(y.duration * 365.25).astype(int), np.datetime64("NaT")),
        np.full(len(y), np.datetime64("2008-01-01")) + np.rint(y.duration * 365.25).astype(int),
    )
    X2, y2, _ = preprocess(again)
    assert np.max(np.abs(X2.values - X.values)) < 1e-12


def test_extra_columns_pipeline():
    table, _ = generate_synthetic(SynthConfig(n_subjects=5000, extra_columns=True, missing_rate=0.01, seed=1))
    table = derive_prior_flag(table, ["prior_dx_date"], "any_prior")
    X, y, rep = preprocess(table)
    assert rep.rows_excluded_prior_outcome > 0
    assert rep.rows_excluded_missing > 0
    assert any(r[:2] == ["region", "island"] for r in rep.columns_dropped_rare)
    assert "any_prior" in X.column_names and "any_prior" in rep.derived_columns
    g = X.select(X.groups["region"]).values
    assert set(np.unique(g.sum(axis=1))) <= {0.0, 1.0}
    assert rep.rows_in == rep.rows_out + rep.rows_excluded_missing + rep.rows_excluded_prior_outcome


# ---------------------------------------------------------------- splitting


def test_split_arithmetic():
    e = np.zeros(1000, dtype=bool)
    e[:32] = True
    sp = stratified_split(outcome(np.arange(1, 1001), e), seed=0)
    assert sp.test.size == 250 and e[sp.test].sum() == 8
    assert sp.validation.size == 187  # floor(0.25 * 750)
    assert sp.train.size == 563


def test_split_deterministic():
    y = outcome(np.arange(1, 101), np.arange(100) % 5 == 0)
    a, b = stratified_split(y, seed=3), stratified_split(y, seed=3)
    for k in ("train", "validation", "test"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))


def test_split_too_few_events():
    e = np.zeros(100, dtype=bool)
    e[0] = True
    with pytest.raises(StratificationError):
        stratified_split(outcome(np.arange(1, 101), e))
    with pytest.raises(StratificationError):
        stratified_split(outcome([1, 2, 3], [True, False, True]))


@settings(max_examples=200, deadline=None)
@given(
    n=st.integers(8, 3000),
    frac=st.floats(0.05, 0.95),
    tf=st.floats(0.1, 0.5),
    vf=st.floats(0.1, 0.5),
    seed=st.integers(0, 2**16),
)
def test_split_properties(n, frac, tf, vf, seed):
    n_ev = int(round(frac * n))
    e = np.zeros(n, dtype=bool)
    e[:n_ev] = True
    y = outcome(np.arange(1, n + 1), e)
    try:
        sp = stratified_split(y, tf, vf, seed)
    except StratificationError:
        return
    parts = [sp.train, sp.validation, sp.test]
    allidx = np.concatenate(parts)
    assert np.array_equal(np.sort(allidx), np.arange(n))
    for p in parts:
        assert abs(e[p].sum() - n_ev * p.size / n) < 1
