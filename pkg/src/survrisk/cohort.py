"""Cohort data model, CSV ingestion, synthetic cohorts and preprocessing.

A cohort is a table of typed predictor columns plus three reserved date
columns (``assessment_date``, ``outcome_date``, ``censor_date``).  The
pipeline is::

    load_cohort / generate_synthetic
        -> derive_prior_flag (optional)
        -> preprocess          (one-hot, rare pruning, exclusion, scaling)
        -> stratified_split
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    ConfigError,
    DegenerateColumnError,
    EmptyCohortError,
    ParseError,
    SchemaError,
    StratificationError,
)

KINDS = ("continuous", "ordinal", "categorical", "event_date")
RESERVED = ("assessment_date", "outcome_date", "censor_date")
DAYS_PER_YEAR = 365.25
MISSING_LABEL = "missing"


@dataclass(frozen=True)
class ColumnSpec:
    """One predictor column.

    ``categories`` holds the labels of a categorical column or the ordered
    levels of an ordinal one; it is ignored for the other kinds.
    """

    name: str
    kind: str
    categories: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.name in RESERVED:
            raise SchemaError(f"column name {self.name!r} is reserved")
        if self.kind in ("categorical", "ordinal"):
            if not self.categories:
                raise SchemaError(f"{self.kind} column {self.name!r} needs a category list")
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))
            if len(set(self.categories)) != len(self.categories):
                raise SchemaError(f"column {self.name!r} has duplicate categories")


def validate_schema(schema):
    schema = tuple(schema)
    names = [c.name for c in schema]
    dup = sorted({n for n in names if names.count(n) > 1})
    if dup:
        raise SchemaError(f"duplicate column names: {dup}")
    return schema


def load_schema(path):
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SchemaError(f"cannot read schema {path}: {exc}") from exc
    entries = doc["columns"] if isinstance(doc, dict) else doc
    try:
        return validate_schema(
            ColumnSpec(e["name"], e["kind"], tuple(e["categories"]) if e.get("categories") else None)
            for e in entries
        )
    except (KeyError, TypeError) as exc:
        raise SchemaError(f"malformed schema entry: {exc}") from exc


def schema_to_json(schema):
    cols = []
    for c in schema:
        entry = {"name": c.name, "kind": c.kind}
        if c.categories is not None:
            entry["categories"] = list(c.categories)
        cols.append(entry)
    return {"columns": cols}


@dataclass(frozen=True)
class CohortTable:
    """Raw per-subject data.

    ``columns`` maps a column name to a 1-d array: float with NaN for
    continuous/ordinal (ordinal stores the level index), object with None for
    categorical, ``datetime64[D]`` with NaT for event dates.
    """

    schema: tuple[ColumnSpec, ...]
    columns: dict
    assessment_date: np.ndarray
    outcome_date: np.ndarray
    censor_date: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "schema", validate_schema(self.schema))
        n = len(self.assessment_date)
        for name in ("outcome_date", "censor_date"):
            if len(getattr(self, name)) != n:
                raise SchemaError(f"{name} has wrong length")
        for spec in self.schema:
            if spec.name not in self.columns:
                raise SchemaError(f"missing data for column {spec.name!r}")
            if len(self.columns[spec.name]) != n:
                raise SchemaError(f"column {spec.name!r} has wrong length")
        for arr in (*self.columns.values(), self.assessment_date, self.outcome_date, self.censor_date):
            arr.flags.writeable = False

    @property
    def n(self):
        return len(self.assessment_date)

    def spec(self, name):
        for c in self.schema:
            if c.name == name:
                return c
        raise SchemaError(f"unknown column {name!r}")

    def missing_count(self):
        total = 0
        for spec in self.schema:
            total += int(_missing_mask(spec, self.columns[spec.name]).sum())
        return total


def _missing_mask(spec, values):
    if spec.kind in ("continuous", "ordinal"):
        return np.isnan(values)
    if spec.kind == "event_date":
        return np.isnat(values)
    return np.array([v is None for v in values], dtype=bool)


def _as_dates(values):
    return np.asarray(values, dtype="datetime64[D]")


def from_arrays(schema, columns, assessment_date, outcome_date, censor_date):
    """Build a ``CohortTable`` from in-memory arrays (copies everything)."""
    schema = validate_schema(schema)
    cols = {}
    for spec in schema:
        v = columns[spec.name]
        if spec.kind in ("continuous", "ordinal"):
            cols[spec.name] = np.array(v, dtype=float)
        elif spec.kind == "event_date":
            cols[spec.name] = np.array(v, dtype="datetime64[D]")
        else:
            cols[spec.name] = np.array([None if x is None else str(x) for x in v], dtype=object)
    return CohortTable(
        schema,
        cols,
        np.array(assessment_date, dtype="datetime64[D]"),
        np.array(outcome_date, dtype="datetime64[D]"),
        np.array(censor_date, dtype="datetime64[D]"),
    )


# --------------------------------------------------------------------------
# CSV I/O


def _parse_date(cell, row, column, required=False):
    cell = cell.strip()
    if cell == "":
        if required:
            raise ParseError(f"row {row}: column {column!r} is required", row, column)
        return np.datetime64("NaT", "D")
    try:
        if len(cell) != 10:
            raise ValueError(cell)
        return np.datetime64(cell, "D")
    except ValueError:
        raise ParseError(f"row {row}: malformed date {cell!r} in column {column!r}", row, column) from None


def _parse_number(cell):
    try:
        v = float(cell)
    except ValueError:
        return math.nan
    return v if math.isfinite(v) else math.nan


def load_cohort(path, schema):
    """Read a cohort CSV whose header must list exactly the schema columns
    plus the reserved date columns (in any order).  Unparseable or empty
    predictor cells become missing; malformed dates raise ``ParseError``.
    Rows are numbered from 1 (first data row) in error messages.
    """
    schema = validate_schema(schema)
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise SchemaError(f"cannot open cohort {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path} is empty") from None
        expected = [c.name for c in schema] + list(RESERVED)
        if sorted(header) != sorted(expected) or len(set(header)) != len(header):
            missing = sorted(set(expected) - set(header))
            extra = sorted(set(header) - set(expected))
            raise SchemaError(f"header/schema mismatch: missing {missing}, unexpected {extra}")
        pos = {name: i for i, name in enumerate(header)}
        rows = list(reader)

    n = len(rows)
    for i, r in enumerate(rows, start=1):
        if len(r) != len(header):
            raise ParseError(f"row {i}: expected {len(header)} fields, got {len(r)}", i, None)
    cols = {}
    for spec in schema:
        j = pos[spec.name]
        cells = [r[j] for r in rows]
        if spec.kind == "continuous":
            cols[spec.name] = np.array([_parse_number(c) if c.strip() else math.nan for c in cells])
        elif spec.kind == "ordinal":
            index = {lab: k for k, lab in enumerate(spec.categories)}
            cols[spec.name] = np.array([float(index[c.strip()]) if c.strip() in index else math.nan for c in cells])
        elif spec.kind == "categorical":
            cats = set(spec.categories)
            cols[spec.name] = np.array([c.strip() if c.strip() in cats else None for c in cells], dtype=object)
        else:
            cols[spec.name] = np.array(
                [_parse_date(c, i, spec.name) for i, c in enumerate(cells, start=1)], dtype="datetime64[D]"
            )
    dates = {}
    for name in RESERVED:
        j = pos[name]
        dates[name] = np.array(
            [_parse_date(r[j], i, name, required=(name != "outcome_date")) for i, r in enumerate(rows, start=1)],
            dtype="datetime64[D]",
        ).reshape(n)
    return CohortTable(schema, cols, dates["assessment_date"], dates["outcome_date"], dates["censor_date"])


def _format_cell(spec, v):
    if spec.kind == "continuous":
        return "" if math.isnan(v) else repr(float(v))
    if spec.kind == "ordinal":
        return "" if math.isnan(v) else spec.categories[int(v)]
    if spec.kind == "categorical":
        return "" if v is None else v
    return "" if np.isnat(v) else str(v)


def save_cohort(table, path):
    """Write ``table`` as CSV in a byte-stable format."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([c.name for c in table.schema] + list(RESERVED))
        for i in range(table.n):
            row = [_format_cell(spec, table.columns[spec.name][i]) for spec in table.schema]
            for d in (table.assessment_date[i], table.outcome_date[i], table.censor_date[i]):
                row.append("" if np.isnat(d) else str(d))
            w.writerow(row)


# --------------------------------------------------------------------------
# Synthetic cohorts


@dataclass
class SynthConfig:
    """Weibull proportional-hazards cohort with administrative censoring.

    When ``weibull_scale`` is None it is solved on the drawn sample so the
    event fraction hits ``target_prevalence``; when given, the realised
    fraction must land within 20% (relative) of the target.
    """

    n_subjects: int = 5000
    true_log_hr: tuple[float, ...] = (0.8, -0.5, 0.3, 0.0, 0.0)
    weibull_shape: float = 1.2
    weibull_scale: float | None = None
    max_followup_years: float = 13.8
    entry_stagger_years: float = 2.0
    target_prevalence: float = 0.0323
    missing_rate: float = 0.0
    extra_columns: bool = False
    seed: int = 0

    def validate(self):
        if self.n_subjects < 2:
            raise ConfigError("n_subjects must be >= 2")
        if not 0.0 < self.target_prevalence < 1.0:
            raise ConfigError(f"target_prevalence must lie in (0, 1), got {self.target_prevalence}")
        if not self.max_followup_years > 0:
            raise ConfigError("max_followup_years must be positive")
        if not 0 <= self.entry_stagger_years < self.max_followup_years:
            raise ConfigError("entry_stagger_years must lie in [0, max_followup_years)")
        if not 0.0 <= self.missing_rate < 1.0:
            raise ConfigError("missing_rate must lie in [0, 1)")
        if self.weibull_shape <= 0 or (self.weibull_scale is not None and self.weibull_scale <= 0):
            raise ConfigError("Weibull parameters must be positive")
        if len(self.true_log_hr) < 1 or not all(math.isfinite(b) for b in self.true_log_hr):
            raise ConfigError("true_log_hr must be a nonempty finite vector")
        return self

    @property
    def feature_names(self):
        return tuple(f"x{k}" for k in range(len(self.true_log_hr)))


BASE_DATE = np.datetime64("2006-01-01", "D")
_REGIONS = ("north", "south", "east", "west", "island")
_REGION_P = (0.4, 0.3, 0.2, 0.0995, 0.0005)


def generate_synthetic(cfg):
    """Draw a cohort from ``cfg``.  Returns ``(table, truth)`` where
    ``truth`` records the generating log hazard ratios and Weibull baseline.

    Covariates ``x0..x{d-1}`` are iid standard normal.  Subjects enter over
    ``entry_stagger_years`` and are censored at one common extraction date.
    With ``extra_columns`` the table also carries a categorical ``region``
    (one category below 0.1%), an ordinal ``smoker``, an event date
    ``prior_dx_date`` and 2% subjects diagnosed before assessment; none of
    these affect the hazard.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_subjects
    beta = np.asarray(cfg.true_log_hr, dtype=float)
    X = rng.standard_normal((n, beta.size))
    eta = X @ beta
    stagger_days = np.rint(rng.uniform(0.0, cfg.entry_stagger_years, n) * DAYS_PER_YEAR).astype(np.int64)
    horizon_days = int(round(cfg.max_followup_years * DAYS_PER_YEAR))
    follow_days = horizon_days - stagger_days
    follow = follow_days / DAYS_PER_YEAR
    expo = rng.standard_exponential(n)
    # T = scale * (E / exp(eta))**(1/k); event iff T <= follow iff scale <= q
    unit = (expo / np.exp(eta)) ** (1.0 / cfg.weibull_shape)
    scale = cfg.weibull_scale
    if scale is None:
        q = follow / unit
        scale = float(np.quantile(q, 1.0 - cfg.target_prevalence))
    t_days = np.maximum(1, np.rint(scale * unit * DAYS_PER_YEAR)).astype(np.int64)
    event = t_days <= follow_days
    frac = event.mean()
    if abs(frac - cfg.target_prevalence) > 0.2 * cfg.target_prevalence:
        raise ConfigError(
            f"baseline (shape={cfg.weibull_shape}, scale={scale:.4g}) yields event fraction "
            f"{frac:.4f}, cannot reach target {cfg.target_prevalence} under censoring"
        )

    assessment = BASE_DATE + stagger_days
    censor = np.full(n, BASE_DATE + horizon_days)
    outcome = np.where(event, assessment + t_days, np.datetime64("NaT", "D"))

    names = cfg.feature_names
    if cfg.missing_rate > 0:
        X = np.where(rng.random(X.shape) < cfg.missing_rate, np.nan, X)
    columns = {name: X[:, k].copy() for k, name in enumerate(names)}
    schema = [ColumnSpec(name, "continuous") for name in names]

    if cfg.extra_columns:
        region = rng.choice(len(_REGIONS), size=n, p=_REGION_P)
        reg = np.array([_REGIONS[r] for r in region], dtype=object)
        if cfg.missing_rate > 0:
            reg[rng.random(n) < cfg.missing_rate] = None
        smoker = rng.choice(3, size=n, p=(0.55, 0.35, 0.10)).astype(float)
        has_dx = rng.random(n) < 0.15
        dx_offset = rng.integers(-3650, 3650, size=n)
        prior_dx = np.where(has_dx, assessment + dx_offset, np.datetime64("NaT", "D"))
        prevalent = rng.random(n) < 0.02
        back = rng.integers(1, 3650, size=n)
        outcome = np.where(prevalent, assessment - back, outcome)
        columns.update(region=reg, smoker=smoker, prior_dx_date=prior_dx)
        schema += [
            ColumnSpec("region", "categorical", _REGIONS),
            ColumnSpec("smoker", "ordinal", ("never", "former", "current")),
            ColumnSpec("prior_dx_date", "event_date"),
        ]

    table = CohortTable(tuple(schema), columns, assessment, outcome, censor)
    truth = {
        "true_log_hr": {name: float(b) for name, b in zip(names, beta)},
        "weibull_shape": float(cfg.weibull_shape),
        "weibull_scale": float(scale),
        "event_fraction": float(frac),
        "config": _config_echo(cfg),
    }
    return table, truth


def _config_echo(cfg):
    d = asdict(cfg)
    d["true_log_hr"] = list(d["true_log_hr"])
    return d


# --------------------------------------------------------------------------
# Derived flags


def derive_prior_flag(cohort, source_columns, name):
    """Append a 0/1 ordinal column that is 1 iff any of ``source_columns``
    holds a date strictly before the subject's assessment date."""
    existing = {c.name for c in cohort.schema}
    if name in existing or name in RESERVED:
        raise SchemaError(f"column {name!r} already exists")
    if not source_columns:
        raise SchemaError("derive_prior_flag needs at least one source column")
    flag = np.zeros(cohort.n, dtype=bool)
    for src in source_columns:
        if src not in existing:
            raise SchemaError(f"unknown column {src!r}")
        if cohort.spec(src).kind != "event_date":
            raise SchemaError(f"column {src!r} is not an event_date column")
        d = cohort.columns[src]
        flag |= ~np.isnat(d) & (d < cohort.assessment_date)
    cols = dict(cohort.columns)
    cols[name] = flag.astype(float)
    schema = cohort.schema + (ColumnSpec(name, "ordinal", ("0", "1")),)
    return CohortTable(schema, cols, cohort.assessment_date, cohort.outcome_date, cohort.censor_date)


# --------------------------------------------------------------------------
# Preprocessing


@dataclass(frozen=True)
class SurvivalOutcome:
    """Right-censored outcomes as parallel arrays (duration in years)."""

    duration: np.ndarray
    event: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.duration, dtype=float)
        e = np.asarray(self.event, dtype=bool)
        if d.ndim != 1 or d.shape != e.shape:
            raise SchemaError("duration and event must be 1-d arrays of equal length")
        if not (np.all(np.isfinite(d)) and np.all(d > 0)):
            raise SchemaError("durations must be finite and positive")
        object.__setattr__(self, "duration", d)
        object.__setattr__(self, "event", e)

    def __len__(self):
        return self.duration.size

    @property
    def n_events(self):
        return int(self.event.sum())

    def subset(self, idx):
        return SurvivalOutcome(self.duration[idx], self.event[idx])


@dataclass(frozen=True)
class FeatureMatrix:
    """Dense standardized design matrix.

    ``scaling`` maps every column to ``(mean, sd)``; one-hot columns carry
    ``(0.0, 1.0)``.  ``groups`` maps each categorical source column to its
    one-hot column names.
    """

    values: np.ndarray
    column_names: tuple[str, ...]
    scaling: dict
    groups: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[1] != len(self.column_names):
            raise SchemaError("values must be n x d with one name per column")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "column_names", tuple(self.column_names))

    @property
    def shape(self):
        return self.values.shape

    def subset(self, idx):
        return FeatureMatrix(self.values[idx], self.column_names, self.scaling, self.groups)

    def select(self, names):
        names = list(names)
        pos = {c: i for i, c in enumerate(self.column_names)}
        unknown = [c for c in names if c not in pos]
        if unknown:
            raise SchemaError(f"unknown feature columns: {unknown}")
        keep = set(names)
        groups = {g: tuple(c for c in cols if c in keep) for g, cols in self.groups.items()}
        groups = {g: cols for g, cols in groups.items() if cols}
        return FeatureMatrix(
            self.values[:, [pos[c] for c in names]], names, {c: self.scaling[c] for c in names}, groups
        )


@dataclass
class PreprocessReport:
    rows_in: int = 0
    rows_out: int = 0
    rows_excluded_missing: int = 0
    rows_excluded_prior_outcome: int = 0
    rows_excluded_invalid_duration: int = 0
    columns_dropped_rare: list = field(default_factory=list)
    columns_dropped_constant: list = field(default_factory=list)
    derived_columns: list = field(default_factory=list)

    def to_json(self):
        return asdict(self)


def outcome_from_dates(assessment, outcome, censor):
    """Durations (years, day count / 365.25) and event flags.

    An outcome on or before the censor date counts as an event.  Returns
    ``(duration, event, prior)`` with ``prior`` marking outcomes strictly
    before assessment.
    """
    has_outcome = ~np.isnat(outcome)
    event = has_outcome & (outcome <= censor)
    end = np.where(event, outcome, censor)
    days = (end - assessment).astype(np.int64)
    prior = has_outcome & (outcome < assessment)
    return days / DAYS_PER_YEAR, event, prior


def preprocess(cohort, rare_threshold=0.001):
    """Turn a cohort into ``(FeatureMatrix, SurvivalOutcome, PreprocessReport)``.

    Order of operations: drop subjects with the outcome before assessment
    (or a non-positive duration), one-hot encode categoricals with an
    explicit ``missing`` category, drop one-hot columns rarer than
    ``rare_threshold``, drop rows with missing continuous/ordinal cells,
    then standardize continuous/ordinal columns (sample sd).  Event-date
    columns are not features.
    """
    if cohort.n == 0:
        raise EmptyCohortError("cohort has no rows")
    report = PreprocessReport(rows_in=cohort.n)
    report.derived_columns = [c.name for c in cohort.schema if c.kind == "ordinal" and c.categories == ("0", "1")]

    duration, event, prior = outcome_from_dates(cohort.assessment_date, cohort.outcome_date, cohort.censor_date)
    invalid = ~prior & ~(duration > 0)
    keep = ~prior & ~invalid
    report.rows_excluded_prior_outcome = int(prior.sum())
    report.rows_excluded_invalid_duration = int(invalid.sum())
    rows = np.flatnonzero(keep)

    blocks, names, scaling, groups = [], [], {}, {}
    numeric = []
    for spec in cohort.schema:
        vals = cohort.columns[spec.name][rows]
        if spec.kind in ("continuous", "ordinal"):
            numeric.append(len(names))
            blocks.append(vals.astype(float)[:, None])
            names.append(spec.name)
        elif spec.kind == "categorical":
            labels = list(spec.categories) + [MISSING_LABEL]
            coded = np.array([MISSING_LABEL if v is None else v for v in vals], dtype=object)
            kept = []
            for lab in labels:
                col = (coded == lab).astype(float)
                freq = float(col.mean()) if col.size else 0.0
                cname = f"{spec.name}={lab}"
                if freq < rare_threshold:
                    report.columns_dropped_rare.append([spec.name, lab, freq])
                    continue
                blocks.append(col[:, None])
                names.append(cname)
                scaling[cname] = (0.0, 1.0)
                kept.append(cname)
            if kept:
                groups[spec.name] = tuple(kept)

    values = np.hstack(blocks) if blocks else np.zeros((rows.size, 0))
    miss = np.isnan(values[:, numeric]).any(axis=1) if numeric else np.zeros(rows.size, dtype=bool)
    report.rows_excluded_missing = int(miss.sum())
    values = values[~miss]
    rows = rows[~miss]
    if rows.size == 0:
        raise EmptyCohortError("all rows excluded")

    for j in numeric:
        col = values[:, j]
        sd = float(np.std(col, ddof=1)) if col.size > 1 else 0.0
        if not sd > 0:
            raise DegenerateColumnError(names[j])
        mu = float(np.mean(col))
        values[:, j] = (col - mu) / sd
        scaling[names[j]] = (mu, sd)

    onehot = [j for j in range(len(names)) if j not in set(numeric)]
    constant = [j for j in onehot if np.all(values[:, j] == values[0, j])]
    if constant:
        report.columns_dropped_constant = [names[j] for j in constant]
        keepcols = [j for j in range(len(names)) if j not in set(constant)]
        values = values[:, keepcols]
        dropped = set(report.columns_dropped_constant)
        names = [names[j] for j in keepcols]
        groups = {g: tuple(c for c in cols if c not in dropped) for g, cols in groups.items()}
        groups = {g: cols for g, cols in groups.items() if cols}
        for c in dropped:
            scaling.pop(c, None)
    if not names:
        raise EmptyCohortError("no feature columns left after preprocessing")

    report.rows_out = int(rows.size)
    X = FeatureMatrix(values, tuple(names), {c: scaling[c] for c in names}, groups)
    y = SurvivalOutcome(duration[rows], event[rows])
    return X, y, report


def apply_scaling(raw, column_names, scaling):
    """Standardize raw feature rows (``n x d`` or ``d``) with stored scaling."""
    raw = np.asarray(raw, dtype=float)
    mu = np.array([scaling[c][0] for c in column_names])
    sd = np.array([scaling[c][1] for c in column_names])
    return (raw - mu) / sd


# --------------------------------------------------------------------------
# Splitting


@dataclass(frozen=True)
class SplitIndices:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray

    def to_json(self):
        return {k: getattr(self, k).tolist() for k in ("train", "validation", "test")}


def _largest_remainder(total, sizes):
    """Split ``total`` items across parts proportionally to ``sizes`` so each
    part is within one item of its ideal share.  Ties go to earlier parts."""
    n = sum(sizes)
    ideal = [total * s / n for s in sizes]
    base = [math.floor(x) for x in ideal]
    left = total - sum(base)
    order = sorted(range(len(sizes)), key=lambda i: (-(ideal[i] - base[i]), i))
    for i in order[:left]:
        base[i] += 1
    return base


def stratified_split(outcome, test_fraction=0.25, validation_fraction=0.25, seed=0):
    """Event-stratified train/validation/test split.

    The test set is ``floor(test_fraction * n)`` rows; validation is
    ``floor(validation_fraction * remainder)`` rows; train gets the rest.
    Events are allocated by largest remainder so each split is within one
    event of its proportional share.
    """
    n = len(outcome)
    if n < 8:
        raise StratificationError(f"need at least 8 subjects, got {n}")
    if not (0 < test_fraction < 1 and 0 < validation_fraction < 1):
        raise StratificationError("fractions must lie in (0, 1)")
    n_test = math.floor(test_fraction * n)
    n_val = math.floor(validation_fraction * (n - n_test))
    sizes = [n_test, n_val, n - n_test - n_val]
    if min(sizes) == 0:
        raise StratificationError(f"split sizes {sizes} leave an empty partition")
    ev = np.flatnonzero(outcome.event)
    ne = np.flatnonzero(~outcome.event)
    ev_alloc = _largest_remainder(ev.size, sizes)
    ne_alloc = [s - e for s, e in zip(sizes, ev_alloc)]
    if min(ev_alloc) == 0 or min(ne_alloc) <= 0:
        raise StratificationError(
            f"class too small to appear in every split (events per split {ev_alloc}, non-events {ne_alloc})"
        )
    rng = np.random.default_rng(seed)
    ev = rng.permutation(ev)
    ne = rng.permutation(ne)
    parts = []
    e0 = c0 = 0
    for e_k, c_k in zip(ev_alloc, ne_alloc):
        parts.append(np.sort(np.concatenate([ev[e0 : e0 + e_k], ne[c0 : c0 + c_k]])))
        e0 += e_k
        c0 += c_k
    test, val, train = parts
    return SplitIndices(train=train, validation=val, test=test)
