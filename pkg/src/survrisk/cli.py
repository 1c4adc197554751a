"""Command-line pipeline.

    survrisk synth      --out DIR [--n N] [--seed S] [--prevalence P]
    survrisk train      --cohort CSV --schema JSON --out DIR [--final]
    survrisk select     --cohort CSV --schema JSON --out DIR
    survrisk tune       --cohort CSV --schema JSON --out DIR [--budget B]
    survrisk train-nn   --cohort CSV --schema JSON --out DIR [--final]
    survrisk calibrate  --cohort CSV --schema JSON --model JSON --out DIR
    survrisk evaluate   --cohort CSV --schema JSON --model JSON --out DIR
    survrisk score      --model JSON --features JSON

Every command also takes ``--config run.json``; explicit flags override
values from the file.  Exit codes: 0 success, 2 input/config error, 3
model/numeric failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import (
    SynthConfig,
    derive_prior_flag,
    generate_synthetic,
    load_cohort,
    load_schema,
    preprocess,
    save_cohort,
    schema_to_json,
    stratified_split,
)
from .coxph import CoxFitConfig, CoxModel, fit, predict_risk, risk_from_scores, wald_stats
from .errors import ConfigError, ExtrapolationError, ModelError, SchemaError, UserError
from .metrics import calibration, concordance_ci
from .neural import MlpSpec, MlpSurvModel, attach_baseline, lr_range_estimate, predict_scores, train, train_fixed_epochs
from .selection import backward_eliminate, replay, univariate_screen
from .tuning import SearchSpace, best_trial, default_space, load_history, search

log = logging.getLogger("survrisk")

EXIT_OK, EXIT_USER, EXIT_MODEL = 0, 2, 3


@dataclass
class RunConfig:
    cohort: str | None = None
    schema: str | None = None
    out: str = "run"
    seed: int = 0
    test_fraction: float = 0.25
    validation_fraction: float = 0.25
    rare_threshold: float = 0.001
    prior_flags: dict = field(default_factory=dict)
    cox: dict = field(default_factory=dict)
    alpha: float = 0.1
    drop_tolerance: float = 0.001
    space: dict | None = None
    budget: int = 200
    k: int = 3
    horizon: float = 10.0
    n_bins: int = 10
    bootstrap_rounds: int = 50
    workers: int = 1
    final: bool = False
    features: str | None = None
    model: str | None = None
    spec: str | None = None
    estimate_lr: bool = False
    # synth
    n: int = 5000
    log_hr: list = field(default_factory=lambda: [0.8, -0.5, 0.3, 0.0, 0.0])
    prevalence: float = 0.0323
    missing_rate: float = 0.01
    extra_columns: bool = True

    def validate(self):
        for name in ("test_fraction", "validation_fraction"):
            v = getattr(self, name)
            if not 0 < v < 1:
                raise ConfigError(f"{name} must lie in (0, 1), got {v}")
        if self.bootstrap_rounds < 1 or self.k < 2 or self.budget < 1 or self.workers < 1:
            raise ConfigError("bootstrap_rounds >= 1, k >= 2, budget >= 1 and workers >= 1 required")
        return self

    def echo(self):
        d = asdict(self)
        d.pop("out")
        return d


def load_config(args):
    cfg = RunConfig()
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        known = {f.name for f in fields(RunConfig)}
        unknown = sorted(set(doc) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        for k, v in doc.items():
            setattr(cfg, k, v)
    for f in fields(RunConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            setattr(cfg, f.name, v)
    return cfg.validate()


# --------------------------------------------------------------------------
# shared helpers


def _write_json(path, obj):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _read_json(path, what):
    try:
        return json.loads(Path(path).read_text())
    except OSError as exc:
        raise UserError(f"cannot read {what} {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise UserError(f"malformed {what} {path}: {exc}") from exc


def _outdir(cfg):
    out = Path(cfg.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UserError(f"cannot create output directory {out}: {exc}") from exc
    return out


class _Data:
    pass


def prepare(cfg):
    """Load, derive flags, preprocess and split according to ``cfg``."""
    if not cfg.cohort or not cfg.schema:
        raise ConfigError("--cohort and --schema are required")
    schema = load_schema(cfg.schema)
    table = load_cohort(cfg.cohort, schema)
    for name, sources in sorted(cfg.prior_flags.items()):
        table = derive_prior_flag(table, list(sources), name)
    d = _Data()
    d.X, d.y, d.report = preprocess(table, cfg.rare_threshold)
    if cfg.features:
        names = _read_json(cfg.features, "feature list")
        names = names["features"] if isinstance(names, dict) else names
        d.X = d.X.select(names)
    d.split = stratified_split(d.y, cfg.test_fraction, cfg.validation_fraction, cfg.seed)
    d.fit_rows = np.sort(np.concatenate([d.split.train, d.split.validation])) if cfg.final else d.split.train
    return d


def _part(d, idx):
    return d.X.subset(idx), d.y.subset(idx)


def _ci(scores, y, cfg):
    return concordance_ci(scores, y, rounds=cfg.bootstrap_rounds, seed=cfg.seed, workers=cfg.workers).to_json()


def _cox_cfg(cfg):
    return CoxFitConfig(**cfg.cox)


def _fit_checked(X, y, cfg):
    model = fit(X, y, _cox_cfg(cfg))
    if not model.converged:
        raise ModelError("Cox fit did not converge")
    return model


def _artifact(model_json, cfg, extra=None):
    doc = dict(model_json)
    doc.update(version=__version__, run_config=cfg.echo())
    if extra:
        doc.update(extra)
    return doc


def load_model(path):
    doc = _read_json(path, "model")
    kind = doc.get("kind")
    if kind == "cox":
        return CoxModel.from_json(doc), doc
    if kind == "mlp":
        return MlpSurvModel.from_json(doc), doc
    raise SchemaError(f"{path}: unknown model kind {kind!r}")


def _inherit_flags(cfg, doc):
    """Derived flags recorded with the model apply unless overridden."""
    recorded = doc.get("run_config", {}).get("prior_flags", {})
    cfg.prior_flags = dict(recorded, **cfg.prior_flags)


def _check_schema(model, X):
    missing = [c for c in model.column_names if c not in X.column_names]
    if missing:
        raise SchemaError(f"model features missing from the cohort: {missing}")
    for c in model.column_names:
        a, b = np.asarray(model.scaling[c], dtype=float), np.asarray(X.scaling[c], dtype=float)
        if not np.allclose(a, b, rtol=1e-9, atol=1e-12):
            raise SchemaError(f"feature {c!r} was scaled differently when the model was trained")
    return X.select(model.column_names)


# --------------------------------------------------------------------------
# commands


def cmd_synth(cfg):
    out = _outdir(cfg)
    sc = SynthConfig(
        n_subjects=int(cfg.n),
        true_log_hr=tuple(float(b) for b in cfg.log_hr),
        target_prevalence=float(cfg.prevalence),
        missing_rate=float(cfg.missing_rate),
        extra_columns=bool(cfg.extra_columns),
        seed=int(cfg.seed),
    )
    table, truth = generate_synthetic(sc)
    try:
        save_cohort(table, out / "cohort.csv")
        _write_json(out / "schema.json", schema_to_json(table.schema))
        _write_json(out / "ground_truth.json", dict(truth, version=__version__))
    except OSError as exc:
        raise UserError(f"cannot write outputs: {exc}") from exc
    print(f"wrote {table.n} subjects ({truth['event_fraction']:.4f} events) to {out}")


def cmd_train(cfg):
    out = _outdir(cfg)
    d = prepare(cfg)
    Xf, yf = _part(d, d.fit_rows)
    model = _fit_checked(Xf, yf, cfg)
    metrics = {
        "version": __version__,
        "final": cfg.final,
        "n_features": len(model.column_names),
        "n_train_rows": int(d.fit_rows.size),
        "n_validation_rows": int(d.split.validation.size),
        "n_test_rows": int(d.split.test.size),
        "c_train": _ci(model.linear_predictor(Xf), yf, cfg),
        "wald": wald_stats(model).to_rows(),
    }
    if not cfg.final:
        Xv, yv = _part(d, d.split.validation)
        metrics["c_validation"] = _ci(model.linear_predictor(Xv), yv, cfg)
    Xt, yt = _part(d, d.split.test)
    metrics["c_test"] = _ci(model.linear_predictor(Xt), yt, cfg)
    metrics["c_index"] = metrics["c_test"]["point"]
    _write_json(out / "model.json", _artifact(model.to_json(), cfg, {"training_rows": _rows_label(cfg)}))
    _write_json(out / "metrics.json", metrics)
    _write_json(out / "preprocess_report.json", d.report.to_json())
    c = metrics["c_test"]
    print(f"test C-index {c['point']:.4f} [{c['low']:.4f}, {c['high']:.4f}]")


def _rows_label(cfg):
    return "train+validation" if cfg.final else "train"


def cmd_select(cfg):
    out = _outdir(cfg)
    d = prepare(cfg)
    Xtr, ytr = _part(d, d.split.train)
    Xv, yv = _part(d, d.split.validation)
    Xt, yt = _part(d, d.split.test)
    baseline = _fit_checked(Xtr, ytr, cfg)
    screen = univariate_screen(Xtr, ytr, alpha=cfg.alpha, cfg=_cox_cfg(cfg))
    trace = backward_eliminate(
        Xtr.select(screen.kept), ytr, Xv.select(screen.kept), yv, drop_tolerance=cfg.drop_tolerance, cfg=_cox_cfg(cfg)
    )
    replay_c = replay(trace, Xtr, ytr, Xv, yv, _cox_cfg(cfg))
    rows = np.sort(np.concatenate([d.split.train, d.split.validation]))
    Xtv, ytv = _part(d, rows)
    Xtv = Xtv.select(trace.surviving_features)
    reduced = _fit_checked(Xtv, ytv, cfg)
    table = {
        "features_before": len(baseline.column_names),
        "c_before": _ci(baseline.linear_predictor(Xv), yv, cfg),
        "c_before_train": _ci(baseline.linear_predictor(Xtr), ytr, cfg),
        "features_after": len(reduced.column_names),
        "c_after": _ci(reduced.linear_predictor(Xt.select(reduced.column_names)), yt, cfg),
        "c_after_train_validation": _ci(reduced.linear_predictor(Xtv), ytv, cfg),
    }
    trace_doc = dict(trace.to_json(), screen_dropped=[[f, _nan_none(p)] for f, p in screen.dropped], replay_c=replay_c)
    _write_json(out / "trace.json", trace_doc)
    _write_json(out / "reduced_features.json", {"features": trace.surviving_features})
    _write_json(out / "reduced_model.json", _artifact(reduced.to_json(), cfg, {"training_rows": "train+validation"}))
    _write_json(out / "selection_table.json", dict(table, version=__version__))
    cols = ["features_before", "c_before", "features_after", "c_after"]
    lines = [",".join(cols + ["c_before_low", "c_before_high", "c_after_low", "c_after_high"])]
    lines.append(
        ",".join(
            [
                str(table["features_before"]),
                repr(table["c_before"]["point"]),
                str(table["features_after"]),
                repr(table["c_after"]["point"]),
                repr(table["c_before"]["low"]),
                repr(table["c_before"]["high"]),
                repr(table["c_after"]["low"]),
                repr(table["c_after"]["high"]),
            ]
        )
    )
    (out / "selection_table.csv").write_text("\n".join(lines) + "\n")
    print(trace.render())
    print(
        f"features {table['features_before']} -> {table['features_after']}; "
        f"validation C {table['c_before']['point']:.4f}; reduced test C {table['c_after']['point']:.4f}"
    )


def _nan_none(v):
    return None if v is None or (isinstance(v, float) and math.isnan(v)) else v


def _space(cfg):
    return SearchSpace.from_json(cfg.space) if cfg.space else default_space()


def cmd_tune(cfg):
    out = _outdir(cfg)
    d = prepare(cfg)
    Xtr, ytr = _part(d, d.split.train)
    hist_path = out / "history.jsonl"
    space = _space(cfg)
    best, trials = search(space, cfg.budget, Xtr, ytr, k=cfg.k, seed=cfg.seed, history_path=hist_path)
    _write_json(out / "best_trial.json", dict(best.to_json(), version=__version__, run_config=cfg.echo()))
    print(f"{len(trials)} trials; best #{best.trial_id} mean C {best.mean_c:.4f}")


def _best_spec(cfg, out):
    if cfg.spec:
        doc = _read_json(cfg.spec, "spec")
        if not isinstance(doc, dict):
            raise ConfigError(f"{cfg.spec} must hold a JSON object")
        return MlpSpec(**doc.get("spec", doc))
    hist = load_history(out / "history.jsonl")
    best = best_trial(hist)
    if best is None:
        raise ConfigError(f"no successful trial in {out / 'history.jsonl'}; run `tune` first or pass --spec")
    return MlpSpec(**best.spec)


def cmd_train_nn(cfg):
    out = _outdir(cfg)
    d = prepare(cfg)
    spec = _best_spec(cfg, out)
    Xtr, ytr = _part(d, d.split.train)
    Xv, yv = _part(d, d.split.validation)
    Xt, yt = _part(d, d.split.test)
    if cfg.estimate_lr:
        grid = np.geomspace(1e-4, 1e-1, 7)
        spec.learning_rate = float(lr_range_estimate(Xtr, ytr, spec, grid, seed=cfg.seed))
    model = train(Xtr, ytr, Xv, yv, spec, seed=cfg.seed)
    if cfg.final:
        Xf, yf = _part(d, d.fit_rows)
        model = train_fixed_epochs(Xf, yf, spec, max(1, model.best_epoch), seed=cfg.seed)
    metrics = {
        "version": __version__,
        "final": cfg.final,
        "n_features": model.n_features,
        "n_train_rows": int(d.fit_rows.size),
        "best_epoch": model.best_epoch,
        "spec": spec.to_json(),
        "c_test": _ci(predict_scores(model, Xt), yt, cfg),
    }
    metrics["c_index"] = metrics["c_test"]["point"]
    _write_json(out / "nn_model.json", _artifact(model.to_json(), cfg, {"training_rows": _rows_label(cfg)}))
    _write_json(out / "nn_metrics.json", metrics)
    c = metrics["c_test"]
    print(f"neural test C-index {c['point']:.4f} [{c['low']:.4f}, {c['high']:.4f}]")


def _trained_on_train_val(doc):
    return doc.get("training_rows", "train") == "train+validation"


def cmd_calibrate(cfg):
    out = _outdir(cfg)
    if not cfg.model:
        raise ConfigError("--model is required")
    model, doc = load_model(cfg.model)
    _inherit_flags(cfg, doc)
    d = prepare(cfg)
    X = _check_schema(model, d.X)
    Xt, yt = X.subset(d.split.test), d.y.subset(d.split.test)
    if cfg.horizon > yt.duration.max():
        raise ExtrapolationError(f"horizon {cfg.horizon} beyond test follow-up {yt.duration.max():.3f}")
    if isinstance(model, CoxModel):
        risk = predict_risk(model, Xt.values, cfg.horizon, scaled=True)
    else:
        rows = d.split.train
        if _trained_on_train_val(doc):
            rows = np.sort(np.concatenate([d.split.train, d.split.validation]))
        base = attach_baseline(model, X.subset(rows), d.y.subset(rows))
        if cfg.horizon > d.y.subset(rows).duration.max():
            raise ExtrapolationError("horizon beyond training follow-up")
        risk = risk_from_scores(base(cfg.horizon), predict_scores(model, Xt))
    report = calibration(risk, yt, horizon=cfg.horizon, n_bins=cfg.n_bins)
    _write_json(out / "calibration.json", dict(report.to_json(), version=__version__, run_config=cfg.echo()))
    (out / "calibration.csv").write_text(report.to_csv())
    print(
        f"{cfg.horizon:g}-year mean predicted risk {100 * report.mean_predicted_overall:.2f}%, "
        f"observed {100 * report.mean_observed_overall:.2f}%, ICI {100 * report.ici:.3f}%"
    )


def cmd_evaluate(cfg):
    out = _outdir(cfg)
    if not cfg.model:
        raise ConfigError("--model is required")
    model, doc = load_model(cfg.model)
    _inherit_flags(cfg, doc)
    d = prepare(cfg)
    X = _check_schema(model, d.X)
    result = {"version": __version__, "model": cfg.model}
    for part in ("validation", "test"):
        idx = getattr(d.split, part)
        Xp, yp = X.subset(idx), d.y.subset(idx)
        scores = model.linear_predictor(Xp) if isinstance(model, CoxModel) else predict_scores(model, Xp)
        result[f"c_{part}"] = _ci(scores, yp, cfg)
    _write_json(out / "evaluation.json", result)
    for part in ("validation", "test"):
        c = result[f"c_{part}"]
        print(f"{part:>10} C-index {c['point']:.4f} [{c['low']:.4f}, {c['high']:.4f}]")


def cmd_score(args):
    if not args.model or not args.features:
        raise ConfigError("--model and --features are required")
    model, _ = load_model(args.model)
    if not isinstance(model, CoxModel):
        raise ConfigError("score needs a Cox model artifact")
    feats = _read_json(args.features, "feature file")
    if not isinstance(feats, dict):
        raise UserError("feature file must hold a JSON object")
    missing = [c for c in model.column_names if c not in feats]
    if missing:
        raise UserError(f"missing features: {', '.join(missing)}")
    try:
        x = np.array([float(feats[c]) for c in model.column_names])
    except (TypeError, ValueError) as exc:
        raise UserError(f"non-numeric feature value: {exc}") from exc
    horizon = args.horizon if args.horizon is not None else 10.0
    print(f"{predict_risk(model, x, horizon):.6f}")


# --------------------------------------------------------------------------
# argument parsing


def _common(p, data=True):
    p.add_argument("--config", help="JSON run configuration; flags override it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int, help="threads for bootstrap rounds")
    p.add_argument("-v", "--verbose", action="store_true")
    if data:
        p.add_argument("--cohort", help="cohort CSV")
        p.add_argument("--schema", help="schema JSON")
        p.add_argument("--test-fraction", dest="test_fraction", type=float)
        p.add_argument("--validation-fraction", dest="validation_fraction", type=float)
        p.add_argument("--rare-threshold", dest="rare_threshold", type=float)
        p.add_argument("--bootstrap-rounds", dest="bootstrap_rounds", type=int)
        p.add_argument("--features", help="JSON list of features to restrict to")
        p.add_argument(
            "--prior-flag",
            dest="prior_flag",
            action="append",
            metavar="NAME=COL[,COL...]",
            help="derive a 0/1 flag from event-date columns before assessment",
        )


def build_parser():
    parser = argparse.ArgumentParser(prog="survrisk", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="write a synthetic cohort")
    _common(p, data=False)
    p.add_argument("--n", type=int)
    p.add_argument("--prevalence", type=float)
    p.add_argument("--missing-rate", dest="missing_rate", type=float)
    p.add_argument("--log-hr", dest="log_hr", type=lambda s: [float(v) for v in s.split(",")])
    p.add_argument("--no-extra-columns", dest="extra_columns", action="store_false", default=None)

    p = sub.add_parser("train", help="fit and evaluate a Cox model")
    _common(p)
    p.add_argument("--final", action="store_true", default=None, help="train on train + validation")
    p.add_argument("--ties", choices=("efron", "breslow"))

    p = sub.add_parser("select", help="univariate screen + backward elimination")
    _common(p)
    p.add_argument("--alpha", type=float)
    p.add_argument("--drop-tolerance", dest="drop_tolerance", type=float)
    p.add_argument("--ties", choices=("efron", "breslow"))

    p = sub.add_parser("tune", help="TPE search over neural Cox hyperparameters")
    _common(p)
    p.add_argument("--budget", type=int)
    p.add_argument("--k", type=int)

    p = sub.add_parser("train-nn", help="train the neural Cox model")
    _common(p)
    p.add_argument("--final", action="store_true", default=None)
    p.add_argument("--spec", help="MlpSpec JSON (default: best trial in OUT/history.jsonl)")
    p.add_argument("--estimate-lr", dest="estimate_lr", action="store_true", default=None)

    for name, helptext in (("calibrate", "horizon calibration report"), ("evaluate", "concordance of a saved model")):
        p = sub.add_parser(name, help=helptext)
        _common(p)
        p.add_argument("--model", required=False)
        p.add_argument("--horizon", type=float)
        p.add_argument("--n-bins", dest="n_bins", type=int)

    p = sub.add_parser("score", help="horizon risk for one subject")
    p.add_argument("--model")
    p.add_argument("--features", help="JSON object of raw feature values")
    p.add_argument("--horizon", type=float)
    p.add_argument("-v", "--verbose", action="store_true")
    return parser


COMMANDS = {
    "synth": cmd_synth,
    "train": cmd_train,
    "select": cmd_select,
    "tune": cmd_tune,
    "train-nn": cmd_train_nn,
    "calibrate": cmd_calibrate,
    "evaluate": cmd_evaluate,
}


def _apply_extras(args, cfg):
    flags = getattr(args, "prior_flag", None)
    if flags:
        for item in flags:
            name, _, cols = item.partition("=")
            if not name or not cols:
                raise ConfigError(f"--prior-flag expects NAME=COL[,COL...], got {item!r}")
            cfg.prior_flags[name] = cols.split(",")
    ties = getattr(args, "ties", None)
    if ties:
        cfg.cox = dict(cfg.cox, ties=ties)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        if args.command == "score":
            cmd_score(args)
            return EXIT_OK
        cfg = load_config(args)
        _apply_extras(args, cfg)
        COMMANDS[args.command](cfg)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except ModelError as exc:
        print(f"model failure: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
