"""Command-line front end.

Subcommands: doe | train | predict | cv | optimize | benchmark.  Every
command is deterministic given its config file; all randomness is seeded
from config keys.  Exit codes: 0 success, 1 usage or config error,
2 partial failure (some evaluations failed but results were written).

Output files carry header comments with the tool version and a config hash;
the ``# generated`` timestamp line is informational and excluded from
reproducibility comparisons.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import __version__, aggregation, gek, kriging, model_io
from .aggregation import AggregationModel
from .config import ConfigError, RunConfig, parse_config
from .design_space import lhs_sample
from .ego import EgoConfig, Problem, _ingest, run_ego
from .evaluator import (
    BuiltinEvaluator,
    ExternalEvaluator,
    NoiseSpec,
    UnknownFunctionError,
    resolve_workdir,
    with_noise,
)
from .gek import GekModel
from .kriging import KrigingModel, TrainConfig
from .sample_store import (
    STATUS_FAILED,
    SampleSet,
    format_float,
    load_csv,
    save_csv,
    split_folds,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARTIAL = 2

BENCHMARK_MODELS = ("kriging", "gek-direct", "aggregation")


def _header_comments(config_hash: str) -> list[str]:
    return [
        f"gradboost {__version__}",
        f"config {config_hash}",
        f"generated {datetime.now(timezone.utc).isoformat()}",
    ]


def _write_csv(path: Path, comments: list[str], header: list[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for c in comments:
            fh.write(f"# {c}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def _make_evaluator(cfg: RunConfig, out_dir: Path):
    spec = cfg.evaluator_spec
    if not spec:
        raise ConfigError("this command requires an 'evaluator' config key")
    if spec.startswith("builtin:"):
        return BuiltinEvaluator(spec[len("builtin:"):], cfg.constraint)
    if spec.startswith("external:"):
        workdir = resolve_workdir(cfg.workdir if cfg.workdir else out_dir / "runs")
        ev = ExternalEvaluator(spec[len("external:"):], workdir, cfg.eval_timeout)
        ev.m = -1  # constraint count discovered from the first result
        return ev
    raise ConfigError(
        f"evaluator must start with 'builtin:' or 'external:', got {spec!r}"
    )


def _noise_spec(cfg: RunConfig) -> NoiseSpec | None:
    if cfg.noise_level == 0.0 and cfg.drop_rate == 0.0:
        return None
    return NoiseSpec(cfg.noise_level, cfg.drop_rate, cfg.seed_noise)


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(
        seed=cfg.seed_train,
        gamma=cfg.gamma,
        optimize_gamma=cfg.optimize_gamma,
        n_starts=cfg.n_starts,
    )


# -- doe ----------------------------------------------------------------------


def cmd_doe(args) -> int:
    cfg = parse_config(args.config, args.seed_override)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.n_doe is None:
        raise ConfigError("doe requires the 'n_doe' config key")
    evaluator = _make_evaluator(cfg, out_dir)
    noise = _noise_spec(cfg)

    U = lhs_sample(cfg.space, cfg.n_doe, cfg.seed_doe)
    X_raw = cfg.space.denormalize(U)
    results = []
    for i, x in enumerate(X_raw):
        r = evaluator(x, i)
        if noise is not None:
            r = with_noise(r, noise, i)
        results.append(r)

    m = getattr(evaluator, "m", 0)
    if m < 0:  # external: take the first non-failed result's constraint count
        m = next((r.constraints.size for r in results if r.status != STATUS_FAILED), 0)
    data = SampleSet(cfg.space, m)
    n_failed = 0
    for x, r in zip(X_raw, results):
        sample = _ingest(data, cfg.space, x, r, "doe")
        n_failed += sample.status == STATUS_FAILED

    path = out_dir / "samples.csv"
    save_csv(data, path, _header_comments(cfg.config_hash))
    print(f"wrote {path} ({len(data)} samples, {n_failed} failed)")
    return EXIT_PARTIAL if n_failed else EXIT_OK


# -- train ---------------------------------------------------------------------


def _train_model(cfg: RunConfig, data: SampleSet):
    """Train the configured model type; returns (model, report lines)."""
    tc = _train_config(cfg)
    lines = [f"model = {cfg.model}", f"samples = {data.n_valid} (with gradients: {data.n_grad})"]
    extra: dict = {}
    if cfg.model == "kriging":
        model = kriging.train(data, tc)
    elif cfg.model == "gek-direct":
        import warnings as _warnings

        with _warnings.catch_warnings(record=True) as caught:
            _warnings.simplefilter("always")
            model = gek.train_direct_gek(data, tc)
        for w in caught:
            lines.append(f"warning: {w.message}")
        if isinstance(model, KrigingModel):
            lines.append("fallback = kriging (no gradient samples)")
    elif cfg.model == "gek-indirect":
        augmented = gek.indirect_gek_augment(data, cfg.indirect_step)
        model = kriging.train(augmented, tc)
        lines.append(f"pseudo-samples = {len(augmented) - len(data)} (step {cfg.indirect_step})")
        extra = {"trained_as": "gek-indirect", "indirect_step": cfg.indirect_step}
    else:
        import warnings as _warnings

        with _warnings.catch_warnings(record=True) as caught:
            _warnings.simplefilter("always")
            model = aggregation.build_aggregation(
                data, tc, cfg.rho_grid(), cfg.cv_folds, cfg.seed_train
            )
        for w in caught:
            lines.append(f"warning: {w.message}")

    primal = model.primal if isinstance(model, AggregationModel) else model
    lines.append(f"theta = {np.array2string(primal.params.theta, precision=6)}")
    lines.append(f"gamma = {np.array2string(primal.params.gamma, precision=6)}")
    lines.append(f"beta0 = {primal.beta0:.12g}")
    lines.append(f"sigma2 = {primal.sigma2:.12g}")
    lines.append(f"nugget = {primal.nugget:.12g}")
    lines.append(f"log_likelihood = {primal.log_likelihood:.12g}")
    if isinstance(model, GekModel):
        lines.append(f"augmented_rows = {model.X.shape[0] + model.Xg.size}")
        lines.append(f"rcond = {model.rcond:.6g}")
    if isinstance(model, AggregationModel):
        lines.append(f"rho = {model.rho:.12g}")
        lines.append("cv table (rho, rmse):  [theta frozen from the full-data fit]")
        if model.cv_errors is not None:
            for rho, err in zip(model.rho_grid, model.cv_errors):
                lines.append(f"  {format_float(rho)}  {format_float(err)}")
        else:
            lines.append("  (no gradient samples: pure primal, alpha = 0)")
    return model, lines, extra


def cmd_train(args) -> int:
    cfg = parse_config(args.config, args.seed_override)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_csv(args.data, cfg.space)
    model, lines, extra = _train_model(cfg, data)
    model_path = out_dir / "model.json"
    model_io.save_model(model, model_path, cfg.config_hash, extra)
    report_path = out_dir / "fit_report.txt"
    comments = "".join(f"# {c}\n" for c in _header_comments(cfg.config_hash))
    report_path.write_text(comments + "\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {model_path} and {report_path}")
    return EXIT_OK


# -- predict -------------------------------------------------------------------


def _read_points(path, dim: int) -> np.ndarray:
    """Read normalized query points from a CSV with x1..xd columns."""
    with open(path, "r", newline="", encoding="utf-8") as fh:
        rows = [
            line for line in fh.read().splitlines() if line.strip() and not line.startswith("#")
        ]
    if not rows:
        raise ConfigError(f"points file {path} has no header row")
    reader = csv.reader(rows)
    header = next(reader)
    wanted = [f"x{k + 1}" for k in range(dim)]
    try:
        cols = [header.index(name) for name in wanted]
    except ValueError as exc:
        raise ConfigError(
            f"points file must provide columns {wanted}; got {header}"
        ) from exc
    pts = []
    for cells in reader:
        pts.append([float(cells[c]) for c in cols])
    return np.array(pts).reshape(-1, dim)


def cmd_predict(args) -> int:
    model = model_io.load_model(args.model)
    space = model.space if not isinstance(model, AggregationModel) else model.primal.space
    Q = _read_points(args.points, space.dim)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    config_hash = ""
    if args.config:
        config_hash = parse_config(args.config, args.seed_override).config_hash

    header = [f"x{k + 1}" for k in range(space.dim)]
    rows = []
    if isinstance(model, AggregationModel):
        header += ["mean", "alpha", "dual", "primal"]
        if Q.size:
            comps = model.components(Q)
            for i in range(Q.shape[0]):
                rows.append(
                    [format_float(v) for v in Q[i]]
                    + [
                        format_float(comps["mean"][i]),
                        format_float(comps["alpha"][i]),
                        format_float(comps["dual"][i]),
                        format_float(comps["primal"][i]),
                    ]
                )
    else:
        header += ["mean", "variance"]
        if Q.size:
            mu = np.atleast_1d(model.predict_mean(Q))
            var = np.atleast_1d(model.predict_variance(Q))
            for i in range(Q.shape[0]):
                rows.append(
                    [format_float(v) for v in Q[i]]
                    + [format_float(mu[i]), format_float(var[i])]
                )
    path = out_dir / "predictions.csv"
    _write_csv(path, _header_comments(config_hash), header, rows)
    print(f"wrote {path} ({len(rows)} predictions)")
    return EXIT_OK


# -- cv ------------------------------------------------------------------------


def _fold_rmse(data: SampleSet, folds, model_type: str, cfg: RunConfig) -> float:
    """Paired-fold CV RMSE with hyperparameters frozen from a full-data fit."""
    tc = _train_config(cfg)
    space = data.space
    import warnings as _warnings

    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore")
        if model_type == "kriging":
            full = kriging.train(data, tc)
        elif model_type == "gek-direct":
            full = gek.train_direct_gek(data, tc)
        elif model_type == "gek-indirect":
            full = kriging.train(gek.indirect_gek_augment(data, cfg.indirect_step), tc)
        else:
            full = aggregation.build_aggregation(
                data, tc, cfg.rho_grid(), cfg.cv_folds, cfg.seed_train
            )

    if model_type == "aggregation":
        terms = aggregation._fold_cv_terms(data, full.primal, len(folds), cfg.seed_train)
        y, p, dv, dist, gn, mask = terms
        a = np.where(mask, np.exp(-full.rho * dist * gn), 0.0)
        pred = a * dv + (1.0 - a) * p
        return float(np.sqrt(np.mean((pred - y) ** 2)))

    params = full.params
    sq_err = []
    for fold in folds:
        held = set(int(i) for i in fold)
        train_idx = [i for i in data.valid_indices() if i not in held]
        sub = data.subset(train_idx)
        Q = data.design_matrix(list(fold))
        yq = data.responses(list(fold))
        if model_type == "kriging":
            fm = kriging.fit(space, sub.design_matrix(), sub.responses(), params)
        elif model_type == "gek-direct":
            if sub.n_grad:
                fm = gek.fit_direct_gek(sub, params)
            else:
                fm = kriging.fit(space, sub.design_matrix(), sub.responses(), params)
        else:  # gek-indirect
            aug = gek.indirect_gek_augment(sub, cfg.indirect_step)
            fm = kriging.fit(space, aug.design_matrix(), aug.responses(), params)
        pred = np.atleast_1d(fm.predict_mean(Q))
        sq_err.append((pred - yq) ** 2)
    return float(np.sqrt(np.mean(np.concatenate(sq_err))))


def cmd_cv(args) -> int:
    cfg = parse_config(args.config, args.seed_override)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    data = load_csv(args.data, cfg.space)
    folds = split_folds(data, cfg.cv_folds, cfg.seed_train)
    rows = []
    for model_type in cfg.cv_models:
        rmse = _fold_rmse(data, folds, model_type, cfg)
        rows.append([model_type, str(cfg.cv_folds), str(cfg.seed_train), format_float(rmse)])
    path = out_dir / "cv_report.csv"
    _write_csv(path, _header_comments(cfg.config_hash), ["model", "k_folds", "seed", "rmse"], rows)
    print(f"wrote {path}")
    return EXIT_OK


# -- optimize --------------------------------------------------------------------


def _ego_config(cfg: RunConfig) -> EgoConfig:
    return EgoConfig(
        model=cfg.model,
        n_doe=cfg.n_doe,
        budget=cfg.budget,
        seed_doe=cfg.seed_doe,
        seed_train=cfg.seed_train,
        seed_acq=cfg.seed_acq,
        noise=_noise_spec(cfg),
        train=_train_config(cfg),
        k_folds=cfg.cv_folds,
        rho_grid=cfg.rho_grid(),
        penalty=cfg.penalty,
        workers=cfg.workers,
        acq_candidates=cfg.acq_candidates,
        indirect_step=cfg.indirect_step,
    )


def cmd_optimize(args) -> int:
    cfg = parse_config(args.config, args.seed_override)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.budget is None:
        raise ConfigError("optimize requires the 'budget' config key")
    evaluator = _make_evaluator(cfg, out_dir)
    m = getattr(evaluator, "m", 0)
    if m < 0:
        probe = evaluator(cfg.space.denormalize(np.full(cfg.space.dim, 0.5)), 0)
        if probe.status == STATUS_FAILED:
            raise ConfigError("external evaluator probe failed; cannot infer constraints")
        m = probe.constraints.size
    problem = Problem(cfg.space, evaluator, m)
    report = run_ego(problem, _ego_config(cfg))

    d = cfg.space.dim
    header = (
        ["index", "tag", "status"]
        + [f"x{k + 1}" for k in range(d)]
        + ["y"]
        + [f"c{j + 1}" for j in range(m)]
        + ["feasible", "best_so_far"]
    )
    rows = []
    for e in report.entries:
        rows.append(
            [str(e.index), e.tag, e.status]
            + [format_float(v) for v in e.x_raw]
            + [format_float(e.y) if e.y is not None else ""]
            + [format_float(c) for c in e.constraints]
            + ["1" if e.feasible else "0"]
            + [format_float(e.best_so_far) if e.best_so_far is not None else ""]
        )
    history_path = out_dir / "history.csv"
    _write_csv(history_path, _header_comments(cfg.config_hash), header, rows)

    lines = [
        f"model = {report.model_type}",
        f"budget = {report.budget}",
        f"n_doe = {report.n_doe}",
        f"evaluations = {report.evaluations_used}",
    ]
    n_failed = sum(e.status == STATUS_FAILED for e in report.entries)
    lines.append(f"failed_evaluations = {n_failed}")
    if report.best_y is not None:
        lines.append(f"best_objective = {format_float(report.best_y)}")
        lines.append(
            "best_design = " + ",".join(format_float(v) for v in report.best_x)
        )
        if m:
            lines.append(
                "best_constraints = "
                + ",".join(format_float(c) for c in report.best_constraints)
            )
    else:
        lines.append("best_objective = none (no feasible evaluation)")
    logger.info(
        "phase wall times: doe %.3fs, ego %.3fs", report.doe_seconds, report.ego_seconds
    )
    summary_path = out_dir / "summary.txt"
    comments = "".join(f"# {c}\n" for c in _header_comments(cfg.config_hash))
    summary_path.write_text(comments + "\n".join(lines) + "\n", encoding="utf-8")
    save_csv(report.samples, out_dir / "samples.csv", _header_comments(cfg.config_hash))
    print(f"wrote {history_path} and {summary_path}")
    return EXIT_PARTIAL if n_failed else EXIT_OK


# -- benchmark --------------------------------------------------------------------


def cmd_benchmark(args) -> int:
    cfg = parse_config(args.config, args.seed_override)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.n_doe is None:
        raise ConfigError("benchmark requires the 'n_doe' config key")
    evaluator = _make_evaluator(cfg, out_dir)

    # noise-free base data: primal values are never perturbed, so one DoE
    # evaluation serves every noise setting
    U = lhs_sample(cfg.space, cfg.n_doe, cfg.seed_doe)
    X_raw = cfg.space.denormalize(U)
    m = getattr(evaluator, "m", 0)
    results = [evaluator(x, i) for i, x in enumerate(X_raw)]
    if m < 0:
        m = next((r.constraints.size for r in results if r.status != STATUS_FAILED), 0)
    base = SampleSet(cfg.space, m)
    for x, r in zip(X_raw, results):
        _ingest(base, cfg.space, x, r, "doe")

    folds = split_folds(base, cfg.cv_folds, cfg.seed_train)
    seeds = [cfg.seed_noise] + [
        cfg.seed_noise + 1 + k for k in range(cfg.benchmark_extra_seeds)
    ]
    rows = []
    for level, drop in zip(cfg.benchmark_noise_levels, cfg.benchmark_drop_rates):
        for seed in seeds:
            noisy = _apply_noise_to_set(base, NoiseSpec(level, drop, seed))
            for model_type in BENCHMARK_MODELS:
                rmse = _fold_rmse(noisy, folds, model_type, cfg)
                rows.append(
                    [
                        "paired",
                        format_float(level),
                        format_float(drop),
                        str(seed),
                        model_type,
                        str(noisy.n_valid),
                        format_float(rmse),
                    ]
                )
    # sample-count trend at zero noise: kriging CV error versus data size
    for frac in (0.5, 0.75, 1.0):
        n_sub = max(cfg.cv_folds, int(round(frac * len(base))))
        sub = base.subset(range(n_sub))
        sub_folds = split_folds(sub, min(cfg.cv_folds, sub.n_valid), cfg.seed_train)
        rmse = _fold_rmse(sub, sub_folds, "kriging", cfg)
        rows.append(
            ["trend", "0", "0", str(cfg.seed_train), "kriging", str(n_sub), format_float(rmse)]
        )
    path = out_dir / "benchmark.csv"
    _write_csv(
        path,
        _header_comments(cfg.config_hash),
        ["kind", "noise_level", "drop_rate", "seed", "model", "n", "rmse"],
        rows,
    )
    print(f"wrote {path}")
    return EXIT_OK


def _apply_noise_to_set(base: SampleSet, spec: NoiseSpec) -> SampleSet:
    """Re-ingest a dataset with the noise model applied to its gradients."""
    from dataclasses import replace as dc_replace

    from .evaluator import EvalResult

    out = SampleSet(base.space, base.m)
    for i, s in enumerate(base):
        if s.grad is None:
            out.samples.append(s)
            continue
        r = EvalResult(s.y, s.constraints, s.grad, s.status)
        r = with_noise(r, spec, i)
        out.samples.append(
            dc_replace(
                s,
                grad=r.grad if r.grad is not None else None,
                status=r.status,
            )
        )
    return out


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradboost",
        description="Surrogate-based global optimization with gradient-aware models",
    )
    parser.add_argument("--version", action="version", version=f"gradboost {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument(
            "--config", required=config_required, help="path to a key=value config file"
        )
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument(
            "--seed-override",
            type=int,
            default=None,
            help="replace all config seeds with values derived from this one",
        )

    p = sub.add_parser("doe", help="generate and evaluate a Latin hypercube design")
    common(p)
    p.set_defaults(func=cmd_doe)

    p = sub.add_parser("train", help="train a surrogate model from a sample CSV")
    common(p)
    p.add_argument("data", help="sample CSV file")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict at points with a saved model")
    common(p, config_required=False)
    p.add_argument("model", help="model JSON file")
    p.add_argument("points", help="CSV with x1..xd columns (normalized coordinates)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="K-fold cross-validation over model types")
    common(p)
    p.add_argument("data", help="sample CSV file")
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("optimize", help="run the full EGO pipeline")
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("benchmark", help="paired CV across gradient-noise levels")
    common(p)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; remap to the documented code 1
        return EXIT_USAGE if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigError, UnknownFunctionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
