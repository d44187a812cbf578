"""Flat key-value run configuration.

The config file format is ``key = value`` with ``#`` comments, one pair per
line.  Every random seed must be given explicitly; nothing is seeded from
the clock.  A canonical FNV-1a hash over the parsed pairs is embedded in all
output files for provenance.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .design_space import ParameterSpace
from .ego import MODEL_TYPES


class ConfigError(ValueError):
    pass


def fnv1a_hash(pairs: dict[str, str]) -> str:
    """64-bit FNV-1a over canonicalized key=value lines, sorted by key."""
    h = 0xCBF29CE484222325
    for key in sorted(pairs):
        for byte in f"{key}={pairs[key]}\n".encode("utf-8"):
            h ^= byte
            h = (h * 0x100000001B3) & 0xFFFFFFFFFFFFFFFF
    return f"{h:016x}"


def _parse_pairs(text: str, source: str) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        value = value.strip()
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        if key in pairs:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        pairs[key] = value
    return pairs


def _as_float(value: str, key: str) -> float:
    try:
        return float(value)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: not a number: {value!r}") from exc


def _as_int(value: str, key: str) -> int:
    try:
        return int(value)
    except ValueError as exc:
        raise ConfigError(f"config key {key!r}: not an integer: {value!r}") from exc


def _as_bool(value: str, key: str) -> bool:
    low = value.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ConfigError(f"config key {key!r}: not a boolean: {value!r}")


def _as_float_list(value: str, key: str) -> list[float]:
    return [_as_float(v.strip(), key) for v in value.split(",") if v.strip()]


def _as_str_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


_KNOWN_KEYS = {
    "lower", "upper", "names",
    "evaluator", "eval_timeout", "workdir",
    "constraint_a", "constraint_t",
    "model", "cv_models",
    "n_doe", "budget",
    "seed_doe", "seed_train", "seed_acq", "seed_noise",
    "rho_grid_min", "rho_grid_max", "rho_grid_size",
    "cv_folds", "penalty", "workers",
    "noise_level", "drop_rate",
    "gamma", "optimize_gamma", "n_starts",
    "indirect_step",
    "acq_candidates",
    "benchmark_noise_levels", "benchmark_drop_rates", "benchmark_extra_seeds",
}

_REQUIRED_KEYS = ("lower", "upper", "seed_doe", "seed_train", "seed_acq", "seed_noise")


@dataclass
class RunConfig:
    """Parsed, validated configuration plus provenance hash."""

    space: ParameterSpace
    evaluator_spec: str | None
    constraint: tuple[float, float] | None
    model: str
    cv_models: list[str]
    n_doe: int | None
    budget: int | None
    seed_doe: int
    seed_train: int
    seed_acq: int
    seed_noise: int
    rho_grid_min: float
    rho_grid_max: float
    rho_grid_size: int
    cv_folds: int
    penalty: float | None
    workers: int
    noise_level: float
    drop_rate: float
    gamma: float
    optimize_gamma: bool
    n_starts: int | None
    indirect_step: float
    acq_candidates: int
    eval_timeout: float
    workdir: str | None
    benchmark_noise_levels: list[float]
    benchmark_drop_rates: list[float]
    benchmark_extra_seeds: int
    pairs: dict[str, str] = field(default_factory=dict)

    @property
    def config_hash(self) -> str:
        return fnv1a_hash(self.pairs)

    def rho_grid(self) -> np.ndarray:
        if self.rho_grid_size == 1:
            return np.array([self.rho_grid_min])
        return np.geomspace(self.rho_grid_min, self.rho_grid_max, self.rho_grid_size)


def parse_config(path, seed_override: int | None = None) -> RunConfig:
    """Read and validate a config file; raises ConfigError with diagnostics."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    pairs = _parse_pairs(text, str(path))

    unknown = set(pairs) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    missing = [k for k in _REQUIRED_KEYS if k not in pairs]
    if missing:
        raise ConfigError(f"missing required config keys: {missing}")

    lower = _as_float_list(pairs["lower"], "lower")
    upper = _as_float_list(pairs["upper"], "upper")
    names = tuple(_as_str_list(pairs["names"])) if "names" in pairs else None
    try:
        space = ParameterSpace(np.array(lower), np.array(upper), names)
    except ValueError as exc:
        raise ConfigError(f"bad bounds: {exc}") from exc

    constraint = None
    if ("constraint_a" in pairs) != ("constraint_t" in pairs):
        raise ConfigError("constraint_a and constraint_t must be given together")
    if "constraint_a" in pairs:
        constraint = (
            _as_float(pairs["constraint_a"], "constraint_a"),
            _as_float(pairs["constraint_t"], "constraint_t"),
        )

    model = pairs.get("model", "kriging")
    if model not in MODEL_TYPES:
        raise ConfigError(f"model must be one of {MODEL_TYPES}, got {model!r}")
    cv_models = _as_str_list(pairs.get("cv_models", model))
    for mt in cv_models:
        if mt not in MODEL_TYPES:
            raise ConfigError(f"cv_models entry {mt!r} not in {MODEL_TYPES}")

    seeds = {k: _as_int(pairs[k], k) for k in ("seed_doe", "seed_train", "seed_acq", "seed_noise")}
    if seed_override is not None:
        seeds = {
            "seed_doe": seed_override,
            "seed_train": seed_override + 1,
            "seed_acq": seed_override + 2,
            "seed_noise": seed_override + 3,
        }
        # the override participates in the provenance hash
        pairs = {**pairs, "seed_override": str(seed_override)}

    levels = _as_float_list(pairs.get("benchmark_noise_levels", "0"), "benchmark_noise_levels")
    drops = _as_float_list(pairs.get("benchmark_drop_rates", "0"), "benchmark_drop_rates")
    if len(levels) != len(drops):
        raise ConfigError("benchmark_noise_levels and benchmark_drop_rates must zip")

    cfg = RunConfig(
        space=space,
        evaluator_spec=pairs.get("evaluator"),
        constraint=constraint,
        model=model,
        cv_models=cv_models,
        n_doe=_as_int(pairs["n_doe"], "n_doe") if "n_doe" in pairs else None,
        budget=_as_int(pairs["budget"], "budget") if "budget" in pairs else None,
        rho_grid_min=_as_float(pairs.get("rho_grid_min", "1e-3"), "rho_grid_min"),
        rho_grid_max=_as_float(pairs.get("rho_grid_max", "1e3"), "rho_grid_max"),
        rho_grid_size=_as_int(pairs.get("rho_grid_size", "25"), "rho_grid_size"),
        cv_folds=_as_int(pairs.get("cv_folds", "5"), "cv_folds"),
        penalty=_as_float(pairs["penalty"], "penalty") if "penalty" in pairs else None,
        workers=_as_int(pairs.get("workers", "1"), "workers"),
        noise_level=_as_float(pairs.get("noise_level", "0"), "noise_level"),
        drop_rate=_as_float(pairs.get("drop_rate", "0"), "drop_rate"),
        gamma=_as_float(pairs.get("gamma", "2.0"), "gamma"),
        optimize_gamma=_as_bool(pairs.get("optimize_gamma", "false"), "optimize_gamma"),
        n_starts=_as_int(pairs["n_starts"], "n_starts") if "n_starts" in pairs else None,
        indirect_step=_as_float(pairs.get("indirect_step", "0.01"), "indirect_step"),
        acq_candidates=_as_int(pairs.get("acq_candidates", "10000"), "acq_candidates"),
        eval_timeout=_as_float(pairs.get("eval_timeout", "3600"), "eval_timeout"),
        workdir=pairs.get("workdir"),
        benchmark_noise_levels=levels,
        benchmark_drop_rates=drops,
        benchmark_extra_seeds=_as_int(pairs.get("benchmark_extra_seeds", "5"), "benchmark_extra_seeds"),
        pairs=pairs,
        **seeds,
    )
    if cfg.budget is not None and cfg.n_doe is not None and cfg.budget < cfg.n_doe:
        raise ConfigError(f"budget {cfg.budget} is below n_doe {cfg.n_doe}")
    if cfg.rho_grid_size < 1 or cfg.rho_grid_min <= 0 or cfg.rho_grid_max < cfg.rho_grid_min:
        raise ConfigError("rho grid must be positive, ascending, nonempty")
    if not (0 <= cfg.drop_rate <= 1):
        raise ConfigError("drop_rate must lie in [0, 1]")
    if cfg.noise_level < 0:
        raise ConfigError("noise_level must be nonnegative")
    if cfg.workers < 1:
        raise ConfigError("workers must be at least 1")
    return cfg
