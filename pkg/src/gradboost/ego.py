"""Efficient global optimization loop.

Expected improvement on the objective surrogate, one Kriging surrogate per
constraint with a large penalty on predicted violations, a seeded multistart
acquisition search, and a hard evaluation budget.  Failed evaluations
consume budget but never abort the loop.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import ndtr

from . import aggregation, gek, kriging
from .design_space import ParameterSpace, lhs_sample, lhs_unit
from .evaluator import EvalResult, NoiseSpec, with_noise
from .kriging import TrainConfig
from .sample_store import (
    Sample,
    SampleSet,
    STATUS_FAILED,
    TAG_DOE,
    TAG_EGO,
)

logger = logging.getLogger(__name__)

MODEL_TYPES = ("kriging", "gek-direct", "gek-indirect", "aggregation")

PROPOSAL_SEPARATION = 1e-6


class EmptyHistoryError(ValueError):
    pass


class AllCandidatesDuplicateError(RuntimeError):
    pass


class BudgetError(ValueError):
    pass


@dataclass
class Problem:
    """Black-box minimization task: bounded domain, evaluator, constraints.

    The evaluator is called with raw coordinates and an evaluation index and
    returns an :class:`EvalResult`.  Every constraint is feasible when its
    value is at most zero; ingestion is responsible for negating
    greater-than constraints into this convention.
    """

    space: ParameterSpace
    evaluate: object
    m: int = 0


@dataclass
class EgoConfig:
    model: str = "kriging"
    n_doe: int | None = None  # default max(2d, 10)
    budget: int = 50
    seed_doe: int = 0
    seed_train: int = 1
    seed_acq: int = 2
    noise: NoiseSpec | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    k_folds: int = aggregation.DEFAULT_K_FOLDS
    rho_grid: np.ndarray | None = None
    penalty: float | None = None
    workers: int = 1
    acq_candidates: int = 10_000
    acq_top: int = 10
    acq_step: float = 0.05
    acq_min_step: float = 1e-6
    indirect_step: float = gek.DEFAULT_INDIRECT_STEP

    def resolved_n_doe(self, dim: int) -> int:
        return self.n_doe if self.n_doe is not None else max(2 * dim, 10)


@dataclass
class HistoryEntry:
    index: int
    tag: str
    status: str
    x_raw: np.ndarray
    y: float | None
    constraints: np.ndarray
    feasible: bool
    best_so_far: float | None


@dataclass
class OptimizationReport:
    space: ParameterSpace
    model_type: str
    budget: int
    n_doe: int
    entries: list[HistoryEntry] = field(default_factory=list)
    samples: SampleSet | None = None
    best_x: np.ndarray | None = None
    best_y: float | None = None
    best_constraints: np.ndarray | None = None
    doe_seconds: float = 0.0
    ego_seconds: float = 0.0

    @property
    def evaluations_used(self) -> int:
        return len(self.entries)


def expected_improvement(mu, s, f_min: float):
    """Closed-form EI under a Gaussian predictive distribution.

    EI = (f_min - mu) * Phi(z) + s * phi(z) with z = (f_min - mu)/s;
    zero wherever s = 0.
    """
    mu = np.asarray(mu, dtype=float)
    s = np.asarray(s, dtype=float)
    scalar = mu.ndim == 0
    mu, s = np.atleast_1d(mu), np.atleast_1d(s)
    out = np.zeros(np.broadcast_shapes(mu.shape, s.shape))
    mu, s = np.broadcast_to(mu, out.shape), np.broadcast_to(s, out.shape)
    pos = s > 0
    z = (f_min - mu[pos]) / s[pos]
    phi = np.exp(-0.5 * z * z) / np.sqrt(2.0 * np.pi)
    out[pos] = (f_min - mu[pos]) * ndtr(z) + s[pos] * phi
    return float(out[0]) if scalar else out


def _violation(constraints: np.ndarray) -> float:
    return float(np.sum(np.maximum(constraints, 0.0)))


def is_feasible(constraints: np.ndarray) -> bool:
    return bool(np.all(constraints <= 0.0))


def best_feasible(data: SampleSet) -> float:
    """Baseline objective for EI: the best feasible value seen so far.

    With no feasible sample yet, the objective of the least-violating sample
    serves instead.
    """
    valid = data.valid_indices()
    if not valid:
        raise EmptyHistoryError("no successful evaluations recorded")
    feasible = [i for i in valid if is_feasible(data[i].constraints)]
    if feasible:
        return min(data[i].y for i in feasible)
    best = min(valid, key=lambda i: (_violation(data[i].constraints), data[i].y))
    return data[best].y


def default_penalty(data: SampleSet) -> float:
    """Penalty scale 1e3 * objective range over valid samples (floor 1)."""
    y = data.responses()
    spread = float(np.max(y) - np.min(y)) if y.size else 0.0
    return 1e3 * max(spread, 1.0)


def acquisition(
    X,
    objective_model,
    constraint_models,
    f_min: float,
    penalty: float,
):
    """EI minus penalized predicted constraint violations, vectorized."""
    Q = np.atleast_2d(np.asarray(X, dtype=float))
    mu = np.atleast_1d(objective_model.predict_mean(Q))
    s = np.sqrt(np.maximum(np.atleast_1d(objective_model.predict_variance(Q)), 0.0))
    a = expected_improvement(mu, s, f_min)
    for cm in constraint_models:
        c_hat = np.atleast_1d(cm.predict_mean(Q))
        a = a - penalty * np.maximum(c_hat, 0.0)
    return float(a[0]) if np.asarray(X).ndim == 1 else a


def _pattern_search(fun, u0: np.ndarray, step: float, min_step: float) -> tuple[np.ndarray, float]:
    """Step-halving compass ascent on [0,1]^d; deterministic, monotone."""
    u = u0.copy()
    best = float(fun(u[None, :])[0])
    d = u.size
    while step >= min_step:
        probes = np.repeat(u[None, :], 2 * d, axis=0)
        for k in range(d):
            probes[2 * k, k] = min(1.0, u[k] + step)
            probes[2 * k + 1, k] = max(0.0, u[k] - step)
        vals = fun(probes)
        j = int(np.argmax(vals))
        if vals[j] > best:
            best = float(vals[j])
            u = probes[j]
        else:
            step *= 0.5
    return u, best


def maximize_acquisition(
    objective_model,
    constraint_models,
    f_min: float,
    penalty: float,
    existing_X: np.ndarray,
    seed: int,
    config: EgoConfig,
) -> np.ndarray:
    """Seeded multistart acquisition maximization on the unit cube.

    Screens LHS candidates, refines the best few by pattern search, and
    returns the best refined point that keeps an L-inf separation of at
    least 1e-6 from every existing sample.
    """
    if existing_X.size:
        dim = existing_X.shape[1]
    else:
        primal = getattr(objective_model, "primal", objective_model)
        dim = primal.X.shape[1]
    rng = np.random.default_rng(seed)
    cands = lhs_unit(config.acq_candidates, dim, rng)

    def acq(Q):
        return acquisition(Q, objective_model, constraint_models, f_min, penalty)

    scores = acq(cands)
    order = np.argsort(-scores, kind="stable")
    top = order[: config.acq_top]

    refined = []
    for rank, idx in enumerate(top):
        u, val = _pattern_search(acq, cands[idx], config.acq_step, config.acq_min_step)
        refined.append((val, rank, u))
    refined.sort(key=lambda t: (-t[0], t[1]))

    def separated(u):
        if existing_X.size == 0:
            return True
        return float(np.min(np.max(np.abs(existing_X - u), axis=1))) >= PROPOSAL_SEPARATION

    for _, _, u in refined:
        if separated(u):
            return u
    # every refinement collapsed onto an existing sample: fall back to the
    # best raw candidate with enough separation
    for idx in order:
        if separated(cands[idx]):
            return cands[idx]
    raise AllCandidatesDuplicateError("every acquisition candidate duplicates a sample")


def fit_objective_surrogate(data: SampleSet, config: EgoConfig):
    """Surrogate factory for the configured model type."""
    if config.model not in MODEL_TYPES:
        raise ValueError(f"unknown model type {config.model!r}")
    train_cfg = _train_config(config)
    if config.model == "kriging":
        return kriging.train(data, train_cfg)
    if config.model == "gek-direct":
        return gek.train_direct_gek(data, train_cfg)
    if config.model == "gek-indirect":
        augmented = gek.indirect_gek_augment(data, config.indirect_step)
        return kriging.train(augmented, train_cfg)
    return aggregation.build_aggregation(
        data, train_cfg, config.rho_grid, config.k_folds, config.seed_train
    )


def _train_config(config: EgoConfig) -> TrainConfig:
    cfg = config.train
    if cfg.seed != config.seed_train:
        cfg = replace(cfg, seed=config.seed_train)
    return cfg


def fit_constraint_surrogates(data: SampleSet, config: EgoConfig) -> list:
    """One Kriging model per constraint.

    Constraint gradients are never available from the evaluators, so every
    constraint surrogate falls back to ordinary Kriging regardless of the
    objective model type.
    """
    train_cfg = _train_config(config)
    models = []
    X = data.design_matrix()
    C = data.constraint_matrix()
    for j in range(data.m):
        models.append(kriging.train((data.space, X, C[:, j]), train_cfg))
    return models


def evaluate_batch(problem: Problem, X_raw: np.ndarray, start_index: int, workers: int) -> list[EvalResult]:
    """Evaluate a batch, optionally with a thread pool; order is preserved."""
    indices = [start_index + i for i in range(X_raw.shape[0])]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(problem.evaluate, X_raw, indices))
    return [problem.evaluate(x, i) for x, i in zip(X_raw, indices)]


def _ingest(
    data: SampleSet, space: ParameterSpace, x_raw: np.ndarray, result: EvalResult, tag: str
) -> Sample:
    """Normalize coordinates and gradients and append to the dataset."""
    u = space.normalize(x_raw)
    if result.status == STATUS_FAILED:
        sample = Sample(u, None, np.zeros(data.m), None, STATUS_FAILED, tag)
    else:
        constraints = result.constraints
        if constraints.size != data.m:
            logger.warning(
                "evaluation returned %d constraints, expected %d; marking failed",
                constraints.size, data.m,
            )
            sample = Sample(u, None, np.zeros(data.m), None, STATUS_FAILED, tag)
        else:
            grad = space.scale_gradient(result.grad) if result.grad is not None else None
            sample = Sample(u, result.y, constraints, grad, result.status, tag)
    data.add(sample)
    return sample


def run_ego(problem: Problem, config: EgoConfig) -> OptimizationReport:
    """LHS design phase followed by sequential EI-driven refinement.

    The loop stops when ok-plus-failed evaluations reach the budget; failed
    evaluations are excluded from surrogate fits but still consume budget.
    """
    space = problem.space
    d = space.dim
    n_doe = config.resolved_n_doe(d)
    if n_doe < d + 2:
        raise BudgetError(f"n_doe must be at least d + 2 = {d + 2}, got {n_doe}")
    if config.budget < n_doe:
        raise BudgetError(
            f"budget {config.budget} cannot cover the {n_doe}-point design phase"
        )

    report = OptimizationReport(space, config.model, config.budget, n_doe)
    data = SampleSet(space, problem.m)
    best: float | None = None

    def record(x_raw, result, tag):
        nonlocal best
        sample = _ingest(data, space, x_raw, result, tag)
        feasible = sample.has_value and is_feasible(sample.constraints)
        if feasible and (best is None or sample.y < best):
            best = sample.y
        report.entries.append(
            HistoryEntry(
                index=len(report.entries),
                tag=tag,
                status=sample.status,
                x_raw=np.asarray(x_raw, dtype=float),
                y=sample.y,
                constraints=sample.constraints.copy(),
                feasible=feasible,
                best_so_far=best,
            )
        )

    t0 = time.perf_counter()
    U = lhs_sample(space, n_doe, config.seed_doe)
    X_raw = space.denormalize(U)
    results = evaluate_batch(problem, X_raw, 0, config.workers)
    if config.noise is not None:
        results = [with_noise(r, config.noise, i) for i, r in enumerate(results)]
    for x_raw, result in zip(X_raw, results):
        record(x_raw, result, TAG_DOE)
    report.doe_seconds = time.perf_counter() - t0

    t1 = time.perf_counter()
    iteration = 0
    while len(report.entries) < config.budget:
        if data.n_valid < 2:
            raise kriging.TooFewSamplesError(
                "not enough successful evaluations to fit a surrogate"
            )
        objective_model = fit_objective_surrogate(data, config)
        constraint_models = fit_constraint_surrogates(data, config)
        f_min = best_feasible(data)
        penalty = config.penalty if config.penalty is not None else default_penalty(data)
        existing = np.array([s.x for s in data if s.has_value])
        u_next = maximize_acquisition(
            objective_model,
            constraint_models,
            f_min,
            penalty,
            existing,
            config.seed_acq + iteration,
            config,
        )
        x_next = space.denormalize(u_next)
        eval_index = len(report.entries)
        result = problem.evaluate(x_next, eval_index)
        if config.noise is not None:
            result = with_noise(result, config.noise, eval_index)
        record(x_next, result, TAG_EGO)
        iteration += 1
    report.ego_seconds = time.perf_counter() - t1

    report.samples = data
    feasible_valid = [
        e for e in report.entries if e.feasible and e.status != STATUS_FAILED
    ]
    if feasible_valid:
        best_entry = min(feasible_valid, key=lambda e: e.y)
        report.best_x = best_entry.x_raw
        report.best_y = best_entry.y
        report.best_constraints = best_entry.constraints
    logger.info(
        "ego finished: %d evaluations, best %s (doe %.2fs, ego %.2fs)",
        len(report.entries), report.best_y, report.doe_seconds, report.ego_seconds,
    )
    return report
