"""Primal-dual aggregation surrogate.

The aggregate prediction is a convex combination of a trained Kriging model
(the primal) and a first-order Taylor expansion about the nearest
gradient-bearing sample (the dual):

    f_agg(x) = alpha(x) * f_dual(x) + (1 - alpha(x)) * f_primal(x)
    alpha(x) = exp(-rho * ||x - x_g||_1 * ||grad(x_g)||_1)

with x_g the L1-nearest gradient sample.  The single positive hyperparameter
rho is tuned by K-fold cross-validation.  All distances and gradients live in
normalized coordinates so rho stays scale-free.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from . import kriging
from .kriging import CorrelationParams, KrigingModel, TrainConfig
from .sample_store import SampleSet, split_folds

logger = logging.getLogger(__name__)

DEFAULT_RHO_GRID_SIZE = 25
DEFAULT_RHO_BOUNDS = (1e-3, 1e3)
DEFAULT_K_FOLDS = 5


class NoGradientSamplesError(ValueError):
    pass


def default_rho_grid(
    size: int = DEFAULT_RHO_GRID_SIZE, bounds: tuple[float, float] = DEFAULT_RHO_BOUNDS
) -> np.ndarray:
    """Log-spaced candidate grid for the blending hyperparameter."""
    if size < 1:
        raise ValueError("grid size must be at least 1")
    lo, hi = bounds
    if not (0 < lo <= hi):
        raise ValueError("rho grid bounds must be positive and ordered")
    if size == 1:
        return np.array([lo])
    return np.geomspace(lo, hi, size)


@dataclass
class AggregationModel:
    """Primal Kriging plus nearest-gradient-sample Taylor dual.

    ``grad_indices`` are positions in the source sample set; the matching
    rows of ``Xg``/``yg``/``Gg`` hold the coordinates, objective values, and
    normalized gradients of the dual candidates.  Empty candidates degrade
    the model to the pure primal (alpha identically zero).
    """

    primal: KrigingModel
    grad_indices: list[int]
    Xg: np.ndarray
    yg: np.ndarray
    Gg: np.ndarray
    rho: float
    rho_grid: np.ndarray
    cv_errors: np.ndarray | None = None

    def __post_init__(self):
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        self._grad_l1 = (
            np.abs(self.Gg).sum(axis=1) if len(self.grad_indices) else np.zeros(0)
        )

    @property
    def has_dual(self) -> bool:
        return len(self.grad_indices) > 0

    @property
    def space(self):
        return self.primal.space

    # vectorized internals -------------------------------------------------

    def _nearest(self, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Positions (into grad arrays) and L1 distances of nearest candidates."""
        D = cdist(Q, self.Xg, metric="cityblock")
        pos = np.argmin(D, axis=1)  # first minimum = lowest sample index
        return pos, D[np.arange(Q.shape[0]), pos]

    def _dual_terms(self, Q: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos, dist = self._nearest(Q)
        delta = Q - self.Xg[pos]
        dual = self.yg[pos] + np.sum(self.Gg[pos] * delta, axis=1)
        return pos, dist, dual

    def predict_mean(self, x) -> float | np.ndarray:
        """Convex blend of dual and primal predictions."""
        Q = np.atleast_2d(np.asarray(x, dtype=float))
        primal = np.atleast_1d(self.primal.predict_mean(Q))
        if not self.has_dual:
            out = primal
        else:
            pos, dist, dual = self._dual_terms(Q)
            a = np.exp(-self.rho * dist * self._grad_l1[pos])
            out = a * dual + (1.0 - a) * primal
        return float(out[0]) if np.asarray(x).ndim == 1 else out

    def predict_variance(self, x) -> float | np.ndarray:
        """Aggregation has no native variance; the primal Kriging MSE serves."""
        return self.primal.predict_variance(x)

    def components(self, x) -> dict[str, np.ndarray]:
        """Per-point alpha, dual, primal, and aggregate values (for reports)."""
        Q = np.atleast_2d(np.asarray(x, dtype=float))
        primal = np.atleast_1d(self.primal.predict_mean(Q))
        if not self.has_dual:
            zeros = np.zeros(Q.shape[0])
            return {"alpha": zeros, "dual": primal.copy(), "primal": primal, "mean": primal}
        pos, dist, dual = self._dual_terms(Q)
        a = np.exp(-self.rho * dist * self._grad_l1[pos])
        return {"alpha": a, "dual": dual, "primal": primal, "mean": a * dual + (1 - a) * primal}


# -- spec-level operations on a built model ---------------------------------


def nearest_gradient_sample(x, model: AggregationModel) -> tuple[int, np.ndarray]:
    """Index (into the source sample set) and coordinates of the L1-nearest
    gradient sample; ties break toward the lowest sample index."""
    if not model.has_dual:
        raise NoGradientSamplesError("model has no gradient samples")
    Q = np.atleast_2d(np.asarray(x, dtype=float))
    pos, _ = model._nearest(Q)
    p = int(pos[0])
    return model.grad_indices[p], model.Xg[p]


def dual_predict(x, model: AggregationModel) -> float:
    """First-order Taylor value about the nearest gradient sample."""
    if not model.has_dual:
        raise NoGradientSamplesError("model has no gradient samples")
    Q = np.atleast_2d(np.asarray(x, dtype=float))
    return float(model._dual_terms(Q)[2][0])


def alpha(x, model: AggregationModel) -> float:
    """Blending weight exp(-rho * L1 distance * L1 gradient norm), in (0, 1]."""
    if not model.has_dual:
        raise NoGradientSamplesError("model has no gradient samples")
    Q = np.atleast_2d(np.asarray(x, dtype=float))
    pos, dist = model._nearest(Q)
    return float(np.exp(-model.rho * dist[0] * model._grad_l1[pos[0]]))


def predict_aggregate(x, model: AggregationModel) -> float | np.ndarray:
    return model.predict_mean(x)


# -- rho tuning by K-fold cross-validation -----------------------------------


def _fold_cv_terms(
    data: SampleSet, primal: KrigingModel, k_folds: int, seed: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Held-out prediction ingredients shared across the rho grid.

    The primal hyperparameters are frozen from the full-data model; each
    fold refits only the Kriging linear system on its training portion.
    Returns, over all held-out points: true y, primal prediction, dual
    prediction, L1 distance to the nearest training-fold gradient sample,
    that sample's L1 gradient norm, and a has-dual mask.
    """
    folds = split_folds(data, k_folds, seed)
    grad_all = set(data.grad_indices())

    y_true, primal_pred, dual_pred, dists, gnorms, has_dual = [], [], [], [], [], []
    for fold in folds:
        held = set(int(i) for i in fold)
        train_idx = [i for i in data.valid_indices() if i not in held]
        X_tr = data.design_matrix(train_idx)
        y_tr = data.responses(train_idx)
        fold_model = kriging.fit(data.space, X_tr, y_tr, primal.params)

        cand = [i for i in train_idx if i in grad_all]
        Xg = data.design_matrix(cand)
        yg = data.responses(cand)
        Gg = np.array([data[i].grad for i in cand]) if cand else np.zeros((0, data.space.dim))

        Q = data.design_matrix(list(fold))
        yq = data.responses(list(fold))
        p = np.atleast_1d(fold_model.predict_mean(Q))
        y_true.append(yq)
        primal_pred.append(p)
        if cand:
            D = cdist(Q, Xg, metric="cityblock")
            pos = np.argmin(D, axis=1)
            dist = D[np.arange(Q.shape[0]), pos]
            delta = Q - Xg[pos]
            dual = yg[pos] + np.sum(Gg[pos] * delta, axis=1)
            gn = np.abs(Gg[pos]).sum(axis=1)
            mask = np.ones(Q.shape[0], dtype=bool)
        else:
            dual = np.zeros(Q.shape[0])
            dist = np.zeros(Q.shape[0])
            gn = np.zeros(Q.shape[0])
            mask = np.zeros(Q.shape[0], dtype=bool)
        dual_pred.append(dual)
        dists.append(dist)
        gnorms.append(gn)
        has_dual.append(mask)

    return (
        np.concatenate(y_true),
        np.concatenate(primal_pred),
        np.concatenate(dual_pred),
        np.concatenate(dists),
        np.concatenate(gnorms),
        np.concatenate(has_dual),
    )


def tune_rho(
    data: SampleSet,
    primal: KrigingModel,
    grid: np.ndarray | None = None,
    k_folds: int = DEFAULT_K_FOLDS,
    seed: int = 0,
) -> tuple[float, np.ndarray]:
    """Pick rho from the grid by K-fold cross-validated RMSE.

    For each candidate rho the aggregate predictor is evaluated on held-out
    points with the dual candidate set restricted to the training folds; the
    error is the pooled RMSE over all held-out points.  Ties take the
    smaller rho.  Raises NoGradientSamplesError when no dual candidates
    exist anywhere (the caller degrades to the pure primal).
    """
    grid = default_rho_grid() if grid is None else np.asarray(grid, dtype=float)
    if grid.size < 1 or np.any(grid <= 0) or np.any(np.diff(grid) < 0):
        raise ValueError("rho grid must be positive and ascending")
    if data.n_grad == 0:
        raise NoGradientSamplesError("cannot tune rho without gradient samples")
    y, p, dv, dist, gn, mask = _fold_cv_terms(data, primal, k_folds, seed)

    errors = np.empty(grid.size)
    for i, rho in enumerate(grid):
        a = np.where(mask, np.exp(-rho * dist * gn), 0.0)
        pred = a * dv + (1.0 - a) * p
        errors[i] = np.sqrt(np.mean((pred - y) ** 2))
    best = int(np.argmin(errors))  # first minimum = smallest rho on ties
    logger.debug("rho tuned: %g (cv rmse %.6g)", grid[best], errors[best])
    return float(grid[best]), errors


def build_aggregation(
    data: SampleSet,
    config: TrainConfig | None = None,
    grid: np.ndarray | None = None,
    k_folds: int = DEFAULT_K_FOLDS,
    fold_seed: int = 0,
    primal: KrigingModel | None = None,
) -> AggregationModel:
    """Train the primal Kriging model and tune rho; assemble the aggregate.

    Without gradient samples the model degrades to the pure primal with a
    warning: alpha is identically zero and rho is pinned to the grid minimum.
    """
    grid = default_rho_grid() if grid is None else np.asarray(grid, dtype=float)
    if primal is None:
        primal = kriging.train(data, config)
    grad_idx = data.grad_indices()
    Xg = data.design_matrix(grad_idx)
    yg = data.responses(grad_idx)
    Gg = (
        np.array([data[i].grad for i in grad_idx])
        if grad_idx
        else np.zeros((0, data.space.dim))
    )
    if not grad_idx:
        warnings.warn(
            "no gradient samples: aggregation degrades to the pure Kriging primal",
            stacklevel=2,
        )
        return AggregationModel(primal, [], Xg, yg, Gg, float(grid[0]), grid, None)
    rho, cv_errors = tune_rho(data, primal, grid, k_folds, fold_seed)
    return AggregationModel(primal, list(grad_idx), Xg, yg, Gg, rho, grid, cv_errors)
