"""Ordinary Kriging: anisotropic correlation kernel, likelihood training, prediction.

The correlation between two designs is exp(-sum_k theta_k |dx_k|^gamma_k).
Training maximizes the concentrated log-likelihood (constant trend beta0 and
process variance sigma2 profiled out) over log10(theta) with a multistart
derivative-free search.  The correlation matrix is regularized on demand by
an escalating diagonal nugget.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.optimize import minimize

from .design_space import ParameterSpace, lhs_unit
from .sample_store import SampleSet

logger = logging.getLogger(__name__)

LOG10_THETA_BOUNDS = (-4.0, 4.0)
GAMMA_BOUNDS = (0.5, 2.0)
NUGGET_RETRIES = 8
SIGMA2_FLOOR = 1e-300


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class DegenerateVarianceError(ValueError):
    pass


class TooFewSamplesError(ValueError):
    pass


class TrainingFailedError(RuntimeError):
    pass


@dataclass
class CorrelationParams:
    """Anisotropic kernel parameters: theta_k > 0 and 0 < gamma_k <= 2.

    gamma = 2 (the Gaussian kernel) is admitted although some sources state
    the open interval; it is required by the gradient-enhanced models.
    """

    theta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        self.theta = np.atleast_1d(np.asarray(self.theta, dtype=float))
        gamma = np.asarray(self.gamma, dtype=float)
        if gamma.ndim == 0:
            gamma = np.full(self.theta.shape, float(gamma))
        self.gamma = gamma
        if self.theta.shape != self.gamma.shape:
            raise ValueError("theta and gamma must have equal length")
        if not np.all(self.theta > 0):
            raise ValueError("theta entries must be positive")
        if not np.all((self.gamma > 0) & (self.gamma <= 2.0)):
            raise ValueError("gamma entries must lie in (0, 2]")

    @property
    def dim(self) -> int:
        return self.theta.size


def correlation(xi, xj, params: CorrelationParams) -> float:
    """Kernel value exp(-sum_k theta_k |xi_k - xj_k|^gamma_k); symmetric, in (0, 1]."""
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    if xi.shape != xj.shape or xi.shape != params.theta.shape:
        raise ValueError("dimension mismatch between points and parameters")
    return float(np.exp(-np.sum(params.theta * np.abs(xi - xj) ** params.gamma)))


def power_distance_tensor(A: np.ndarray, B: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    """|A_i - B_j|^gamma per dimension, shape (nA, nB, d).

    Contracting with theta gives the kernel exponent; precomputing it makes
    likelihood evaluations over many theta candidates cheap.
    """
    diff = np.abs(A[:, None, :] - B[None, :, :])
    return diff ** gamma[None, None, :]


def correlation_matrix_from_tensor(P: np.ndarray, theta: np.ndarray) -> np.ndarray:
    return np.exp(-(P @ theta))


def build_correlation_matrix(X: np.ndarray, params: CorrelationParams) -> np.ndarray:
    """Symmetric unit-diagonal correlation matrix of the training designs."""
    P = power_distance_tensor(X, X, params.gamma)
    R = correlation_matrix_from_tensor(P, params.theta)
    # enforce exact symmetry and unit diagonal against round-off
    R = 0.5 * (R + R.T)
    np.fill_diagonal(R, 1.0)
    return R


def cross_correlation(X: np.ndarray, Q: np.ndarray, params: CorrelationParams) -> np.ndarray:
    """Correlations between training designs X (N,d) and queries Q (q,d); shape (N, q)."""
    P = power_distance_tensor(X, Q, params.gamma)
    return correlation_matrix_from_tensor(P, params.theta)


def factorize(R: np.ndarray) -> tuple[np.ndarray, float]:
    """Cholesky of R + nugget*I with an escalating nugget.

    The nugget starts at zero; on failure it is set to 1e-10*N and multiplied
    by ten per retry, at most eight retries.
    """
    n = R.shape[0]
    nugget = 0.0
    for _ in range(NUGGET_RETRIES + 1):
        try:
            if nugget > 0.0:
                L = np.linalg.cholesky(R + nugget * np.eye(n))
            else:
                L = np.linalg.cholesky(R)
            return L, nugget
        except np.linalg.LinAlgError:
            nugget = 1e-10 * n if nugget == 0.0 else nugget * 10.0
    raise NotPositiveDefiniteError(
        f"correlation matrix not positive definite after {NUGGET_RETRIES} nugget retries"
    )


def estimate_beta0(y: np.ndarray, chol: np.ndarray) -> float:
    """Generalized least squares constant trend (1' R^-1 y) / (1' R^-1 1)."""
    ones = np.ones_like(y)
    u = solve_triangular(chol, ones, lower=True)
    v = solve_triangular(chol, y, lower=True)
    return float((u @ v) / (u @ u))


@dataclass
class _LinearFit:
    chol: np.ndarray
    nugget: float
    beta0: float
    sigma2: float
    w: np.ndarray
    log_likelihood: float


def _linear_fit(
    X: np.ndarray,
    y: np.ndarray,
    params: CorrelationParams,
    P: np.ndarray | None = None,
    fixed_nugget: float | None = None,
) -> _LinearFit:
    n = X.shape[0]
    if P is None:
        R = build_correlation_matrix(X, params)
    else:
        R = correlation_matrix_from_tensor(P, params.theta)
        R = 0.5 * (R + R.T)
        np.fill_diagonal(R, 1.0)
    if fixed_nugget is not None:
        L = np.linalg.cholesky(R + fixed_nugget * np.eye(n) if fixed_nugget else R)
        nugget = fixed_nugget
    else:
        L, nugget = factorize(R)
    beta0 = estimate_beta0(y, L)
    resid = y - beta0
    a = solve_triangular(L, resid, lower=True)
    sigma2 = float(a @ a) / n
    if sigma2 < SIGMA2_FLOOR:
        raise DegenerateVarianceError(f"process variance {sigma2} below floor")
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    cll = -0.5 * n * np.log(sigma2) - 0.5 * logdet
    w = solve_triangular(L.T, a, lower=False)
    return _LinearFit(L, nugget, beta0, sigma2, w, float(cll))


def concentrated_log_likelihood(
    X: np.ndarray, y: np.ndarray, params: CorrelationParams
) -> tuple[float, float]:
    """Profiled log-likelihood and the profiled process variance sigma2.

    With beta0 the GLS trend and sigma2 = resid' R^-1 resid / N, returns
    -(N/2) ln(sigma2) - (1/2) ln det(R + nugget I).
    """
    if X.shape[0] < 2:
        raise TooFewSamplesError("likelihood needs at least two samples")
    fit = _linear_fit(X, y, params)
    return fit.log_likelihood, fit.sigma2


@dataclass
class TrainConfig:
    """Hyperparameter search settings shared by all surrogate trainers."""

    seed: int = 0
    gamma: float = 2.0
    optimize_gamma: bool = False
    n_starts: int | None = None
    log10_theta_bounds: tuple[float, float] = LOG10_THETA_BOUNDS
    gamma_bounds: tuple[float, float] = GAMMA_BOUNDS
    likelihood_tol: float = 1e-6

    def starts_for(self, dim: int) -> int:
        return self.n_starts if self.n_starts is not None else max(20, 5 * dim)


@dataclass
class KrigingModel:
    """Trained ordinary-Kriging surrogate; immutable once built, safe to share."""

    space: ParameterSpace
    X: np.ndarray
    y: np.ndarray
    params: CorrelationParams
    beta0: float
    sigma2: float
    nugget: float
    chol: np.ndarray
    w: np.ndarray
    log_likelihood: float
    r_inv_one: np.ndarray = field(repr=False, default=None)
    one_r_one: float = 0.0

    def __post_init__(self):
        if self.r_inv_one is None:
            ones = np.ones_like(self.y)
            u = solve_triangular(self.chol, ones, lower=True)
            self.r_inv_one = solve_triangular(self.chol.T, u, lower=False)
            self.one_r_one = float(u @ u)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def predict_mean(self, x) -> float | np.ndarray:
        """Kriging predictor beta0 + r(x)' R^-1 (y - 1 beta0)."""
        Q = np.atleast_2d(np.asarray(x, dtype=float))
        r = cross_correlation(self.X, Q, self.params)
        mu = self.beta0 + r.T @ self.w
        return float(mu[0]) if np.asarray(x).ndim == 1 else mu

    def predict_variance(self, x) -> float | np.ndarray:
        """Ordinary-Kriging mean squared error of the predictor, clamped at zero.

        s2 = sigma2 * [1 - r'R^-1 r + (1 - 1'R^-1 r)^2 / (1'R^-1 1)].
        """
        Q = np.atleast_2d(np.asarray(x, dtype=float))
        r = cross_correlation(self.X, Q, self.params)
        a = solve_triangular(self.chol, r, lower=True)
        r_r_inv_r = np.sum(a * a, axis=0)
        one_r_inv_r = self.r_inv_one @ r
        s2 = self.sigma2 * (1.0 - r_r_inv_r + (1.0 - one_r_inv_r) ** 2 / self.one_r_one)
        s2 = np.maximum(s2, 0.0)
        return float(s2[0]) if np.asarray(x).ndim == 1 else s2


def fit(
    space: ParameterSpace,
    X: np.ndarray,
    y: np.ndarray,
    params: CorrelationParams,
    fixed_nugget: float | None = None,
) -> KrigingModel:
    """Fit the linear system for given kernel parameters (no hyperparameter search).

    Used for single-sample models, cross-validation refits with frozen theta,
    and model-file reloads.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if X.shape[0] != y.size:
        raise ValueError("design matrix and responses disagree in length")
    if X.shape[0] == 0:
        raise TooFewSamplesError("cannot fit with zero samples")
    if X.shape[0] == 1:
        # R = [[1]]: beta0 = y1, zero residual weights, undefined variance scale
        chol = np.ones((1, 1))
        return KrigingModel(
            space, X, y, params, float(y[0]), 0.0, 0.0, chol, np.zeros(1), 0.0
        )
    linfit = _linear_fit(X, y, params, fixed_nugget=fixed_nugget)
    return KrigingModel(
        space,
        X,
        y,
        params,
        linfit.beta0,
        linfit.sigma2,
        linfit.nugget,
        linfit.chol,
        linfit.w,
        linfit.log_likelihood,
    )


def _multistart_maximize(
    objective,
    dim: int,
    bounds: list[tuple[float, float]],
    n_starts: int,
    seed: int,
    tol: float,
) -> np.ndarray:
    """Seeded LHS multistart + Nelder-Mead refinement; argmax of `objective`.

    Failed starts (no finite value anywhere along the search) are skipped;
    ties between starts break toward the lower start index.
    """
    rng = np.random.default_rng(seed)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    starts = lo + lhs_unit(n_starts, dim, rng) * (hi - lo)

    def neg(t):
        try:
            return -objective(t)
        except (NotPositiveDefiniteError, DegenerateVarianceError):
            return np.inf

    best_val = np.inf
    best_t = None
    for t0 in starts:
        res = minimize(
            neg,
            t0,
            method="Nelder-Mead",
            bounds=bounds,
            options={"fatol": tol, "xatol": 1e-4, "maxfev": 400 * dim},
        )
        if np.isfinite(res.fun) and res.fun < best_val:
            best_val = res.fun
            best_t = res.x
    if best_t is None:
        raise TrainingFailedError("all hyperparameter starts failed")
    return best_t


def train(data: SampleSet | tuple, config: TrainConfig | None = None) -> KrigingModel:
    """Maximum-likelihood training over theta (and optionally gamma).

    `data` is a SampleSet (failed samples are excluded) or an (space, X, y)
    triple.  The search space is log10(theta) in [-4, 4] per dimension,
    refined from seeded LHS starts; deterministic for a fixed seed.
    """
    config = config or TrainConfig()
    if isinstance(data, SampleSet):
        space = data.space
        X = data.design_matrix()
        y = data.responses()
    else:
        space, X, y = data
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
    n, d = X.shape
    if n < 2:
        raise TooFewSamplesError(f"training needs at least 2 samples, got {n}")

    if config.optimize_gamma:
        bounds = [config.log10_theta_bounds] * d + [config.gamma_bounds] * d

        def objective(t):
            params = CorrelationParams(10.0 ** t[:d], t[d:])
            return _linear_fit(X, y, params).log_likelihood

        t_best = _multistart_maximize(
            objective, 2 * d, bounds, config.starts_for(2 * d), config.seed,
            config.likelihood_tol,
        )
        params = CorrelationParams(10.0 ** t_best[:d], t_best[d:])
    else:
        gamma = np.full(d, config.gamma)
        P = power_distance_tensor(X, X, gamma)
        bounds = [config.log10_theta_bounds] * d

        def objective(t):
            params = CorrelationParams(10.0 ** t, gamma)
            return _linear_fit(X, y, params, P=P).log_likelihood

        t_best = _multistart_maximize(
            objective, d, bounds, config.starts_for(d), config.seed,
            config.likelihood_tol,
        )
        params = CorrelationParams(10.0 ** t_best, gamma)

    model = fit(space, X, y, params)
    logger.debug(
        "kriging trained: n=%d theta=%s nugget=%g cll=%.6g",
        n, params.theta, model.nugget, model.log_likelihood,
    )
    return model
