"""Gradient-enhanced Kriging baselines.

Direct GEK augments the correlation matrix with value-gradient and
gradient-gradient covariance blocks, obtained by differentiating the
Gaussian kernel (gamma = 2 is mandatory: the kernel must be twice
differentiable).  Indirect GEK instead emits first-order Taylor
pseudo-samples around each gradient-bearing sample and feeds ordinary
Kriging.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lapack, solve_triangular

from . import kriging
from .design_space import ParameterSpace
from .kriging import (
    CorrelationParams,
    DegenerateVarianceError,
    NotPositiveDefiniteError,
    SIGMA2_FLOOR,
    TooFewSamplesError,
    TrainConfig,
    cross_correlation,
    factorize,
)
from .sample_store import Sample, SampleSet, DuplicatePointError

logger = logging.getLogger(__name__)

# Hard cap on augmented-system rows; dense GEK matrices grow as N + N_grad*d
# and become unworkable long before memory runs out.
MAX_AUGMENTED_ROWS = 40_000

DEFAULT_INDIRECT_STEP = 1e-2


class GammaNotTwoError(ValueError):
    pass


class NoGradientsError(ValueError):
    pass


class AugmentedSizeError(ValueError):
    pass


def _require_gaussian(params: CorrelationParams) -> None:
    if not np.all(params.gamma == 2.0):
        raise GammaNotTwoError("gradient-enhanced kernels require gamma = 2")


def correlation_jacobian(xi, xj, params: CorrelationParams) -> np.ndarray:
    """d/dx_j of the Gaussian kernel: 2 theta_k (xi_k - xj_k) R(xi, xj)."""
    _require_gaussian(params)
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    u = xi - xj
    r = np.exp(-np.sum(params.theta * u * u))
    return 2.0 * params.theta * u * r


def correlation_hessian_cross(xi, xj, params: CorrelationParams) -> np.ndarray:
    """Mixed second derivative d^2 R / dx_i,l dx_j,m of the Gaussian kernel.

    H_lm = (2 theta_l delta_lm - 4 theta_l theta_m u_l u_m) R with u = xi - xj.
    At zero distance this is diag(2 theta).
    """
    _require_gaussian(params)
    xi = np.asarray(xi, dtype=float)
    xj = np.asarray(xj, dtype=float)
    u = xi - xj
    r = np.exp(-np.sum(params.theta * u * u))
    tu = params.theta * u
    return (2.0 * np.diag(params.theta) - 4.0 * np.outer(tu, tu)) * r


def _value_grad_block(A: np.ndarray, B: np.ndarray, params: CorrelationParams) -> np.ndarray:
    """Covariances of values at A with partials at B; shape (nA, nB*d)."""
    R = cross_correlation(A, B, params)
    D = A[:, None, :] - B[None, :, :]
    block = 2.0 * params.theta[None, None, :] * D * R[:, :, None]
    return block.reshape(A.shape[0], B.shape[0] * A.shape[1])


def _grad_grad_block(Xg: np.ndarray, params: CorrelationParams) -> np.ndarray:
    """Covariances among partials at the gradient samples; shape (ng*d, ng*d)."""
    ng, d = Xg.shape
    R = cross_correlation(Xg, Xg, params)
    U = Xg[:, None, :] - Xg[None, :, :]
    TU = params.theta[None, None, :] * U
    outer = TU[:, :, :, None] * TU[:, :, None, :]
    block = (2.0 * np.diag(params.theta))[None, None, :, :] - 4.0 * outer
    block = block * R[:, :, None, None]
    return block.transpose(0, 2, 1, 3).reshape(ng * d, ng * d)


def build_augmented_system(
    data: SampleSet, params: CorrelationParams
) -> tuple[np.ndarray, np.ndarray, np.ndarray, list[int]]:
    """Assemble the derivative-augmented correlation system.

    Returns (matrix, response, trend vector, gradient sample indices); the
    matrix has N + N_grad*d rows with block structure
    [value-value, value-grad; grad-value, grad-grad], the response stacks the
    objective values followed by the gradient components per gradient sample,
    and the trend vector is ones over the value rows and zeros elsewhere.
    """
    _require_gaussian(params)
    valid = data.valid_indices()
    grad_idx = data.grad_indices()
    n, ng, d = len(valid), len(grad_idx), data.space.dim
    if ng == 0:
        raise NoGradientsError("no gradient samples: direct GEK degrades to Kriging")
    size = n + ng * d
    if size > MAX_AUGMENTED_ROWS:
        raise AugmentedSizeError(
            f"augmented system would have {size} rows (cap {MAX_AUGMENTED_ROWS})"
        )
    logger.debug(
        "assembling augmented system: %d rows, ~%.1f MiB dense",
        size, size * size * 8 / 2**20,
    )
    X = data.design_matrix(valid)
    y = data.responses(valid)
    Xg = data.design_matrix(grad_idx)
    G = np.array([data[i].grad for i in grad_idx])

    A = np.empty((size, size))
    A[:n, :n] = kriging.build_correlation_matrix(X, params)
    vg = _value_grad_block(X, Xg, params)
    A[:n, n:] = vg
    A[n:, :n] = vg.T
    A[n:, n:] = _grad_grad_block(Xg, params)
    A = 0.5 * (A + A.T)

    y_aug = np.concatenate([y, G.reshape(-1)])
    F = np.concatenate([np.ones(n), np.zeros(ng * d)])
    return A, y_aug, F, grad_idx


def _reciprocal_condition(chol: np.ndarray) -> float:
    """1-norm reciprocal condition estimate of the factored matrix.

    Estimated from the Cholesky factor: rcond(A) ~ rcond(L)^2.  Reported as
    a conditioning sentinel for the gradient-noise studies.
    """
    rcond_l, info = lapack.dtrcon(chol, norm="1", uplo="L", diag="N")
    if info != 0:
        return float("nan")
    return float(rcond_l) ** 2


@dataclass
class GekModel:
    """Trained direct-GEK surrogate over the augmented correlation system."""

    space: ParameterSpace
    X: np.ndarray
    y: np.ndarray
    Xg: np.ndarray
    G: np.ndarray
    grad_indices: list[int]
    params: CorrelationParams
    beta0: float
    sigma2: float
    nugget: float
    chol: np.ndarray
    w: np.ndarray
    log_likelihood: float
    rcond: float = float("nan")

    def __post_init__(self):
        F = np.concatenate([np.ones(self.X.shape[0]), np.zeros(self.Xg.size)])
        u = solve_triangular(self.chol, F, lower=True)
        self._a_inv_f = solve_triangular(self.chol.T, u, lower=False)
        self._f_a_inv_f = float(u @ u)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    def _r_aug(self, Q: np.ndarray) -> np.ndarray:
        """Augmented correlation vectors for queries; shape (rows, q)."""
        r_val = cross_correlation(self.X, Q, self.params)
        R_qg = cross_correlation(Q, self.Xg, self.params)
        D = Q[:, None, :] - self.Xg[None, :, :]
        grad_part = 2.0 * self.params.theta[None, None, :] * D * R_qg[:, :, None]
        q = Q.shape[0]
        return np.vstack([r_val, grad_part.reshape(q, -1).T])

    def predict_mean(self, x) -> float | np.ndarray:
        Q = np.atleast_2d(np.asarray(x, dtype=float))
        r = self._r_aug(Q)
        mu = self.beta0 + r.T @ self.w
        return float(mu[0]) if np.asarray(x).ndim == 1 else mu

    def predict_variance(self, x) -> float | np.ndarray:
        """GLS mean squared error over the augmented system, clamped at zero."""
        Q = np.atleast_2d(np.asarray(x, dtype=float))
        r = self._r_aug(Q)
        a = solve_triangular(self.chol, r, lower=True)
        r_a_inv_r = np.sum(a * a, axis=0)
        f_a_inv_r = self._a_inv_f @ r
        s2 = self.sigma2 * (1.0 - r_a_inv_r + (1.0 - f_a_inv_r) ** 2 / self._f_a_inv_f)
        s2 = np.maximum(s2, 0.0)
        return float(s2[0]) if np.asarray(x).ndim == 1 else s2


def _augmented_fit(
    A: np.ndarray, y_aug: np.ndarray, F: np.ndarray
) -> tuple[np.ndarray, float, float, float, np.ndarray, float]:
    """Factorize and solve the augmented GLS system; returns fit quantities."""
    m = A.shape[0]
    L, nugget = factorize(A)
    u = solve_triangular(L, F, lower=True)
    v = solve_triangular(L, y_aug, lower=True)
    beta0 = float((u @ v) / (u @ u))
    a = v - beta0 * u
    sigma2 = float(a @ a) / m
    if sigma2 < SIGMA2_FLOOR:
        raise DegenerateVarianceError(f"process variance {sigma2} below floor")
    logdet = 2.0 * float(np.sum(np.log(np.diag(L))))
    cll = -0.5 * m * np.log(sigma2) - 0.5 * logdet
    w = solve_triangular(L.T, a, lower=False)
    return L, nugget, beta0, sigma2, w, float(cll)


def augmented_log_likelihood(data: SampleSet, params: CorrelationParams) -> float:
    """Concentrated log-likelihood of the derivative-augmented system."""
    A, y_aug, F, _ = build_augmented_system(data, params)
    return _augmented_fit(A, y_aug, F)[5]


def fit_direct_gek(data: SampleSet, params: CorrelationParams) -> GekModel:
    """Solve the augmented system for fixed kernel parameters."""
    A, y_aug, F, grad_idx = build_augmented_system(data, params)
    L, nugget, beta0, sigma2, w, cll = _augmented_fit(A, y_aug, F)
    valid = data.valid_indices()
    model = GekModel(
        space=data.space,
        X=data.design_matrix(valid),
        y=data.responses(valid),
        Xg=data.design_matrix(grad_idx),
        G=np.array([data[i].grad for i in grad_idx]),
        grad_indices=list(grad_idx),
        params=params,
        beta0=beta0,
        sigma2=sigma2,
        nugget=nugget,
        chol=L,
        w=w,
        log_likelihood=cll,
        rcond=_reciprocal_condition(L),
    )
    logger.debug(
        "direct GEK fit: rows=%d nugget=%g rcond=%.3g", A.shape[0], nugget, model.rcond
    )
    return model


def train_direct_gek(data: SampleSet, config: TrainConfig | None = None):
    """Maximum-likelihood direct GEK; same multistart scheme as Kriging.

    With no gradient samples present this warns and falls back to ordinary
    Kriging (the augmented system would be identical).
    """
    config = config or TrainConfig()
    if config.gamma != 2.0 or config.optimize_gamma:
        raise GammaNotTwoError("direct GEK requires fixed gamma = 2")
    n = data.n_valid
    if n < 2:
        raise TooFewSamplesError(f"training needs at least 2 samples, got {n}")
    if data.n_grad == 0:
        warnings.warn(
            "no gradient samples available; direct GEK falls back to ordinary Kriging",
            stacklevel=2,
        )
        return kriging.train(data, config)

    d = data.space.dim
    gamma = np.full(d, 2.0)
    bounds = [config.log10_theta_bounds] * d

    def objective(t):
        params = CorrelationParams(10.0 ** t, gamma)
        return augmented_log_likelihood(data, params)

    t_best = kriging._multistart_maximize(
        objective, d, bounds, config.starts_for(d), config.seed, config.likelihood_tol
    )
    return fit_direct_gek(data, CorrelationParams(10.0 ** t_best, gamma))


def indirect_gek_augment(data: SampleSet, step: float = DEFAULT_INDIRECT_STEP) -> SampleSet:
    """Expand gradient samples into 2d first-order Taylor pseudo-samples each.

    Pseudo-samples sit at x +- step*e_k in normalized space with objective
    y +- step*grad_k; they carry no gradients.  Steps are shortened at the
    cube boundary so pseudo-points stay inside [0, 1]^d, and pseudo-samples
    colliding with existing points are dropped.  Constraint values are
    copied from the parent (no constraint gradients exist); downstream
    constraint surrogates never train on pseudo-samples.
    """
    if step <= 0:
        raise ValueError("perturbation step must be positive")
    out = data.copy()
    d = data.space.dim
    for i in data.grad_indices():
        parent = data[i]
        for k in range(d):
            for sign in (1.0, -1.0):
                target = float(np.clip(parent.x[k] + sign * step, 0.0, 1.0))
                delta = target - parent.x[k]
                if delta == 0.0:
                    continue
                x_new = parent.x.copy()
                x_new[k] = target
                pseudo = Sample(
                    x=x_new,
                    y=parent.y + delta * parent.grad[k],
                    constraints=parent.constraints.copy(),
                    grad=None,
                    status=parent.status,
                    tag=parent.tag,
                )
                try:
                    out.add(pseudo)
                except DuplicatePointError:
                    pass
    return out
