"""Box-bounded design domain, unit-cube normalization, and Latin hypercube sampling.

All surrogate modeling, distance computations, and acquisition searches in
this package operate in normalized [0, 1]^d coordinates.  ``ParameterSpace``
owns the affine maps in and out of the unit cube plus the chain-rule factor
that moves gradients into normalized space.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Out-of-bounds tolerance, relative to each interval width.
BOUNDS_TOL = 1e-12


class OutOfBoundsError(ValueError):
    """A raw design vector left its box domain beyond round-off tolerance."""

    def __init__(self, index: int, value: float, lo: float, hi: float):
        self.index = index
        super().__init__(
            f"coordinate {index} = {value!r} outside [{lo!r}, {hi!r}]"
        )


@dataclass
class ParameterSpace:
    """Axis-aligned box domain for the design variables.

    Bounds must satisfy ``lower[k] < upper[k]`` for every dimension.
    Out-of-bounds points are rejected, never clipped: silent clipping would
    corrupt the geometry of a design of experiments.
    """

    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        self.lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        self.upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if self.lower.ndim != 1 or self.lower.shape != self.upper.shape:
            raise ValueError("lower and upper must be 1-D arrays of equal length")
        if self.lower.size < 1:
            raise ValueError("dimension must be at least 1")
        if not (np.all(np.isfinite(self.lower)) and np.all(np.isfinite(self.upper))):
            raise ValueError("bounds must be finite")
        if not np.all(self.lower < self.upper):
            raise ValueError("lower bound must be strictly below upper bound")
        if self.names is not None:
            self.names = tuple(self.names)
            if len(self.names) != self.lower.size:
                raise ValueError("names length must match dimension")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def normalize(self, x) -> np.ndarray:
        """Map raw coordinates onto [0, 1]^d.

        Accepts a single point of shape ``(d,)`` or a batch ``(n, d)``.
        Raises :class:`OutOfBoundsError` if any coordinate violates its
        interval by more than ``1e-12`` of the interval width.
        """
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {x.shape[-1]}")
        u = (x - self.lower) / self.width
        low = u < -BOUNDS_TOL
        high = u > 1.0 + BOUNDS_TOL
        if np.any(low | high):
            flat_u = np.atleast_2d(u)
            flat_x = np.atleast_2d(x)
            rows, cols = np.nonzero(np.atleast_2d(low | high))
            k = int(cols[0])
            raise OutOfBoundsError(
                k, float(flat_x[rows[0], k]), float(self.lower[k]), float(self.upper[k])
            )
        return np.clip(u, 0.0, 1.0)

    def denormalize(self, u) -> np.ndarray:
        """Map unit-cube coordinates back to the raw domain (inverse of normalize)."""
        u = np.asarray(u, dtype=float)
        if u.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} coordinates, got {u.shape[-1]}")
        return self.lower + u * self.width

    def scale_gradient(self, g) -> np.ndarray:
        """Chain-rule a raw-space gradient into normalized coordinates.

        With u = (x - lower) / width, df/du_k = df/dx_k * width_k.
        """
        g = np.asarray(g, dtype=float)
        if g.shape[-1] != self.dim:
            raise ValueError(f"expected gradient of length {self.dim}, got {g.shape[-1]}")
        return g * self.width


def lhs_unit(n: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Latin hypercube design on [0, 1]^dim with n points.

    Each dimension gets one point per equal-width stratum, placed uniformly
    inside the stratum; stratum order is a random permutation.  Plain LHS,
    no maximin or correlation refinement.
    """
    u = np.empty((n, dim))
    for k in range(dim):
        perm = rng.permutation(n)
        u[:, k] = (perm + rng.random(n)) / n
    return u


def lhs_sample(space: ParameterSpace, n: int, seed: int) -> np.ndarray:
    """Seeded Latin hypercube design in normalized coordinates, shape (n, d)."""
    if n < 1:
        raise ValueError("sample count must be at least 1")
    rng = np.random.default_rng(seed)
    return lhs_unit(n, space.dim, rng)
