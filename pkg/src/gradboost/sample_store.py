"""Canonical dataset of evaluated designs with CSV persistence and fold splitting.

A :class:`Sample` holds one evaluated design in normalized coordinates:
objective value, constraint values, an optional normalized-space gradient,
an evaluation status, and a phase tag.  Gradients may be present at only a
subset of the samples; the count with gradients never exceeds the count of
samples with a valid objective value.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .design_space import ParameterSpace

STATUS_OK = "ok"
STATUS_FAILED = "failed"
STATUS_GRADIENT_FAILED = "gradient_failed"
STATUSES = (STATUS_OK, STATUS_FAILED, STATUS_GRADIENT_FAILED)

TAG_DOE = "doe"
TAG_EGO = "ego"
TAGS = (TAG_DOE, TAG_EGO)

# L-inf tolerance below which two samples with valid objectives count as
# duplicates; repeated designs would make correlation matrices singular.
DEDUP_TOL = 1e-10


class DimensionMismatchError(ValueError):
    pass


class DuplicatePointError(ValueError):
    pass


class HeaderMismatchError(ValueError):
    pass


class MalformedRowError(ValueError):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


def format_float(v: float) -> str:
    """Serialize a double with 17 significant digits (lossless round-trip).

    Negative zero is normalized to zero.
    """
    v = float(v)
    if v == 0.0:
        v = 0.0
    return format(v, ".17g")


@dataclass(eq=False)
class Sample:
    """One evaluated design in normalized coordinates.

    ``status == "failed"`` means the primal evaluation produced nothing
    usable: y and constraints are absent.  ``status == "gradient_failed"``
    keeps the objective and constraints but carries no gradient.
    """

    x: np.ndarray
    y: float | None
    constraints: np.ndarray = field(default_factory=lambda: np.zeros(0))
    grad: np.ndarray | None = None
    status: str = STATUS_OK
    tag: str = TAG_DOE

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if self.x.ndim != 1:
            raise DimensionMismatchError("sample coordinates must be a 1-D vector")
        if np.any(self.x < -1e-9) or np.any(self.x > 1.0 + 1e-9):
            raise ValueError("sample coordinates must lie in the unit cube")
        self.x = np.clip(self.x, 0.0, 1.0)
        self.constraints = np.asarray(self.constraints, dtype=float)
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if self.tag not in TAGS:
            raise ValueError(f"unknown tag {self.tag!r}")
        if self.status == STATUS_FAILED:
            self.y = None
            self.grad = None
            self.constraints = np.zeros(self.constraints.shape)
        else:
            if self.y is None or not np.isfinite(self.y):
                raise ValueError("non-failed sample requires a finite objective value")
            self.y = float(self.y)
            if not np.all(np.isfinite(self.constraints)):
                raise ValueError("constraint values must be finite")
        if self.grad is not None:
            if self.status != STATUS_OK:
                raise ValueError("gradient requires status 'ok'")
            self.grad = np.asarray(self.grad, dtype=float)
            if self.grad.shape != self.x.shape:
                raise DimensionMismatchError("gradient length must match dimension")
            if not np.all(np.isfinite(self.grad)):
                raise ValueError("gradient entries must be finite")

    @property
    def has_value(self) -> bool:
        return self.status != STATUS_FAILED

    @property
    def has_grad(self) -> bool:
        return self.grad is not None

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sample):
            return NotImplemented
        same_grad = (self.grad is None) == (other.grad is None) and (
            self.grad is None or np.array_equal(self.grad, other.grad)
        )
        return (
            np.array_equal(self.x, other.x)
            and self.y == other.y
            and np.array_equal(self.constraints, other.constraints)
            and same_grad
            and self.status == other.status
            and self.tag == other.tag
        )


class SampleSet:
    """Ordered collection of samples sharing one domain and constraint count.

    A single writer owns the authoritative set during an optimization run;
    ``copy()`` hands read-only snapshots to concurrent readers.
    """

    def __init__(self, space: ParameterSpace, m: int = 0, samples=()):
        if m < 0:
            raise ValueError("constraint count must be nonnegative")
        self.space = space
        self.m = m
        self.samples: list[Sample] = []
        for s in samples:
            self.add(s)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    def __eq__(self, other) -> bool:
        if not isinstance(other, SampleSet):
            return NotImplemented
        return (
            np.array_equal(self.space.lower, other.space.lower)
            and np.array_equal(self.space.upper, other.space.upper)
            and self.m == other.m
            and self.samples == other.samples
        )

    def copy(self) -> "SampleSet":
        out = SampleSet(self.space, self.m)
        out.samples = list(self.samples)
        return out

    def add(self, sample: Sample) -> None:
        """Append a sample; rejects dimension mismatches and duplicates.

        Duplicate means closer than 1e-10 in L-inf normalized distance to an
        existing sample with a valid objective; failed evaluations are
        recorded unconditionally.
        """
        if sample.x.size != self.space.dim:
            raise DimensionMismatchError(
                f"sample has {sample.x.size} coordinates, space has {self.space.dim}"
            )
        if sample.constraints.size != self.m:
            raise DimensionMismatchError(
                f"sample has {sample.constraints.size} constraints, set expects {self.m}"
            )
        if sample.has_value:
            for other in self.samples:
                if other.has_value and np.max(np.abs(other.x - sample.x)) < DEDUP_TOL:
                    raise DuplicatePointError(
                        f"sample at {sample.x} duplicates an existing design"
                    )
        self.samples.append(sample)

    # -- views used by the modeling layers --------------------------------

    def valid_indices(self) -> list[int]:
        """Indices of samples with a usable objective value."""
        return [i for i, s in enumerate(self.samples) if s.has_value]

    def grad_indices(self) -> list[int]:
        """Indices of samples carrying a gradient."""
        return [i for i, s in enumerate(self.samples) if s.has_grad]

    @property
    def n_valid(self) -> int:
        return len(self.valid_indices())

    @property
    def n_grad(self) -> int:
        return len(self.grad_indices())

    def design_matrix(self, indices=None) -> np.ndarray:
        idx = self.valid_indices() if indices is None else list(indices)
        if not idx:
            return np.zeros((0, self.space.dim))
        return np.array([self.samples[i].x for i in idx])

    def responses(self, indices=None) -> np.ndarray:
        idx = self.valid_indices() if indices is None else list(indices)
        return np.array([self.samples[i].y for i in idx], dtype=float)

    def constraint_matrix(self, indices=None) -> np.ndarray:
        idx = self.valid_indices() if indices is None else list(indices)
        if not idx:
            return np.zeros((0, self.m))
        return np.array([self.samples[i].constraints for i in idx])

    def subset(self, indices) -> "SampleSet":
        """New set holding the given samples (order preserved)."""
        out = SampleSet(self.space, self.m)
        out.samples = [self.samples[i] for i in indices]
        return out


# -- fold splitting ---------------------------------------------------------


def split_folds(sset: SampleSet, k: int, seed: int) -> list[np.ndarray]:
    """Partition the valid-sample indices into k folds of near-equal size.

    Fold sizes differ by at most one; the assignment is a seeded shuffle.
    """
    valid = np.array(sset.valid_indices(), dtype=int)
    n = valid.size
    if k < 2 or k > n:
        raise ValueError(f"fold count {k} out of range [2, {n}]")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(n)
    return [np.sort(valid[part]) for part in np.array_split(perm, k)]


# -- CSV persistence --------------------------------------------------------

# Column layout: x1..xd, y, c1..cm, has_grad, g1..gd, status, tag.
# Gradient cells are empty when has_grad=0; y and constraint cells are empty
# for failed evaluations.  Coordinates are stored normalized; the raw bounds
# travel in a "#bounds" comment line so files are self-describing.


def _header_columns(d: int, m: int) -> list[str]:
    cols = [f"x{k + 1}" for k in range(d)]
    cols.append("y")
    cols += [f"c{j + 1}" for j in range(m)]
    cols.append("has_grad")
    cols += [f"g{k + 1}" for k in range(d)]
    cols += ["status", "tag"]
    return cols


def _bounds_line(space: ParameterSpace) -> str:
    lo = ",".join(format_float(v) for v in space.lower)
    hi = ",".join(format_float(v) for v in space.upper)
    return f"#bounds lower={lo} upper={hi}"


def _parse_bounds_line(line: str, lineno: int) -> ParameterSpace:
    try:
        body = line[len("#bounds"):].strip()
        parts = dict(token.split("=", 1) for token in body.split())
        lower = [float(v) for v in parts["lower"].split(",")]
        upper = [float(v) for v in parts["upper"].split(",")]
        return ParameterSpace(np.array(lower), np.array(upper))
    except Exception as exc:
        raise MalformedRowError(lineno, f"bad #bounds line: {exc}") from exc


def save_csv(sset: SampleSet, path, header_comments=()) -> None:
    """Write the set as UTF-8 CSV with LF endings and 17-digit floats."""
    d, m = sset.space.dim, sset.m
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for comment in header_comments:
            fh.write(f"# {comment}\n")
        fh.write(_bounds_line(sset.space) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(_header_columns(d, m))
        for s in sset:
            row = [format_float(v) for v in s.x]
            if s.has_value:
                row.append(format_float(s.y))
                row += [format_float(c) for c in s.constraints]
            else:
                row.append("")
                row += [""] * m
            if s.has_grad:
                row.append("1")
                row += [format_float(g) for g in s.grad]
            else:
                row.append("0")
                row += [""] * d
            row += [s.status, s.tag]
            writer.writerow(row)


def _parse_float(cell: str, lineno: int, what: str) -> float:
    try:
        v = float(cell)
    except ValueError as exc:
        raise MalformedRowError(lineno, f"non-numeric {what}: {cell!r}") from exc
    if not np.isfinite(v):
        raise MalformedRowError(lineno, f"non-finite {what}: {cell!r}")
    return v


def load_csv(path, space: ParameterSpace | None = None) -> SampleSet:
    """Read a sample CSV written by :func:`save_csv`.

    If ``space`` is given it must match the file's #bounds line exactly;
    otherwise the bounds are taken from the file.
    """
    with open(path, "r", newline="", encoding="utf-8") as fh:
        text = fh.read()

    file_space = None
    header_cols = None
    data_rows: list[tuple[int, list[str]]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        if line.startswith("#bounds"):
            file_space = _parse_bounds_line(line, lineno)
            continue
        if line.startswith("#"):
            continue
        cells = next(csv.reader(io.StringIO(line)))
        if header_cols is None:
            header_cols = [c.strip() for c in cells]
            header_lineno = lineno
            continue
        data_rows.append((lineno, cells))

    if file_space is None and space is None:
        raise HeaderMismatchError("no #bounds line and no space provided")
    if file_space is not None and space is not None:
        if not (
            np.array_equal(file_space.lower, space.lower)
            and np.array_equal(file_space.upper, space.upper)
        ):
            raise HeaderMismatchError("file bounds disagree with the provided space")
    use_space = space if space is not None else file_space

    if header_cols is None:
        raise HeaderMismatchError("missing header row")
    d = use_space.dim
    # Infer m from the header length, then demand an exact column match.
    m = len(header_cols) - (2 * d + 4)
    if m < 0 or header_cols != _header_columns(d, m):
        raise HeaderMismatchError(
            f"header {header_cols!r} does not match the expected schema (line {header_lineno})"
        )

    out = SampleSet(use_space, m)
    n_cols = 2 * d + m + 4
    for lineno, cells in data_rows:
        if len(cells) != n_cols:
            raise MalformedRowError(lineno, f"expected {n_cols} cells, got {len(cells)}")
        x = np.array([_parse_float(c, lineno, "coordinate") for c in cells[:d]])
        status = cells[d + m + 2 + d].strip()
        tag = cells[d + m + 3 + d].strip()
        if status not in STATUSES:
            raise MalformedRowError(lineno, f"unknown status {status!r}")
        if tag not in TAGS:
            raise MalformedRowError(lineno, f"unknown tag {tag!r}")
        y_cell = cells[d].strip()
        c_cells = cells[d + 1 : d + 1 + m]
        if status == STATUS_FAILED:
            y = None
            constraints = np.zeros(m)
        else:
            y = _parse_float(y_cell, lineno, "objective")
            constraints = np.array(
                [_parse_float(c, lineno, "constraint") for c in c_cells]
            )
        has_grad_cell = cells[d + 1 + m].strip()
        if has_grad_cell not in ("0", "1"):
            raise MalformedRowError(lineno, f"has_grad must be 0 or 1, got {has_grad_cell!r}")
        g_cells = cells[d + 2 + m : d + 2 + m + d]
        if has_grad_cell == "1":
            if any(not c.strip() for c in g_cells):
                raise MalformedRowError(lineno, "has_grad=1 but gradient cells are empty")
            grad = np.array([_parse_float(c, lineno, "gradient") for c in g_cells])
        else:
            grad = None
        try:
            sample = Sample(x, y, constraints, grad, status, tag)
        except ValueError as exc:
            raise MalformedRowError(lineno, str(exc)) from exc
        out.add(sample)
    return out
