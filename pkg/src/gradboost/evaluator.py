"""Black-box function backends.

Built-in analytic benchmarks with exact gradients stand in for expensive
simulations; a seeded noise model perturbs or drops gradients to mimic
unreliable adjoint solves (the objective value itself is never touched);
an external-process protocol drives arbitrary solver scripts through
``design.in`` / ``design.out`` text files.
"""

from __future__ import annotations

import logging
import math
import os
import shlex
import subprocess
import threading
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .sample_store import STATUS_FAILED, STATUS_GRADIENT_FAILED, STATUS_OK, format_float

logger = logging.getLogger(__name__)

WORKDIR_ENV = "GRADBOOST_WORKDIR"
DEFAULT_TIMEOUT = 3600.0


class UnknownFunctionError(ValueError):
    pass


@dataclass
class EvalResult:
    """Outcome of one black-box evaluation in raw coordinates.

    ``status == "failed"`` carries nothing usable; ``gradient_failed`` keeps
    the objective and constraints but no gradient.
    """

    y: float | None
    constraints: np.ndarray
    grad: np.ndarray | None = None
    status: str = STATUS_OK

    def __post_init__(self):
        self.constraints = np.asarray(self.constraints, dtype=float)
        if self.grad is not None:
            self.grad = np.asarray(self.grad, dtype=float)


# -- analytic benchmark functions --------------------------------------------


def _sphere(x: np.ndarray) -> tuple[float, np.ndarray]:
    return float(x @ x), 2.0 * x


def _rosenbrock(x: np.ndarray) -> tuple[float, np.ndarray]:
    if x.size < 2:
        raise ValueError("rosenbrock needs at least 2 dimensions")
    a = x[1:] - x[:-1] ** 2
    y = float(np.sum(100.0 * a**2 + (1.0 - x[:-1]) ** 2))
    g = np.zeros_like(x)
    g[:-1] = -400.0 * x[:-1] * a - 2.0 * (1.0 - x[:-1])
    g[1:] += 200.0 * a
    return y, g


def _branin(x: np.ndarray) -> tuple[float, np.ndarray]:
    if x.size != 2:
        raise ValueError("branin is 2-dimensional")
    a, b, c = 1.0, 5.1 / (4.0 * math.pi**2), 5.0 / math.pi
    r, s, t = 6.0, 10.0, 1.0 / (8.0 * math.pi)
    inner = x[1] - b * x[0] ** 2 + c * x[0] - r
    y = a * inner**2 + s * (1.0 - t) * math.cos(x[0]) + s
    g = np.array(
        [
            2.0 * a * inner * (-2.0 * b * x[0] + c) - s * (1.0 - t) * math.sin(x[0]),
            2.0 * a * inner,
        ]
    )
    return float(y), g


def _rastrigin(x: np.ndarray) -> tuple[float, np.ndarray]:
    y = 10.0 * x.size + float(np.sum(x**2 - 10.0 * np.cos(2.0 * math.pi * x)))
    g = 2.0 * x + 20.0 * math.pi * np.sin(2.0 * math.pi * x)
    return y, g


def _linear_slope(x: np.ndarray) -> tuple[float, np.ndarray]:
    return float(np.sum(x)), np.ones_like(x)


BUILTINS = {
    "sphere": _sphere,
    "rosenbrock": _rosenbrock,
    "branin": _branin,
    "rastrigin": _rastrigin,
    "linear-slope": _linear_slope,
}


def evaluate_builtin(
    name: str, x, constraint: tuple[float, float] | None = None
) -> EvalResult:
    """Exact value and analytic gradient of a benchmark function.

    ``constraint=(a, t)`` adds the linear inequality c(x) = a*(x1 - t),
    feasible when c <= 0.
    """
    if name not in BUILTINS:
        raise UnknownFunctionError(
            f"unknown builtin {name!r}; available: {sorted(BUILTINS)}"
        )
    x = np.asarray(x, dtype=float)
    y, g = BUILTINS[name](x)
    constraints = np.zeros(0)
    if constraint is not None:
        a, t = constraint
        constraints = np.array([a * (x[0] - t)])
    return EvalResult(y=y, constraints=constraints, grad=g, status=STATUS_OK)


class BuiltinEvaluator:
    """Callable wrapper binding a builtin name and optional linear constraint."""

    def __init__(self, name: str, constraint: tuple[float, float] | None = None):
        if name not in BUILTINS:
            raise UnknownFunctionError(f"unknown builtin {name!r}")
        self.name = name
        self.constraint = constraint
        self.m = 0 if constraint is None else 1

    def __call__(self, x, index: int = 0) -> EvalResult:
        return evaluate_builtin(self.name, x, self.constraint)


# -- gradient noise -----------------------------------------------------------


@dataclass
class NoiseSpec:
    """Seeded gradient degradation: relative perturbation plus dropouts.

    ``level`` scales a random unit direction by the gradient's L2 norm, so
    the perturbation magnitude is level * ||grad|| regardless of dimension;
    ``drop_rate`` is the probability the gradient is discarded entirely
    (status becomes gradient_failed).  Objective values are never altered.
    """

    level: float = 0.0
    drop_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.level < 0:
            raise ValueError("noise level must be nonnegative")
        if not (0.0 <= self.drop_rate <= 1.0):
            raise ValueError("drop rate must lie in [0, 1]")


def with_noise(result: EvalResult, spec: NoiseSpec, index: int) -> EvalResult:
    """Apply the noise model to one result; deterministic per (seed, index)."""
    if result.status != STATUS_OK or result.grad is None:
        return result
    rng = np.random.default_rng([spec.seed, index])
    dropped = rng.random() < spec.drop_rate
    if dropped:
        return replace(result, grad=None, status=STATUS_GRADIENT_FAILED)
    if spec.level == 0.0:
        return result
    norm = float(np.linalg.norm(result.grad))
    if norm == 0.0:
        return result
    z = rng.standard_normal(result.grad.size)
    z /= np.linalg.norm(z)
    return replace(result, grad=result.grad + spec.level * norm * z)


# -- external-process protocol ------------------------------------------------

# design.in: line 1 holds the dimension, lines 2..d+1 the raw coordinates
# (17 significant digits).  The command is invoked with two arguments,
# the input and output filenames, inside a private run directory.
# design.out grammar, one record per line:
#     objective <float>            required
#     constraint <float>           zero or more, in order
#     gradient                     optional marker, followed by d float lines


def write_design_file(path, x: np.ndarray) -> None:
    x = np.asarray(x, dtype=float)
    lines = [str(x.size)] + [format_float(v) for v in x]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_design_file(path) -> np.ndarray:
    lines = Path(path).read_text(encoding="utf-8").split()
    d = int(lines[0])
    return np.array([float(v) for v in lines[1 : d + 1]])


class _ParseFailure(Exception):
    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"design.out line {line}: {message}")


def _parse_design_out(text: str, dim: int) -> tuple[float, np.ndarray, np.ndarray | None]:
    objective = None
    constraints: list[float] = []
    grad: np.ndarray | None = None
    lines = text.splitlines()
    i = 0
    while i < len(lines):
        lineno = i + 1
        tokens = lines[i].split()
        i += 1
        if not tokens:
            continue
        key = tokens[0].lower()
        if key == "objective" and len(tokens) == 2:
            try:
                objective = float(tokens[1])
            except ValueError as exc:
                raise _ParseFailure(lineno, f"bad objective value {tokens[1]!r}") from exc
        elif key == "constraint" and len(tokens) == 2:
            try:
                constraints.append(float(tokens[1]))
            except ValueError as exc:
                raise _ParseFailure(lineno, f"bad constraint value {tokens[1]!r}") from exc
        elif key == "gradient" and len(tokens) == 1:
            values = []
            for k in range(dim):
                if i >= len(lines):
                    raise _ParseFailure(lineno, f"gradient needs {dim} component lines")
                try:
                    values.append(float(lines[i].split()[0]))
                except (ValueError, IndexError) as exc:
                    raise _ParseFailure(i + 1, "bad gradient component") from exc
                i += 1
            grad = np.array(values)
        else:
            raise _ParseFailure(lineno, f"unrecognized record {lines[i - 1]!r}")
    if objective is None or not np.isfinite(objective):
        raise _ParseFailure(0, "missing or non-finite objective record")
    return objective, np.array(constraints), grad


def evaluate_external(
    command: str,
    x,
    workdir,
    index: int = 0,
    timeout: float = DEFAULT_TIMEOUT,
) -> EvalResult:
    """Run one external evaluation inside workdir/run-<index>.

    Spawn errors, nonzero exits, timeouts, and unparsable output all map to
    a failed result with a diagnostic log line; a parsable objective without
    a gradient yields gradient_failed.
    """
    x = np.asarray(x, dtype=float)
    rundir = Path(workdir) / f"run-{index}"
    rundir.mkdir(parents=True, exist_ok=True)
    infile = rundir / "design.in"
    outfile = rundir / "design.out"
    write_design_file(infile, x)
    argv = shlex.split(command) + [infile.name, outfile.name]
    try:
        proc = subprocess.run(
            argv,
            cwd=rundir,
            timeout=timeout,
            capture_output=True,
            text=True,
        )
    except (OSError, subprocess.SubprocessError) as exc:
        logger.warning("external evaluation %d failed to run: %s", index, exc)
        return EvalResult(None, np.zeros(0), None, STATUS_FAILED)
    (rundir / "solver.log").write_text(
        proc.stdout + ("\n--- stderr ---\n" + proc.stderr if proc.stderr else ""),
        encoding="utf-8",
    )
    if proc.returncode != 0:
        logger.warning(
            "external evaluation %d exited with code %d", index, proc.returncode
        )
        return EvalResult(None, np.zeros(0), None, STATUS_FAILED)
    if not outfile.exists():
        logger.warning("external evaluation %d produced no output file", index)
        return EvalResult(None, np.zeros(0), None, STATUS_FAILED)
    try:
        y, constraints, grad = _parse_design_out(
            outfile.read_text(encoding="utf-8"), x.size
        )
    except _ParseFailure as exc:
        logger.warning("external evaluation %d unparsable: %s", index, exc)
        return EvalResult(None, np.zeros(0), None, STATUS_FAILED)
    status = STATUS_OK if grad is not None else STATUS_GRADIENT_FAILED
    return EvalResult(y, constraints, grad, status)


def resolve_workdir(configured=None):
    """Working-directory root: GRADBOOST_WORKDIR env var wins over config."""
    env = os.environ.get(WORKDIR_ENV)
    if env:
        return Path(env)
    return Path(configured) if configured is not None else Path("gradboost-runs")


class ExternalEvaluator:
    """Callable wrapper around the subprocess protocol with run indexing."""

    def __init__(self, command: str, workdir=None, timeout: float = DEFAULT_TIMEOUT):
        self.command = command
        self.workdir = resolve_workdir(workdir)
        self.timeout = timeout
        self._lock = threading.Lock()
        self._counter = 0

    def __call__(self, x, index: int | None = None) -> EvalResult:
        if index is None:
            with self._lock:
                index = self._counter
                self._counter += 1
        return evaluate_external(self.command, x, self.workdir, index, self.timeout)
