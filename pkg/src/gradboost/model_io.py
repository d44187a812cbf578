"""Trained-model persistence.

Every surrogate serializes to one self-describing JSON text file with a
versioned header, the kernel hyperparameters, and the training sample data
inline, so a saved model reloads without access to the original dataset.
JSON doubles round-trip exactly.  On load the linear systems are refit with
the stored hyperparameters and nugget, which reproduces the solved weights
bit for bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import gek, kriging
from .aggregation import AggregationModel
from .design_space import ParameterSpace
from .gek import GekModel
from .kriging import CorrelationParams, KrigingModel

FORMAT_NAME = "gradboost-model"
FORMAT_VERSION = 1


class ModelFormatError(ValueError):
    pass


def _space_to_dict(space: ParameterSpace) -> dict:
    return {"lower": space.lower.tolist(), "upper": space.upper.tolist()}


def _space_from_dict(d: dict) -> ParameterSpace:
    return ParameterSpace(np.array(d["lower"]), np.array(d["upper"]))


def _kriging_payload(model: KrigingModel) -> dict:
    return {
        "type": "kriging",
        "space": _space_to_dict(model.space),
        "X": model.X.tolist(),
        "y": model.y.tolist(),
        "theta": model.params.theta.tolist(),
        "gamma": model.params.gamma.tolist(),
        "beta0": model.beta0,
        "sigma2": model.sigma2,
        "nugget": model.nugget,
        "log_likelihood": model.log_likelihood,
    }


def _kriging_from_payload(payload: dict) -> KrigingModel:
    space = _space_from_dict(payload["space"])
    params = CorrelationParams(np.array(payload["theta"]), np.array(payload["gamma"]))
    return kriging.fit(
        space,
        np.array(payload["X"]),
        np.array(payload["y"]),
        params,
        fixed_nugget=payload["nugget"],
    )


def _gek_payload(model: GekModel) -> dict:
    return {
        "type": "gek-direct",
        "space": _space_to_dict(model.space),
        # block-structure marker: value rows then per-gradient-sample rows
        "blocks": {
            "n_values": int(model.X.shape[0]),
            "n_grad_samples": int(model.Xg.shape[0]),
            "dim": int(model.X.shape[1]),
        },
        "X": model.X.tolist(),
        "y": model.y.tolist(),
        "Xg": model.Xg.tolist(),
        "G": model.G.tolist(),
        "grad_indices": list(model.grad_indices),
        "theta": model.params.theta.tolist(),
        "gamma": model.params.gamma.tolist(),
        "beta0": model.beta0,
        "sigma2": model.sigma2,
        "nugget": model.nugget,
        "log_likelihood": model.log_likelihood,
        "rcond": model.rcond,
    }


def _gek_from_payload(payload: dict) -> GekModel:
    space = _space_from_dict(payload["space"])
    params = CorrelationParams(np.array(payload["theta"]), np.array(payload["gamma"]))
    X = np.array(payload["X"])
    y = np.array(payload["y"])
    Xg = np.array(payload["Xg"])
    G = np.array(payload["G"])
    n, d = X.shape
    ng = Xg.shape[0]
    A = np.empty((n + ng * d, n + ng * d))
    A[:n, :n] = kriging.build_correlation_matrix(X, params)
    vg = gek._value_grad_block(X, Xg, params)
    A[:n, n:] = vg
    A[n:, :n] = vg.T
    A[n:, n:] = gek._grad_grad_block(Xg, params)
    A = 0.5 * (A + A.T)
    y_aug = np.concatenate([y, G.reshape(-1)])
    F = np.concatenate([np.ones(n), np.zeros(ng * d)])
    nugget = payload["nugget"]
    L = np.linalg.cholesky(A + nugget * np.eye(A.shape[0]) if nugget else A)
    from scipy.linalg import solve_triangular

    u = solve_triangular(L, F, lower=True)
    v = solve_triangular(L, y_aug, lower=True)
    beta0 = float((u @ v) / (u @ u))
    a = v - beta0 * u
    sigma2 = float(a @ a) / A.shape[0]
    w = solve_triangular(L.T, a, lower=False)
    return GekModel(
        space=space,
        X=X,
        y=y,
        Xg=Xg,
        G=G,
        grad_indices=list(payload["grad_indices"]),
        params=params,
        beta0=beta0,
        sigma2=sigma2,
        nugget=nugget,
        chol=L,
        w=w,
        log_likelihood=payload["log_likelihood"],
        rcond=payload.get("rcond", float("nan")),
    )


def _aggregation_payload(model: AggregationModel) -> dict:
    return {
        "type": "aggregation",
        "primal": _kriging_payload(model.primal),
        "grad_indices": list(model.grad_indices),
        "Xg": model.Xg.tolist(),
        "yg": model.yg.tolist(),
        "Gg": model.Gg.tolist(),
        "rho": model.rho,
        "rho_grid": model.rho_grid.tolist(),
        "cv_errors": None if model.cv_errors is None else model.cv_errors.tolist(),
    }


def _aggregation_from_payload(payload: dict) -> AggregationModel:
    primal = _kriging_from_payload(payload["primal"])
    cv = payload["cv_errors"]
    d = primal.X.shape[1]
    grad_indices = list(payload["grad_indices"])
    Xg = np.array(payload["Xg"]).reshape(len(grad_indices), d) if grad_indices else np.zeros((0, d))
    Gg = np.array(payload["Gg"]).reshape(len(grad_indices), d) if grad_indices else np.zeros((0, d))
    return AggregationModel(
        primal=primal,
        grad_indices=grad_indices,
        Xg=Xg,
        yg=np.array(payload["yg"]),
        Gg=Gg,
        rho=payload["rho"],
        rho_grid=np.array(payload["rho_grid"]),
        cv_errors=None if cv is None else np.array(cv),
    )


def model_type(model) -> str:
    if isinstance(model, AggregationModel):
        return "aggregation"
    if isinstance(model, GekModel):
        return "gek-direct"
    if isinstance(model, KrigingModel):
        return "kriging"
    raise ModelFormatError(f"unsupported model object {type(model)!r}")


def save_model(model, path, config_hash: str = "", extra: dict | None = None) -> None:
    kind = model_type(model)
    if kind == "aggregation":
        payload = _aggregation_payload(model)
    elif kind == "gek-direct":
        payload = _gek_payload(model)
    else:
        payload = _kriging_payload(model)
    doc = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config_hash": config_hash,
    }
    if extra:
        doc.update(extra)
    doc.update(payload)
    Path(path).write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")


def load_model(path):
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("format") != FORMAT_NAME:
        raise ModelFormatError(f"not a {FORMAT_NAME} file: {path}")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model format version {doc.get('version')}")
    kind = doc.get("type")
    if kind == "kriging":
        return _kriging_from_payload(doc)
    if kind == "gek-direct":
        return _gek_from_payload(doc)
    if kind == "aggregation":
        return _aggregation_from_payload(doc)
    raise ModelFormatError(f"unknown model type {kind!r}")
