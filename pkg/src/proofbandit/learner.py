"""Least-squares label predictors refit from scratch on the accumulated dataset."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from proofbandit.environment import Dataset, EnvSpec, generate_features, label_mean
from proofbandit.spaces import FiniteActions

DEFAULT_RIDGE_SCALE = 1e-8


class SingularDesignError(ValueError):
    pass


class UnexploredActionError(ValueError):
    pass


@dataclass(frozen=True)
class OlsModel:
    F_hat: np.ndarray
    n_train: int
    ridge_eps: float

    def to_json(self) -> str:
        return json.dumps({"F_hat": self.F_hat.tolist(), "n_train": self.n_train, "ridge_eps": self.ridge_eps})


@dataclass(frozen=True)
class JointOlsModel:
    """Regression of labels on the stacked regressor [x; w]."""

    FG_hat: np.ndarray
    n_train: int
    ridge_eps: float
    m: int

    @property
    def F_hat(self) -> np.ndarray:
        return self.FG_hat[:, : self.m]

    @property
    def G_hat(self) -> np.ndarray:
        return self.FG_hat[:, self.m :]

    def to_json(self) -> str:
        return json.dumps({"FG_hat": self.FG_hat.tolist(), "n_train": self.n_train,
                           "ridge_eps": self.ridge_eps, "m": self.m})


@dataclass(frozen=True)
class PerActionOls:
    models: dict
    counts: dict


def least_squares(X: np.ndarray, Y: np.ndarray, ridge_eps: Optional[float] = None):
    """Solve ``min_B ||X B' - Y||_F^2 + ridge ||B||_F^2``; returns ``(B, ridge)``.

    ``ridge_eps=None`` picks ``1e-8 * trace(X'X) / p``. With ``ridge_eps=0`` a
    rank-deficient design raises :class:`SingularDesignError`.
    """
    if X.shape[0] == 0:
        raise ValueError("cannot fit on an empty dataset")
    p = X.shape[1]
    gram = X.T @ X
    if ridge_eps is None:
        ridge_eps = DEFAULT_RIDGE_SCALE * float(np.trace(gram)) / p
    if ridge_eps < 0:
        raise ValueError("ridge_eps must be nonnegative")
    system = gram + ridge_eps * np.eye(p)
    try:
        if ridge_eps == 0 and np.linalg.matrix_rank(gram) < p:
            raise LinAlgError("rank deficient")
        factor = cho_factor(system, lower=True, check_finite=True)
    except LinAlgError as exc:
        raise SingularDesignError("singular design") from exc
    B = cho_solve(factor, X.T @ Y).T
    return B, float(ridge_eps)


def fit_ols(dataset: Dataset, ridge_eps: Optional[float] = None) -> OlsModel:
    F_hat, eps = least_squares(dataset.X, dataset.C, ridge_eps)
    return OlsModel(F_hat=F_hat, n_train=len(dataset), ridge_eps=eps)


def fit_joint(dataset: Dataset, ridge_eps: Optional[float] = None) -> JointOlsModel:
    Z = np.hstack([dataset.X, dataset.W])
    FG_hat, eps = least_squares(Z, dataset.C, ridge_eps)
    return JointOlsModel(FG_hat=FG_hat, n_train=len(dataset), ridge_eps=eps, m=dataset.m)


def fit_per_action(dataset: Dataset, action_space: FiniteActions, ridge_eps: Optional[float] = None) -> PerActionOls:
    """One OLS model per action, each fit only on records collected under it."""
    idx = action_space.indices_of(dataset.W) if len(dataset) else np.empty(0, dtype=int)
    models, counts = {}, {}
    for k in range(len(action_space)):
        mask = idx == k
        count = int(mask.sum())
        if count == 0:
            raise UnexploredActionError(f"unexplored action {k}")
        F_hat, eps = least_squares(dataset.X[mask], dataset.C[mask], ridge_eps)
        models[k] = OlsModel(F_hat=F_hat, n_train=count, ridge_eps=eps)
        counts[k] = count
    return PerActionOls(models=models, counts=counts)


def predict(model, x, w=None) -> np.ndarray:
    """Prediction for one feature vector or a stack of them (rows)."""
    x = np.asarray(x, dtype=float)
    if isinstance(model, JointOlsModel):
        if w is None:
            raise ValueError("joint model needs an action")
        w = np.asarray(w, dtype=float)
        z = np.concatenate([x, w], axis=-1)
        B = model.FG_hat
    else:
        z, B = x, model.F_hat
    if z.shape[-1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: model expects {B.shape[1]}, got {z.shape[-1]}")
    return z @ B.T


def prediction_error(model, spec: EnvSpec, n_eval: int, rng: np.random.Generator, w=None) -> float:
    """Monte Carlo estimate of ``E_x ||E[c|x] - c_hat(x)||_2`` on fresh features."""
    if n_eval < 1:
        raise ValueError("n_eval must be >= 1")
    xs = generate_features(spec, n_eval, rng)
    if isinstance(model, JointOlsModel):
        ws = np.broadcast_to(np.asarray(w, dtype=float), (n_eval, spec.d))
        truth = label_mean(spec, xs, ws)
        pred = predict(model, xs, ws)
    else:
        if spec.setting == "per_action":
            ws = np.broadcast_to(np.asarray(w, dtype=float), (n_eval, spec.d))
            truth = label_mean(spec, xs, ws)
        else:
            truth = xs @ spec.F.T
        pred = predict(model, xs)
    return float(np.mean(np.linalg.norm(truth - pred, axis=1)))
