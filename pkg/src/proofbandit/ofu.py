"""OFU linear-bandit state: spanner initialization, design matrix, estimate, ball radius."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from proofbandit.spaces import ActionSpace, FiniteActions, UnitBall

BALL_SLACK = 1e-12


class DegenerateActionSetError(ValueError):
    pass


def barycentric_spanner(action_space: ActionSpace, C: float = 2.0) -> np.ndarray:
    """Return a C-approximate barycentric spanner as the rows of a (d, d) array.

    The unit ball is spanned exactly by the standard basis. For a finite set we
    pick the first linearly independent actions in order, then keep swapping in
    any action that multiplies ``|det|`` by more than ``C`` until none does.
    """
    if isinstance(action_space, UnitBall):
        return np.eye(action_space.d)
    if not isinstance(action_space, FiniteActions):
        raise TypeError(f"unsupported action space {action_space!r}")

    acts = action_space.actions
    d = action_space.d
    chosen: list[int] = []
    for k in range(len(acts)):
        trial = acts[chosen + [k]]
        if np.linalg.matrix_rank(trial, tol=1e-10) == len(chosen) + 1:
            chosen.append(k)
            if len(chosen) == d:
                break
    if len(chosen) < d:
        raise DegenerateActionSetError("degenerate action set: actions do not span R^d")

    basis = acts[chosen].copy()
    cur = abs(np.linalg.det(basis))
    improved = True
    while improved:
        improved = False
        for j in range(d):
            for k in range(len(acts)):
                trial = basis.copy()
                trial[j] = acts[k]
                val = abs(np.linalg.det(trial))
                if val > C * cur:
                    basis, cur = trial, val
                    improved = True
    return basis


def beta_schedule(t: int, n: int, d: int, gamma: float) -> float:
    """Theoretical confidence-ball radius (squared) at round ``t``; natural logs."""
    if not 0.0 < gamma < 1.0:
        raise ValueError("gamma must lie in (0, 1)")
    if t < 1:
        raise ValueError("t must be >= 1")
    inner = math.log(n * t * t / gamma)
    return max(128.0 * d * math.log(t) * inner, (8.0 / 3.0 * inner) ** 2)


@dataclass(frozen=True)
class EllipsoidState:
    A: np.ndarray
    mu_hat: np.ndarray
    s: np.ndarray
    t_local: int = 0

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "mu_hat": self.mu_hat.tolist(),
            "s": self.s.tolist(),
            "t_local": self.t_local,
        }


def initial_state(spanner: np.ndarray) -> EllipsoidState:
    spanner = np.asarray(spanner, dtype=float)
    d = spanner.shape[1]
    return EllipsoidState(A=spanner.T @ spanner, mu_hat=np.zeros(d), s=np.zeros(d), t_local=0)


def _spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    L = np.linalg.cholesky(A)
    return np.linalg.solve(L.T, np.linalg.solve(L, b))


def update(state: EllipsoidState, w, u_b: float) -> EllipsoidState:
    """Rank-one update of the design matrix and the regressand sum."""
    w = np.asarray(w, dtype=float)
    A = state.A + np.outer(w, w)
    s = state.s + u_b * w
    return EllipsoidState(A=A, mu_hat=_spd_solve(A, s), s=s, t_local=state.t_local + 1)


@dataclass(frozen=True)
class ConfidenceBall:
    """Ellipsoid {nu : (nu - center)' A (nu - center) <= radius_sq}."""

    center: np.ndarray
    A: np.ndarray
    radius_sq: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=float)
        A = np.asarray(self.A, dtype=float)
        if A.shape != (c.size, c.size):
            raise ValueError("ball matrix and center dimensions disagree")
        if self.radius_sq < 0:
            raise ValueError("radius_sq must be nonnegative")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "A", A)

    @property
    def d(self) -> int:
        return self.center.size


def contains(ball: ConfidenceBall, nu) -> bool:
    diff = np.asarray(nu, dtype=float) - ball.center
    if diff.shape != ball.center.shape:
        raise ValueError("dimension mismatch")
    return bool(diff @ ball.A @ diff <= ball.radius_sq + BALL_SLACK)


class BanditBank:
    """Stacked OFU states for the n individuals of a round.

    With ``pooled=True`` a single state is shared and every individual's
    observation updates it.
    """

    def __init__(self, spanner: np.ndarray, n: int, pooled: bool = False):
        spanner = np.asarray(spanner, dtype=float)
        self.d = spanner.shape[1]
        self.n = n
        self.pooled = pooled
        k = 1 if pooled else n
        self.A = np.broadcast_to(spanner.T @ spanner, (k, self.d, self.d)).copy()
        self.s = np.zeros((k, self.d))
        self.mu_hat = np.zeros((k, self.d))
        self.t_local = 0
        self._refresh_inverse()

    def _refresh_inverse(self):
        self.A_inv = np.linalg.inv(self.A)

    def _expand(self, arr: np.ndarray) -> np.ndarray:
        if self.pooled:
            return np.broadcast_to(arr, (self.n,) + arr.shape[1:])
        return arr

    @property
    def centers(self) -> np.ndarray:
        return self._expand(self.mu_hat)

    @property
    def matrices(self) -> np.ndarray:
        return self._expand(self.A)

    @property
    def inverses(self) -> np.ndarray:
        return self._expand(self.A_inv)

    def update(self, ws: np.ndarray, u_b: np.ndarray):
        ws = np.asarray(ws, dtype=float)
        u_b = np.asarray(u_b, dtype=float)
        outer = ws[:, :, None] * ws[:, None, :]
        if self.pooled:
            self.A = self.A + outer.sum(axis=0, keepdims=True)
            self.s = self.s + (u_b[:, None] * ws).sum(axis=0, keepdims=True)
        else:
            self.A = self.A + outer
            self.s = self.s + u_b[:, None] * ws
        self.mu_hat = np.linalg.solve(self.A, self.s[:, :, None])[:, :, 0]
        self.t_local += 1
        self._refresh_inverse()

    def ball(self, i: int, radius_sq: float) -> ConfidenceBall:
        k = 0 if self.pooled else i
        return ConfidenceBall(self.mu_hat[k].copy(), self.A[k].copy(), radius_sq)

    def state(self, i: int) -> EllipsoidState:
        k = 0 if self.pooled else i
        return EllipsoidState(self.A[k].copy(), self.mu_hat[k].copy(), self.s[k].copy(), self.t_local)

    def contains_all(self, nu, radius_sq: float) -> bool:
        diff = np.asarray(nu, dtype=float)[None, :] - self.mu_hat
        form = np.einsum("ki,kij,kj->k", diff, self.A, diff)
        return bool(np.all(form <= radius_sq + BALL_SLACK))

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.A).all() and np.isfinite(self.mu_hat).all())
