"""Synthetic linear environment: features, labels, costs and the optimal-policy oracle.

Labels follow ``c = F x + eps`` (base setting), ``c = F_w x + eps`` with one map
per finite action, or ``c = F x + G w + eps`` for continuous actions. The
realized cost of action ``w`` is ``c' w + mu' w + eta``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from proofbandit.solvers import QuadraticForm, descent_direction, trs_batch
from proofbandit.spaces import (
    ActionSpace,
    FiniteActions,
    UnitBall,
    UnknownActionError,
    action_space_from_dict,
)

__all__ = [
    "ActionSpace",
    "Dataset",
    "EnvSpec",
    "FiniteActions",
    "OptimalAction",
    "UnitBall",
    "UnknownActionError",
    "generate_features",
    "l1_operator_norm",
    "label_mean",
    "make_env",
    "optimal_action",
    "optimal_actions",
    "realized_cost",
    "sample_labels",
]

_NORM_TOL = 1e-9


def l1_operator_norm(F: np.ndarray) -> float:
    """Largest absolute row sum."""
    return float(np.abs(F).sum(axis=1).max())


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EnvSpec:
    m: int
    d: int
    n: int
    F: np.ndarray
    mu: np.ndarray
    sigma_label: float
    sigma_bandit: float
    action_space: ActionSpace
    feature_cov: np.ndarray
    G: Optional[np.ndarray] = None
    per_action_F: Optional[dict] = None
    K_F: Optional[float] = None

    def __post_init__(self):
        F = _frozen(self.F)
        mu = _frozen(self.mu)
        cov = _frozen(self.feature_cov)
        if F.shape != (self.d, self.m):
            raise ValueError(f"F must be {self.d}x{self.m}, got {F.shape}")
        if mu.shape != (self.d,):
            raise ValueError("mu must have length d")
        if np.linalg.norm(mu) > 1 + _NORM_TOL:
            raise ValueError("||mu||_2 must be at most 1")
        if self.sigma_label < 0 or self.sigma_bandit < 0:
            raise ValueError("noise scales must be nonnegative")
        if self.n < 1 or self.m < 1 or self.d < 1:
            raise ValueError("m, d, n must be positive")
        if cov.shape != (self.m, self.m) or not np.allclose(cov, cov.T):
            raise ValueError("feature_cov must be a symmetric m x m matrix")
        if np.linalg.eigvalsh(cov).min() <= 0:
            raise ValueError("feature_cov must be positive definite")
        if self.action_space.d != self.d:
            raise ValueError("action space dimension must equal d")
        if self.G is not None and self.per_action_F is not None:
            raise ValueError("G and per_action_F are mutually exclusive")
        maps = [F]
        if self.G is not None:
            G = _frozen(self.G)
            if G.shape != (self.d, self.d):
                raise ValueError("G must be d x d")
            object.__setattr__(self, "G", G)
        if self.per_action_F is not None:
            if not isinstance(self.action_space, FiniteActions):
                raise ValueError("per_action_F needs a finite action space")
            pa = {int(k): _frozen(v) for k, v in self.per_action_F.items()}
            if sorted(pa) != list(range(len(self.action_space))):
                raise ValueError("per_action_F must have one map per action")
            for v in pa.values():
                if v.shape != (self.d, self.m):
                    raise ValueError("per-action maps must be d x m")
            maps.extend(pa.values())
            object.__setattr__(self, "per_action_F", pa)
        if self.K_F is not None:
            for mat in maps:
                if l1_operator_norm(mat) > self.K_F * (1 + _NORM_TOL):
                    raise ValueError("label map exceeds the l1 operator norm bound K_F")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "feature_cov", cov)

    @property
    def setting(self) -> str:
        if self.per_action_F is not None:
            return "per_action"
        if self.G is not None:
            return "continuous"
        return "base"

    @property
    def action_maps(self) -> np.ndarray:
        """Stacked per-action maps, shape (k, d, m)."""
        return np.stack([self.per_action_F[k] for k in range(len(self.per_action_F))])

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "d": self.d,
            "n": self.n,
            "F": self.F.tolist(),
            "G": None if self.G is None else self.G.tolist(),
            "mu": self.mu.tolist(),
            "sigma_label": self.sigma_label,
            "sigma_bandit": self.sigma_bandit,
            "action_space": self.action_space.to_dict(),
            "per_action_F": None
            if self.per_action_F is None
            else {str(k): v.tolist() for k, v in self.per_action_F.items()},
            "feature_cov": self.feature_cov.tolist(),
            "K_F": self.K_F,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, obj: dict) -> "EnvSpec":
        pa = obj.get("per_action_F")
        return cls(
            m=int(obj["m"]),
            d=int(obj["d"]),
            n=int(obj["n"]),
            F=np.asarray(obj["F"], dtype=float),
            G=None if obj.get("G") is None else np.asarray(obj["G"], dtype=float),
            mu=np.asarray(obj["mu"], dtype=float),
            sigma_label=float(obj["sigma_label"]),
            sigma_bandit=float(obj["sigma_bandit"]),
            action_space=action_space_from_dict(obj["action_space"]),
            per_action_F=None if pa is None else {int(k): np.asarray(v, dtype=float) for k, v in pa.items()},
            feature_cov=np.asarray(obj["feature_cov"], dtype=float),
            K_F=obj.get("K_F"),
        )

    @classmethod
    def from_json(cls, text: str) -> "EnvSpec":
        return cls.from_dict(json.loads(text))


# --------------------------------------------------------------------------
# generation


def random_label_map(d: int, m: int, K_F: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform entries on [-1, 1], rescaled to l1 operator norm exactly ``K_F``."""
    F = rng.uniform(-1.0, 1.0, size=(d, m))
    return F * (K_F / l1_operator_norm(F))


def random_mu(d: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform direction on the sphere, magnitude uniform on [0.5, 1]."""
    direction = rng.standard_normal(d)
    direction /= np.linalg.norm(direction)
    return direction * rng.uniform(0.5, 1.0)


def random_unit_vectors(count: int, d: int, rng: np.random.Generator) -> np.ndarray:
    v = rng.standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def make_env(
    m: int,
    d: int,
    n: int,
    K_F: float,
    label_var: float,
    bandit_var: float,
    rng: np.random.Generator,
    variant: str = "base",
    action_space: Optional[ActionSpace] = None,
    n_actions: Optional[int] = None,
    mu_zero: bool = False,
    K_G: float = 1.0,
    feature_cov=None,
) -> EnvSpec:
    """Draw a ground-truth environment.

    ``label_var`` and ``bandit_var`` are variances. ``variant`` is one of
    ``base``, ``per_action`` (one label map per finite action) or
    ``continuous`` (label shifted by ``G w``). Without an explicit
    ``action_space`` the unit ball is used, or ``n_actions`` random unit
    vectors when that is given.
    """
    if variant not in ("base", "per_action", "continuous"):
        raise ValueError(f"unknown variant {variant!r}")
    F = random_label_map(d, m, K_F, rng)
    mu = np.zeros(d) if mu_zero else random_mu(d, rng)
    if action_space is None:
        if n_actions is not None:
            action_space = FiniteActions(random_unit_vectors(n_actions, d, rng))
        else:
            action_space = UnitBall(d)
    per_action_F = None
    G = None
    if variant == "per_action":
        if not isinstance(action_space, FiniteActions):
            raise ValueError("per_action variant needs a finite action space")
        per_action_F = {k: random_label_map(d, m, K_F, rng) for k in range(len(action_space))}
    elif variant == "continuous":
        G = random_label_map(d, d, K_G, rng)
    return EnvSpec(
        m=m,
        d=d,
        n=n,
        F=F,
        G=G,
        mu=mu,
        sigma_label=float(np.sqrt(label_var)),
        sigma_bandit=float(np.sqrt(bandit_var)),
        action_space=action_space,
        per_action_F=per_action_F,
        feature_cov=np.eye(m) if feature_cov is None else feature_cov,
        K_F=K_F,
    )


# --------------------------------------------------------------------------
# sampling


def generate_features(spec: EnvSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    """``count`` i.i.d. rows drawn from N(0, feature_cov)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    L = np.linalg.cholesky(spec.feature_cov)
    return rng.standard_normal((count, spec.m)) @ L.T


def label_mean(spec: EnvSpec, xs, ws=None) -> np.ndarray:
    """E[c | x, w] row-wise."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    setting = spec.setting
    if setting == "base":
        return xs @ spec.F.T
    ws = np.atleast_2d(np.asarray(ws, dtype=float))
    if ws.shape[0] != xs.shape[0]:
        raise ValueError("xs and ws must have the same length")
    if setting == "continuous":
        return xs @ spec.F.T + ws @ spec.G.T
    idx = spec.action_space.indices_of(ws)
    maps = spec.action_maps[idx]
    return np.einsum("ndm,nm->nd", maps, xs)


def label_noise(spec: EnvSpec, count: int, rng: np.random.Generator) -> np.ndarray:
    return spec.sigma_label * rng.standard_normal((count, spec.d))


def sample_labels(spec: EnvSpec, xs, ws, rng: np.random.Generator) -> np.ndarray:
    """Draw one label per (x, w) pair with fresh Gaussian noise."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    ws = np.atleast_2d(np.asarray(ws, dtype=float))
    if xs.shape[0] != ws.shape[0]:
        raise ValueError("xs and ws must have the same length")
    return label_mean(spec, xs, ws) + label_noise(spec, xs.shape[0], rng)


class Cost(NamedTuple):
    u_total: float
    u_o: float
    u_b: float


def realized_cost(spec: EnvSpec, x, c, w, rng: np.random.Generator) -> Cost:
    """Realized cost of one individual; ``u_total = u_o + u_b``."""
    w = np.asarray(w, dtype=float)
    u_o = float(np.asarray(c, dtype=float) @ w)
    u_b = float(spec.mu @ w + spec.sigma_bandit * rng.standard_normal())
    return Cost(u_o + u_b, u_o, u_b)


def realized_costs(spec: EnvSpec, cs, ws, rng: np.random.Generator):
    """Vectorized :func:`realized_cost`; returns ``(u_total, u_o, u_b)`` arrays."""
    cs = np.atleast_2d(cs)
    ws = np.atleast_2d(ws)
    u_o = np.einsum("nd,nd->n", cs, ws)
    u_b = ws @ spec.mu + spec.sigma_bandit * rng.standard_normal(ws.shape[0])
    return u_o + u_b, u_o, u_b


# --------------------------------------------------------------------------
# ground-truth optimum


class OptimalAction(NamedTuple):
    w_star: np.ndarray
    expected_cost: float
    degenerate: bool


def optimal_actions(spec: EnvSpec, xs):
    """Per-row optimal action; returns ``(W_star, costs, degenerate_flags)``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n = xs.shape[0]
    space = spec.action_space
    setting = spec.setting
    degenerate = np.zeros(n, dtype=bool)
    if setting == "base":
        v = xs @ spec.F.T + spec.mu
        if isinstance(space, UnitBall):
            degenerate = np.linalg.norm(v, axis=1) == 0
            W = descent_direction(v)
            costs = np.einsum("nd,nd->n", v, W)
        else:
            vals = v @ space.actions.T
            idx = np.argmin(vals, axis=1)
            W = space.actions[idx]
            costs = vals[np.arange(n), idx]
        return W, costs, degenerate
    if setting == "per_action":
        means = np.einsum("kdm,nm->nkd", spec.action_maps, xs)
        vals = np.einsum("nkd,kd->nk", means + spec.mu, space.actions)
        idx = np.argmin(vals, axis=1)
        return space.actions[idx], vals[np.arange(n), idx], degenerate
    # continuous: (F x + G w + mu)' w
    lin = xs @ spec.F.T + spec.mu
    if isinstance(space, UnitBall):
        W, costs = trs_batch(QuadraticForm.from_matrix(spec.G), lin)
        return W, costs, degenerate
    acts = space.actions
    quad = np.einsum("kd,de,ke->k", acts, spec.G, acts)
    vals = lin @ acts.T + quad
    idx = np.argmin(vals, axis=1)
    return acts[idx], vals[np.arange(n), idx], degenerate


def optimal_action(spec: EnvSpec, x) -> OptimalAction:
    """Best action for feature ``x`` under the true parameters.

    When ``E[c|x] + mu = 0`` over the unit ball every action costs 0; ``e_1`` is
    returned with ``degenerate=True``.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != (spec.m,):
        raise ValueError("x must have dimension m")
    W, costs, flags = optimal_actions(spec, x[None, :])
    return OptimalAction(W[0], float(costs[0]), bool(flags[0]))


def expected_costs(spec: EnvSpec, xs, ws) -> np.ndarray:
    """(E[c|x,w] + mu)' w row-wise."""
    ws = np.atleast_2d(ws)
    return np.einsum("nd,nd->n", label_mean(spec, xs, ws) + spec.mu, ws)


# --------------------------------------------------------------------------
# dataset


class Dataset:
    """Append-only pool of (x, c, w, t, i) records backed by growing arrays."""

    def __init__(self, m: int, d: int, capacity: int = 256):
        self.m, self.d = m, d
        self._x = np.empty((capacity, m))
        self._c = np.empty((capacity, d))
        self._w = np.empty((capacity, d))
        self._t = np.empty(capacity, dtype=np.int64)
        self._i = np.empty(capacity, dtype=np.int64)
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def _grow(self, need: int):
        cap = self._x.shape[0]
        if need <= cap:
            return
        new = max(need, 2 * cap)
        for name in ("_x", "_c", "_w", "_t", "_i"):
            old = getattr(self, name)
            arr = np.empty((new,) + old.shape[1:], dtype=old.dtype)
            arr[: self._size] = old[: self._size]
            setattr(self, name, arr)

    def append(self, xs, cs, ws, t: int):
        xs = np.atleast_2d(xs)
        cs = np.atleast_2d(cs)
        ws = np.atleast_2d(ws)
        k = xs.shape[0]
        if cs.shape[0] != k or ws.shape[0] != k:
            raise ValueError("xs, cs, ws must have the same length")
        self._grow(self._size + k)
        s = slice(self._size, self._size + k)
        self._x[s], self._c[s], self._w[s] = xs, cs, ws
        self._t[s] = t
        self._i[s] = np.arange(k)
        self._size += k

    @property
    def X(self) -> np.ndarray:
        return self._x[: self._size]

    @property
    def C(self) -> np.ndarray:
        return self._c[: self._size]

    @property
    def W(self) -> np.ndarray:
        return self._w[: self._size]

    @property
    def rounds(self) -> np.ndarray:
        return self._t[: self._size]

    @property
    def individuals(self) -> np.ndarray:
        return self._i[: self._size]

    def records(self):
        for k in range(self._size):
            yield self._x[k], self._c[k], self._w[k], int(self._t[k]), int(self._i[k])
