"""Policies and the round loop of bandit data-driven optimization.

Four policies share one simulator:

``proof``
    OLS prediction plus an optimistic confidence ball for the unknown cost
    vector, merged in one optimization per individual.
``proof_explore_finite`` / ``proof_explore_continuous``
    Same idea when actions change the label law: a uniform exploration phase
    (round-robin over a finite action set, or uniform draws from the ball),
    then per-action or joint ``[x; w]`` regression.
``vanilla_ofu``
    Linear bandit on the total cost, ignoring features and labels.
``pto_only``
    Predict-then-optimize on the known cost alone; no bandit state.

Regret is pseudo-regret: every round is scored with the true ``F``, ``G`` and
``mu`` against the per-individual optimal action.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from proofbandit.environment import (
    Dataset,
    EnvSpec,
    expected_costs,
    generate_features,
    label_mean,
    label_noise,
    optimal_actions,
    realized_costs,
)
from proofbandit.learner import UnexploredActionError, fit_joint, fit_ols, fit_per_action
from proofbandit.ofu import BanditBank, barycentric_spanner, beta_schedule
from proofbandit.solvers import (
    QuadraticForm,
    SolverConfig,
    descent_direction,
    optimistic_nu,
    solve_finite_batch,
    solve_quadratic_optimistic_batch,
    solve_unit_ball_batch,
)
from proofbandit.spaces import FiniteActions, UnitBall
from proofbandit.streams import RandomStreams, as_streams

POLICY_KINDS = ("proof", "proof_explore_finite", "proof_explore_continuous", "vanilla_ofu", "pto_only")


class NonFiniteStateError(RuntimeError):
    pass


@dataclass(frozen=True)
class PolicyConfig:
    kind: str = "proof"
    gamma: float = 0.05
    beta_mode: str = "constant"
    beta_value: float = 1.0
    explore_rounds: Optional[int] = None
    pool_bandit_state: bool = False
    restarts: int = 16
    # None: vanishing default ridge; a number applies once the design has more rows than columns
    ridge_eps: Optional[float] = None
    name: Optional[str] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must lie in (0, 1)")
        if self.beta_mode not in ("theoretical", "constant"):
            raise ValueError("beta_mode must be 'theoretical' or 'constant'")
        if self.beta_mode == "constant" and self.beta_value < 0:
            raise ValueError("constant beta must be nonnegative")
        if self.explore_rounds is not None and self.explore_rounds < 1:
            raise ValueError("explore_rounds must be positive")
        if self.restarts < 0:
            raise ValueError("restarts must be nonnegative")

    @property
    def label(self) -> str:
        return self.name or self.kind

    def beta(self, t: int, n: int, d: int) -> float:
        if self.beta_mode == "theoretical":
            return beta_schedule(t, n, d, self.gamma)
        return float(self.beta_value)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> "PolicyConfig":
        return cls(**obj)


def default_explore_rounds(kind: str, T: int, m: int, d: int, n_actions: Optional[int] = None) -> int:
    """Exploration length balancing exploration cost against prediction error."""
    if kind == "proof_explore_finite":
        return math.ceil((T * T * d * n_actions) ** (1.0 / 3.0) - 1e-9)
    if kind == "proof_explore_continuous":
        return math.ceil((m * d * d * T * T) ** (1.0 / 3.0) - 1e-9)
    raise ValueError(f"{kind} has no exploration phase")


@dataclass
class RoundTrace:
    t: int
    replication: int
    policy: str
    total_regret: float
    opt_regret: float
    bandit_regret: float
    avg_regret_cum: float
    pred_error: float
    ball_contains_mu: Optional[bool]


class PolicyDecision(NamedTuple):
    ws: np.ndarray
    c_hat: Optional[np.ndarray]
    nu: Optional[np.ndarray]
    beta: Optional[float]


class RegretTerms(NamedTuple):
    total_regret: float
    opt_regret: float
    bandit_regret: float
    pred_error: float
    w_star: np.ndarray


def regret_accounting(spec: EnvSpec, xs, ws, learner_preds=None) -> RegretTerms:
    """Pseudo-regret of one round against the true per-individual optimum.

    ``learner_preds`` are the predictions used for the chosen actions; the
    prediction error is NaN when the policy made none.
    """
    xs = np.atleast_2d(xs)
    ws = np.atleast_2d(ws)
    W_star, _, _ = optimal_actions(spec, xs)
    mean_w = label_mean(spec, xs, ws)
    mean_star = label_mean(spec, xs, W_star)
    opt = float(np.sum(np.einsum("nd,nd->n", mean_w, ws) - np.einsum("nd,nd->n", mean_star, W_star)))
    bandit = float(np.sum((ws - W_star) @ spec.mu))
    total = float(np.sum(expected_costs(spec, xs, ws) - expected_costs(spec, xs, W_star)))
    if learner_preds is None:
        err = float("nan")
    else:
        err = float(np.mean(np.linalg.norm(mean_w - learner_preds, axis=1)))
    return RegretTerms(total, opt, bandit, err, W_star)


# --------------------------------------------------------------------------
# policies


@dataclass(frozen=True)
class PublicInfo:
    """What a policy may know about the environment."""

    m: int
    d: int
    n: int
    action_space: object

    @classmethod
    def of(cls, spec: EnvSpec) -> "PublicInfo":
        return cls(spec.m, spec.d, spec.n, spec.action_space)


def _ridge(cfg: PolicyConfig, rows: int, cols: int) -> Optional[float]:
    if cfg.ridge_eps is None or rows <= cols:
        return None
    return cfg.ridge_eps


class Policy:
    has_ball = False

    def __init__(self, info: PublicInfo, cfg: PolicyConfig, T: int, rng: np.random.Generator):
        self.info = info
        self.cfg = cfg
        self.T = T
        self.rng = rng
        self.spanner = barycentric_spanner(info.action_space)
        self.solver_cfg = SolverConfig(restarts=cfg.restarts)

    def initial_action(self) -> np.ndarray:
        return self.spanner[0]

    def act(self, t: int, xs: np.ndarray, dataset: Dataset) -> PolicyDecision:
        raise NotImplementedError

    def observe(self, xs, ws, cs, u_total):
        pass

    def is_finite(self) -> bool:
        return True


class _BallPolicy(Policy):
    has_ball = True

    def __init__(self, info, cfg, T, rng):
        super().__init__(info, cfg, T, rng)
        self.bank = BanditBank(self.spanner, info.n, pooled=cfg.pool_bandit_state)

    def beta(self, t: int) -> float:
        return self.cfg.beta(t, self.info.n, self.info.d)

    def ball_contains(self, mu, beta: float) -> bool:
        return self.bank.contains_all(mu, beta)

    def is_finite(self) -> bool:
        return self.bank.is_finite()

    def _optimistic(self, c_hat, beta):
        """Solve the merged problem with a shared prediction per individual."""
        space = self.info.action_space
        centers, A_inv = self.bank.centers, self.bank.inverses
        if isinstance(space, UnitBall):
            ws, _, _ = solve_unit_ball_batch(c_hat + centers, A_inv, beta, self.solver_cfg, self.rng)
        else:
            idx, _ = solve_finite_batch(c_hat, centers, A_inv, beta, space.actions)
            ws = space.actions[idx]
        return ws, optimistic_nu(centers, A_inv, beta, ws)


class ProofPolicy(_BallPolicy):
    def act(self, t, xs, dataset):
        model = fit_ols(dataset, _ridge(self.cfg, len(dataset), self.info.m))
        c_hat = xs @ model.F_hat.T
        self._F_hat = model.F_hat
        beta = self.beta(t)
        ws, nu = self._optimistic(c_hat, beta)
        return PolicyDecision(ws, c_hat, nu, beta)

    def observe(self, xs, ws, cs, u_total):
        u_b = u_total - np.einsum("nd,nd->n", cs, ws)
        self.bank.update(ws, u_b)

    def is_finite(self):
        return super().is_finite() and bool(np.isfinite(self._F_hat).all())


class VanillaOfuPolicy(_BallPolicy):
    """Linear bandit on the total cost; features and labels are ignored."""

    def act(self, t, xs, dataset):
        beta = self.beta(t)
        ws, nu = self._optimistic(np.zeros((xs.shape[0], self.info.d)), beta)
        return PolicyDecision(ws, None, nu, beta)

    def observe(self, xs, ws, cs, u_total):
        self.bank.update(ws, u_total)


class PtoPolicy(Policy):
    def act(self, t, xs, dataset):
        model = fit_ols(dataset, _ridge(self.cfg, len(dataset), self.info.m))
        self._F_hat = model.F_hat
        c_hat = xs @ model.F_hat.T
        space = self.info.action_space
        if isinstance(space, UnitBall):
            ws = descent_direction(c_hat)
        else:
            ws = space.actions[np.argmin(c_hat @ space.actions.T, axis=1)]
        return PolicyDecision(ws, c_hat, None, None)

    def is_finite(self):
        return bool(np.isfinite(self._F_hat).all())


class _ExplorePolicy(_BallPolicy):
    def __init__(self, info, cfg, T, rng):
        super().__init__(info, cfg, T, rng)
        n_actions = len(info.action_space) if isinstance(info.action_space, FiniteActions) else None
        self.explore_rounds = cfg.explore_rounds or default_explore_rounds(cfg.kind, T, info.m, info.d, n_actions)
        if self.explore_rounds >= T:
            raise ValueError(f"explore_rounds ({self.explore_rounds}) must be < T ({T})")

    def observe(self, xs, ws, cs, u_total):
        u_b = u_total - np.einsum("nd,nd->n", cs, ws)
        self.bank.update(ws, u_b)

    def act(self, t, xs, dataset):
        beta = self.beta(t)
        if t <= self.explore_rounds:
            return PolicyDecision(self.explore_actions(t), None, None, beta)
        return self.exploit(t, xs, dataset, beta)


class ExploreFinitePolicy(_ExplorePolicy):
    def __init__(self, info, cfg, T, rng):
        if not isinstance(info.action_space, FiniteActions):
            raise ValueError("proof_explore_finite needs a finite action space")
        super().__init__(info, cfg, T, rng)
        k = len(info.action_space)
        if self.explore_rounds * info.n < k:
            raise UnexploredActionError("unexplored action: exploration cannot cover every action")

    def explore_actions(self, t):
        # round t is 1-based; the round-robin counter is 0-based
        n = self.info.n
        idx = (n * (t - 1) + np.arange(n)) % len(self.info.action_space)
        return self.info.action_space.actions[idx]

    def exploit(self, t, xs, dataset, beta):
        space = self.info.action_space
        fits = fit_per_action(dataset, space, self.cfg.ridge_eps if self.cfg.ridge_eps is not None else None)
        maps = np.stack([fits.models[k].F_hat for k in range(len(space))])
        c_all = np.einsum("kdm,nm->nkd", maps, xs)
        centers, A_inv = self.bank.centers, self.bank.inverses
        idx, _ = solve_finite_batch(c_all, centers, A_inv, beta, space.actions)
        ws = space.actions[idx]
        c_hat = c_all[np.arange(xs.shape[0]), idx]
        return PolicyDecision(ws, c_hat, optimistic_nu(centers, A_inv, beta, ws), beta)


class ExploreContinuousPolicy(_ExplorePolicy):
    def explore_actions(self, t):
        n, d = self.info.n, self.info.d
        space = self.info.action_space
        if isinstance(space, FiniteActions):
            return space.actions[self.rng.integers(len(space), size=n)]
        direction = self.rng.standard_normal((n, d))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radius = self.rng.uniform(size=(n, 1)) ** (1.0 / d)
        return direction * radius

    def exploit(self, t, xs, dataset, beta):
        model = fit_joint(dataset, _ridge(self.cfg, len(dataset), self.info.m + self.info.d))
        F_hat, G_hat = model.F_hat, model.G_hat
        base = xs @ F_hat.T
        centers, A_inv = self.bank.centers, self.bank.inverses
        space = self.info.action_space
        if isinstance(space, FiniteActions):
            c_all = base[:, None, :] + (space.actions @ G_hat.T)[None, :, :]
            idx, _ = solve_finite_batch(c_all, centers, A_inv, beta, space.actions)
            ws = space.actions[idx]
        else:
            form = QuadraticForm.from_matrix(G_hat)
            ws, _, _ = solve_quadratic_optimistic_batch(form, base + centers, A_inv, beta, self.cfg.restarts, self.rng)
        c_hat = base + ws @ G_hat.T
        return PolicyDecision(ws, c_hat, optimistic_nu(centers, A_inv, beta, ws), beta)


_POLICIES = {
    "proof": ProofPolicy,
    "proof_explore_finite": ExploreFinitePolicy,
    "proof_explore_continuous": ExploreContinuousPolicy,
    "vanilla_ofu": VanillaOfuPolicy,
    "pto_only": PtoPolicy,
}


# --------------------------------------------------------------------------
# simulator


@dataclass
class RunResult:
    traces: list
    dataset: Dataset
    env_digest: str
    policy: Policy = field(repr=False)


def simulate(spec: EnvSpec, T: int, cfg: PolicyConfig, rng, replication: int = 0) -> RunResult:
    """Run one policy for ``T`` rounds on ``spec``.

    ``rng`` is a :class:`RandomStreams` or an integer seed. Features and label
    noise come from per-round streams shared by all policies; bandit noise and
    the policy's own randomness are keyed by the policy label.
    """
    if T < 1:
        raise ValueError("T must be >= 1")
    streams: RandomStreams = as_streams(rng)
    info = PublicInfo.of(spec)
    policy = _POLICIES[cfg.kind](info, cfg, T, streams.policy_rng(cfg.label))
    n = spec.n
    digest = hashlib.sha256()
    dataset = Dataset(spec.m, spec.d, capacity=n * (T + 1))

    r0 = streams.round_rng(0)
    xs = generate_features(spec, n, r0)
    eps = label_noise(spec, n, r0)
    digest.update(xs.tobytes())
    digest.update(eps.tobytes())
    w0 = np.tile(policy.initial_action(), (n, 1))
    dataset.append(xs, label_mean(spec, xs, w0) + eps, w0, 0)

    traces = []
    cum = 0.0
    for t in range(1, T + 1):
        rt = streams.round_rng(t)
        xs = generate_features(spec, n, rt)
        eps = label_noise(spec, n, rt)
        digest.update(xs.tobytes())
        digest.update(eps.tobytes())

        dec = policy.act(t, xs, dataset)
        contains = policy.ball_contains(spec.mu, dec.beta) if policy.has_ball else None
        ws = dec.ws
        cs = label_mean(spec, xs, ws) + eps
        dataset.append(xs, cs, ws, t)
        u_total, _, _ = realized_costs(spec, cs, ws, streams.bandit_rng(cfg.label, t))
        policy.observe(xs, ws, cs, u_total)
        if not policy.is_finite() or not np.isfinite(ws).all():
            raise NonFiniteStateError(f"{cfg.label}: non-finite state at round {t}")

        terms = regret_accounting(spec, xs, ws, dec.c_hat)
        cum += terms.total_regret
        traces.append(
            RoundTrace(
                t=t,
                replication=replication,
                policy=cfg.label,
                total_regret=terms.total_regret,
                opt_regret=terms.opt_regret,
                bandit_regret=terms.bandit_regret,
                avg_regret_cum=cum / (t * n),
                pred_error=terms.pred_error,
                ball_contains_mu=contains,
            )
        )
    return RunResult(traces=traces, dataset=dataset, env_digest=digest.hexdigest(), policy=policy)


def _require(cfg: PolicyConfig, kinds):
    if cfg.kind not in kinds:
        raise ValueError(f"policy kind {cfg.kind!r} not handled here (expected {kinds})")


def run_proof(spec: EnvSpec, T: int, cfg: PolicyConfig, rng) -> list:
    _require(cfg, ("proof",))
    if spec.setting != "base":
        raise ValueError("PROOF assumes labels independent of the action")
    return simulate(spec, T, cfg, rng).traces


def run_proof_explore(spec: EnvSpec, T: int, cfg: PolicyConfig, rng) -> list:
    _require(cfg, ("proof_explore_finite", "proof_explore_continuous"))
    return simulate(spec, T, cfg, rng).traces


def run_vanilla_ofu(spec: EnvSpec, T: int, cfg: PolicyConfig, rng) -> list:
    _require(cfg, ("vanilla_ofu",))
    return simulate(spec, T, cfg, rng).traces


def run_pto_only(spec: EnvSpec, T: int, cfg: PolicyConfig, rng) -> list:
    _require(cfg, ("pto_only",))
    return simulate(spec, T, cfg, rng).traces
