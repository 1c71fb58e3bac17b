"""Optimization subproblems of the decision loop.

* inner minimization of ``nu' w`` over a confidence ellipsoid (closed form)
* the optimistic bilinear problem over the unit ball (multi-start projected
  gradient on the sphere)
* the same problem over a finite action set (enumeration)
* quadratic objectives over the unit ball (trust-region subproblem, solved
  exactly through the secular equation)

The ``*_batch`` functions solve one problem per individual at once and are what
the policies call; the single-problem functions wrap them.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from proofbandit.ofu import ConfidenceBall

_TIE_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    restarts: int = 16
    max_iter: int = 200
    grad_tol: float = 1e-8
    armijo: float = 1e-4
    max_halvings: int = 60
    seed: int = 0


@dataclass(frozen=True)
class OptimisticObjective:
    c_hat: np.ndarray
    ball: ConfidenceBall

    def __post_init__(self):
        c = np.asarray(self.c_hat, dtype=float)
        if c.shape != self.ball.center.shape:
            raise ValueError("c_hat and ball dimensions disagree")
        object.__setattr__(self, "c_hat", c)


@dataclass
class SolveResult:
    w: np.ndarray
    value: float
    nu: np.ndarray
    method: str
    n_restarts_used: int = 0
    extra: dict = field(default_factory=dict)


# --------------------------------------------------------------------------
# inner problem


def _support_terms(A_inv: np.ndarray, W: np.ndarray):
    """Return ``A^-1 w`` and ``sqrt(w' A^-1 w)`` for stacked w (leading dims match A_inv)."""
    AW = np.einsum("...ij,...j->...i", A_inv, W)
    q = np.einsum("...i,...i->...", W, AW)
    return AW, np.sqrt(np.maximum(q, 0.0))


def optimistic_nu(centers, A_inv, radius_sq: float, W) -> np.ndarray:
    """Minimizer of ``nu' w`` over each ball; ``center`` where ``w = 0``."""
    AW, sq = _support_terms(A_inv, W)
    r = np.sqrt(radius_sq)
    safe = np.where(sq > 0, sq, 1.0)
    return centers - np.where(sq[..., None] > 0, r * AW / safe[..., None], 0.0)


def inner_min(ball: ConfidenceBall, w) -> tuple[float, np.ndarray]:
    """Minimum of ``nu' w`` over the ball and the minimizing ``nu``."""
    w = np.asarray(w, dtype=float)
    if w.shape != ball.center.shape:
        raise ValueError("dimension mismatch")
    A_inv = np.linalg.inv(ball.A)
    nu = optimistic_nu(ball.center, A_inv, ball.radius_sq, w)
    _, sq = _support_terms(A_inv, w)
    value = float(ball.center @ w - np.sqrt(ball.radius_sq) * sq)
    return value, nu


# --------------------------------------------------------------------------
# unit ball, bilinear objective


def _unit_rows(V: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(V, axis=-1, keepdims=True)
    return V / np.where(norm > 0, norm, 1.0)


def descent_direction(v: np.ndarray) -> np.ndarray:
    """``-v / ||v||`` row-wise; rows with ``v = 0`` map to ``e_1``."""
    v = np.atleast_2d(v)
    norm = np.linalg.norm(v, axis=1, keepdims=True)
    out = -v / np.where(norm > 0, norm, 1.0)
    zero = norm[:, 0] == 0
    if zero.any():
        out[zero] = 0.0
        out[zero, 0] = 1.0
    return out


def _candidate_starts(lin, A_inv, restarts, rng):
    n, d = lin.shape
    first = descent_direction(lin)
    _, evecs = np.linalg.eigh(A_inv)  # columns
    eig_starts = np.empty((n, 2 * d, d))
    eig_starts[:, 0::2, :] = np.swapaxes(evecs, 1, 2)
    eig_starts[:, 1::2, :] = -np.swapaxes(evecs, 1, 2)
    # lin = 0: the closed-form start is meaningless, reuse the first eigenvector
    zero = np.linalg.norm(lin, axis=1) == 0
    first[zero] = eig_starts[zero, 0]
    parts = [first[:, None, :], eig_starts]
    if restarts > 0:
        if rng is None:
            raise ValueError("random restarts need a generator")
        parts.append(_unit_rows(rng.standard_normal((n, restarts, d))))
    return np.concatenate(parts, axis=1)


def _bilinear_value(lin, A_inv, r, W):
    AW, sq = _support_terms(A_inv, W)
    return np.einsum("...i,...i->...", lin, W) - r * sq, AW, sq


def _pgd_sphere(W, lin, A_inv, r, cfg: SolverConfig):
    """Projected gradient descent on the unit sphere, all starts in parallel.

    The trial step is the Barzilai-Borwein step from the previous iterate
    (1 on the first iteration) and is halved until the Armijo test passes.
    """
    n, S, d = W.shape
    lin_b = np.broadcast_to(lin[:, None, :], W.shape)
    Ainv_b = np.broadcast_to(A_inv[:, None, :, :], (n, S, d, d))
    val, AW, sq = _bilinear_value(lin_b, Ainv_b, r, W)
    active = np.ones((n, S), dtype=bool)
    step = np.ones((n, S))
    prev_W = prev_rg = None
    for _ in range(cfg.max_iter):
        grad = lin_b - r * AW / sq[..., None]
        rg = grad - np.sum(grad * W, axis=-1, keepdims=True) * W
        gn2 = np.sum(rg * rg, axis=-1)
        active &= gn2 >= cfg.grad_tol**2
        if not active.any():
            break
        if prev_W is not None:
            sdiff = W - prev_W
            ydiff = rg - prev_rg
            sy = np.abs(np.sum(sdiff * ydiff, axis=-1))
            ss = np.sum(sdiff * sdiff, axis=-1)
            step = np.where(sy > 0, ss / np.where(sy > 0, sy, 1.0), 1.0)
            step = np.clip(step, 1e-8, 1e8)
        prev_W, prev_rg = W.copy(), rg
        ii, si = np.nonzero(active)
        pending = np.ones(ii.size, dtype=bool)
        for _ in range(cfg.max_halvings):
            p = np.flatnonzero(pending)
            pi, ps = ii[p], si[p]
            trial = _unit_rows(W[pi, ps] - step[pi, ps, None] * rg[pi, ps])
            tv, tAW, tsq = _bilinear_value(lin[pi], A_inv[pi], r, trial)
            ok = tv <= val[pi, ps] - cfg.armijo * step[pi, ps] * gn2[pi, ps]
            if ok.any():
                oi, os_ = pi[ok], ps[ok]
                W[oi, os_] = trial[ok]
                val[oi, os_] = tv[ok]
                AW[oi, os_] = tAW[ok]
                sq[oi, os_] = tsq[ok]
                pending[p[ok]] = False
            if not pending.any():
                break
            pi, ps = ii[pending], si[pending]
            step[pi, ps] *= 0.5
            tiny = step[pi, ps] * gn2[pi, ps] <= 1e-15 * np.maximum(1.0, np.abs(val[pi, ps]))
            if tiny.any():
                # no representable decrease left: numerically stationary
                active[pi[tiny], ps[tiny]] = False
                pending[np.flatnonzero(pending)[tiny]] = False
                if not pending.any():
                    break
        stuck = np.flatnonzero(pending)
        active[ii[stuck], si[stuck]] = False
    return W, val


def _first_best(values: np.ndarray) -> np.ndarray:
    """Index of the first entry within tie tolerance of the row minimum."""
    best = values.min(axis=-1, keepdims=True)
    tol = _TIE_TOL * np.maximum(1.0, np.abs(best))
    return np.argmax(values <= best + tol, axis=-1)


def solve_unit_ball_batch(lin, A_inv, radius_sq: float, cfg: SolverConfig = SolverConfig(), rng=None):
    """Minimize ``lin_i' w - sqrt(radius_sq) ||w||_{A_i^-1}`` over the unit ball for each row i.

    Returns ``(W, values, n_starts)``. The objective is concave, so minima sit on
    the sphere; global optimality is not certified.
    """
    lin = np.atleast_2d(np.asarray(lin, dtype=float))
    A_inv = np.asarray(A_inv, dtype=float)
    if A_inv.ndim == 2:
        A_inv = np.broadcast_to(A_inv, (lin.shape[0],) + A_inv.shape)
    r = float(np.sqrt(radius_sq))
    starts = _candidate_starts(lin, A_inv, cfg.restarts, rng)
    W, val = _pgd_sphere(starts.copy(), lin, A_inv, r, cfg)
    pick = _first_best(val)
    rows = np.arange(lin.shape[0])
    return W[rows, pick], val[rows, pick], starts.shape[1]


def solve_unit_ball(obj: OptimisticObjective, config: Optional[SolverConfig] = None, rng=None) -> SolveResult:
    cfg = config or SolverConfig()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    ball = obj.ball
    A_inv = np.linalg.inv(ball.A)
    lin = obj.c_hat + ball.center
    W, vals, used = solve_unit_ball_batch(lin[None, :], A_inv[None], ball.radius_sq, cfg, rng)
    w = W[0]
    nu = optimistic_nu(ball.center, A_inv, ball.radius_sq, w)
    return SolveResult(w=w, value=float(vals[0]), nu=nu, method="multistart", n_restarts_used=used)


# --------------------------------------------------------------------------
# finite action sets


def finite_values(c_hat, centers, A_inv, radius_sq: float, actions) -> np.ndarray:
    """Optimistic value of every action for every individual, shape (n, k).

    ``c_hat`` is (n, d) for a shared prediction or (n, k, d) for per-action ones.
    """
    actions = np.asarray(actions, dtype=float)
    c_hat = np.asarray(c_hat, dtype=float)
    if c_hat.ndim == 2:
        pred = (c_hat + centers) @ actions.T
    else:
        pred = np.einsum("nkd,kd->nk", c_hat, actions) + centers @ actions.T
    q = np.einsum("kd,nde,ke->nk", actions, A_inv, actions)
    return pred - np.sqrt(radius_sq) * np.sqrt(np.maximum(q, 0.0))


def solve_finite_batch(c_hat, centers, A_inv, radius_sq: float, actions):
    """Enumerate all actions; ties go to the lowest index. Returns ``(idx, values)``."""
    vals = finite_values(c_hat, centers, A_inv, radius_sq, actions)
    idx = np.argmin(vals, axis=1)
    return idx, vals[np.arange(vals.shape[0]), idx]


def solve_finite(obj: OptimisticObjective, actions, per_action_c_hat=None) -> SolveResult:
    """Exact enumeration over ``actions``.

    ``per_action_c_hat`` maps action index to that action's prediction; when
    absent the shared ``obj.c_hat`` is used for every action.
    """
    actions = np.atleast_2d(np.asarray(actions, dtype=float))
    if actions.shape[0] == 0:
        raise ValueError("empty action set")
    ball = obj.ball
    A_inv = np.linalg.inv(ball.A)
    if per_action_c_hat is None:
        c = obj.c_hat[None, :]
    else:
        c = np.stack([np.asarray(per_action_c_hat[k], dtype=float) for k in range(len(actions))])[None]
    idx, vals = solve_finite_batch(c, ball.center[None], A_inv[None], ball.radius_sq, actions)
    k = int(idx[0])
    w = actions[k]
    nu = optimistic_nu(ball.center, A_inv, ball.radius_sq, w)
    return SolveResult(w=w.copy(), value=float(vals[0]), nu=nu, method="enumeration",
                       n_restarts_used=0, extra={"index": k})


# --------------------------------------------------------------------------
# quadratic objectives: trust-region subproblem


@dataclass(frozen=True)
class QuadraticForm:
    """Eigendecomposition of the symmetric part of a d x d matrix."""

    evals: np.ndarray
    evecs: np.ndarray
    H: np.ndarray

    @classmethod
    def from_matrix(cls, G) -> "QuadraticForm":
        G = np.asarray(G, dtype=float)
        H = 0.5 * (G + G.T)
        evals, evecs = np.linalg.eigh(H)
        return cls(evals, evecs, H)


def trs_batch(form: QuadraticForm, b, bisect_iter: int = 200):
    """Minimize ``w' H w + b_k' w`` over ``||w|| <= 1`` for every row ``b_k``.

    Standard form ``1/2 w' B w + b' w`` with ``B = 2H``: the solution satisfies
    ``(B + lam I) w = -b`` with ``lam >= max(0, -lambda_min(B))`` and
    ``lam (1 - ||w||) = 0``. ``lam`` is found by bisection on the secular
    equation ``||w(lam)|| = 1``; the hard case (b orthogonal to the bottom
    eigenspace) is completed along a bottom eigenvector.
    """
    b = np.atleast_2d(np.asarray(b, dtype=float))
    lam = 2.0 * form.evals
    Q = form.evecs
    g = b @ Q
    k, d = g.shape
    lam1 = lam[0]
    scale = max(1.0, float(np.abs(lam).max()))
    bottom = lam <= lam1 + 1e-10 * scale
    gnorm = np.linalg.norm(g, axis=1)
    low = max(0.0, -lam1)

    coords = np.empty_like(g)
    done = np.zeros(k, dtype=bool)

    # interior minimizer of a positive-definite (or PSD with b in range) quadratic
    if lam1 >= 0.0:
        denom = np.where(lam > 0, lam, 1.0)
        w0 = np.where(lam > 0, -g / denom, 0.0)
        in_range = np.all(np.abs(g[:, lam <= 0]) <= 1e-12 * np.maximum(1.0, gnorm)[:, None], axis=1)
        ok = in_range & (np.linalg.norm(w0, axis=1) <= 1.0)
        coords[ok] = w0[ok]
        done |= ok

    # hard case: bottom components of b vanish and the rest is inside the ball at lam = low
    if low > 0.0:
        hb = np.all(np.abs(g[:, bottom]) <= 1e-12 * np.maximum(1.0, gnorm)[:, None], axis=1) & ~done
        if hb.any():
            denom = np.where(bottom, 1.0, lam + low)
            w_rest = np.where(bottom, 0.0, -g[hb] / denom)
            rest_norm = np.linalg.norm(w_rest, axis=1)
            fits = rest_norm <= 1.0
            if fits.any():
                tau = np.sqrt(np.maximum(0.0, 1.0 - rest_norm[fits] ** 2))
                first_bottom = np.flatnonzero(bottom)[0]
                w_rest = w_rest[fits]
                w_rest[:, first_bottom] = tau
                rows = np.flatnonzero(hb)[fits]
                coords[rows] = w_rest
                done[rows] = True

    todo = np.flatnonzero(~done)
    if todo.size:
        gt = g[todo]
        lo = np.full(todo.size, low)
        hi = low + gnorm[todo] + 1.0
        for _ in range(bisect_iter):
            mid = 0.5 * (lo + hi)
            if np.all((mid <= lo) | (mid >= hi)):
                break
            norm = np.linalg.norm(gt / (lam + mid[:, None]), axis=1)
            outside = norm > 1.0
            lo = np.where(outside, mid, lo)
            hi = np.where(outside, hi, mid)
        w = -gt / (lam + hi[:, None])
        coords[todo] = _unit_rows(w)

    W = coords @ Q.T
    values = np.einsum("kd,de,ke->k", W, form.H, W) + np.einsum("kd,kd->k", b, W)
    return W, values


def solve_quadratic_ball(F_x, G, mu) -> SolveResult:
    """Exact minimizer of ``(F_x + G w + mu)' w`` over the unit ball."""
    lin = np.asarray(F_x, dtype=float) + np.asarray(mu, dtype=float)
    form = QuadraticForm.from_matrix(G)
    W, vals = trs_batch(form, lin[None, :])
    return SolveResult(w=W[0], value=float(vals[0]), nu=np.asarray(mu, dtype=float).copy(),
                       method="trust_region", n_restarts_used=0)


def solve_quadratic_optimistic_batch(form: QuadraticForm, lin, A_inv, radius_sq: float,
                                     restarts: int = 16, rng=None, max_iter: int = 50, tol: float = 1e-12):
    """Minimize ``w' H w + lin_i' w - sqrt(radius_sq) ||w||_{A_i^-1}`` over the unit ball.

    The support term is concave and 1-homogeneous, so its linearization at any
    direction ``u`` upper-bounds it. Each start is refined by repeatedly solving
    the trust-region subproblem with the linearized term (a majorize-minimize
    scheme); the best refined point over all starts is returned.
    """
    lin = np.atleast_2d(np.asarray(lin, dtype=float))
    n, d = lin.shape
    r = float(np.sqrt(radius_sq))
    plain, _ = trs_batch(form, lin)
    starts = _candidate_starts(lin, A_inv, restarts, rng)
    starts = np.concatenate([plain[:, None, :], starts], axis=1)
    S = starts.shape[1]

    def objective(W):
        _, sq = _support_terms(np.broadcast_to(A_inv[:, None], (n, S, d, d)), W)
        quad = np.einsum("nsd,de,nse->ns", W, form.H, W)
        return quad + np.einsum("nd,nsd->ns", lin, W) - r * sq

    U = starts.copy()
    best_W = starts.copy()
    best_val = objective(best_W)
    if r > 0:
        for _ in range(max_iter):
            AU, sq = _support_terms(np.broadcast_to(A_inv[:, None], (n, S, d, d)), U)
            slope = np.where(sq[..., None] > 0, r * AU / np.where(sq > 0, sq, 1.0)[..., None], 0.0)
            W_new, _ = trs_batch(form, (lin[:, None, :] - slope).reshape(n * S, d))
            W_new = W_new.reshape(n, S, d)
            val = objective(W_new)
            better = val < best_val - tol * np.maximum(1.0, np.abs(best_val))
            if not better.any():
                break
            best_W[better] = W_new[better]
            best_val[better] = val[better]
            # keep the previous direction where the iterate collapsed to the origin
            moved = better & (np.linalg.norm(W_new, axis=-1) > 0)
            U[moved] = W_new[moved]
    pick = _first_best(best_val)
    rows = np.arange(n)
    return best_W[rows, pick], best_val[rows, pick], S
