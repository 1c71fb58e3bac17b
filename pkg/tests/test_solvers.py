import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from proofbandit.ofu import ConfidenceBall, contains
from proofbandit.solvers import (
    OptimisticObjective,
    QuadraticForm,
    SolverConfig,
    inner_min,
    solve_finite,
    solve_quadratic_ball,
    solve_quadratic_optimistic_batch,
    solve_unit_ball,
    trs_batch,
)


def random_spd(d, r):
    M = r.standard_normal((d, d))
    return M @ M.T + 0.2 * np.eye(d)


def unit_vectors(count, d, r):
    v = r.standard_normal((count, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def ellipsoid_samples(ball, count, r):
    """Points inside ``ball`` via the Cholesky map of the unit ball."""
    L = np.linalg.cholesky(np.linalg.inv(ball.A))
    u = unit_vectors(count, ball.d, r) * r.uniform(size=(count, 1)) ** (1 / ball.d)
    return ball.center + math.sqrt(ball.radius_sq) * u @ L.T


def brute_finite(c_hat, ball, actions, per_action=None):
    best, best_k = None, None
    for k, a in enumerate(actions):
        c = c_hat if per_action is None else per_action[k]
        val = inner_min(ball, a)[0] + float(c @ a)
        if best is None or val < best:
            best, best_k = val, k
    return best_k, best


def test_inner_min_examples():
    val, nu = inner_min(ConfidenceBall(np.zeros(2), np.eye(2), 1.0), [1.0, 0.0])
    assert val == pytest.approx(-1.0)
    np.testing.assert_allclose(nu, [-1.0, 0.0])
    ball = ConfidenceBall(np.array([1.0, 0.0]), 2 * np.eye(2), 4.0)
    val, nu = inner_min(ball, [0.0, 1.0])
    assert val == pytest.approx(-math.sqrt(2))
    np.testing.assert_allclose(nu, [1.0, -math.sqrt(2)])
    pts = ellipsoid_samples(ball, 1_000_000, np.random.default_rng(0))
    assert abs((pts @ [0.0, 1.0]).min() - val) < 1e-3


def test_inner_min_degenerate_cases():
    ball = ConfidenceBall(np.array([0.5, -0.5]), np.eye(2), 0.0)
    for w in ([1.0, 0.0], [0.3, 0.4]):
        val, nu = inner_min(ball, w)
        assert val == pytest.approx(ball.center @ w)
        np.testing.assert_array_equal(nu, ball.center)
    val, nu = inner_min(ConfidenceBall(np.array([0.5, -0.5]), np.eye(2), 1.0), np.zeros(2))
    assert val == 0.0
    np.testing.assert_array_equal(nu, [0.5, -0.5])
    with pytest.raises(ValueError):
        inner_min(ball, np.zeros(3))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_inner_min_lower_bounds_ball(d, seed):
    r = np.random.default_rng(seed)
    ball = ConfidenceBall(r.standard_normal(d), random_spd(d, r), float(r.uniform(0, 4)))
    w = unit_vectors(1, d, r)[0] * r.uniform()
    val, nu = inner_min(ball, w)
    assert contains(ball, nu)
    assert val == pytest.approx(nu @ w, abs=1e-9)
    pts = ellipsoid_samples(ball, 1000, r)
    assert val <= (pts @ w).min() + 1e-9


def test_unit_ball_examples():
    res = solve_unit_ball(OptimisticObjective(np.array([3.0, 4.0]), ConfidenceBall(np.zeros(2), np.eye(2), 0.0)))
    np.testing.assert_allclose(res.w, [-0.6, -0.8])
    assert res.value == pytest.approx(-5.0)
    assert res.method == "multistart"
    tie = solve_unit_ball(OptimisticObjective(np.zeros(3), ConfidenceBall(np.zeros(3), np.eye(3), 1.0)))
    assert tie.value == pytest.approx(-1.0)
    np.testing.assert_allclose(np.linalg.norm(tie.w), 1.0)
    again = solve_unit_ball(OptimisticObjective(np.zeros(3), ConfidenceBall(np.zeros(3), np.eye(3), 1.0)))
    np.testing.assert_array_equal(tie.w, again.w)
    one = solve_unit_ball(OptimisticObjective(np.array([0.5]), ConfidenceBall(np.zeros(1), np.array([[4.0]]), 1.0)))
    np.testing.assert_allclose(one.w, [-1.0])
    assert one.value == pytest.approx(-1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_unit_ball_contract(d, seed):
    r = np.random.default_rng(seed)
    ball = ConfidenceBall(r.standard_normal(d) * 0.5, random_spd(d, r), float(r.uniform(0, 3)))
    obj = OptimisticObjective(r.standard_normal(d), ball)
    res = solve_unit_ball(obj, SolverConfig(seed=seed % 1000))
    assert np.linalg.norm(res.w) <= 1 + 1e-9
    assert contains(ball, res.nu)
    assert res.value == pytest.approx(float((obj.c_hat + res.nu) @ res.w), abs=1e-9)
    A_inv = np.linalg.inv(ball.A)
    W = unit_vectors(1000, d, r)
    g = W @ (obj.c_hat + ball.center) - math.sqrt(ball.radius_sq) * np.sqrt(np.einsum("kd,de,ke->k", W, A_inv, W))
    assert res.value <= g.min() + 1e-9


def test_unit_ball_deterministic_given_seed(rng):
    ball = ConfidenceBall(rng.standard_normal(4), random_spd(4, rng), 2.0)
    obj = OptimisticObjective(rng.standard_normal(4), ball)
    a = solve_unit_ball(obj, SolverConfig(seed=7))
    b = solve_unit_ball(obj, SolverConfig(seed=7))
    np.testing.assert_array_equal(a.w, b.w)
    assert a.value == b.value


def test_finite_examples():
    ball = ConfidenceBall(np.zeros(1), np.eye(1), 0.0)
    res = solve_finite(OptimisticObjective(np.array([1.0]), ball), np.array([[0.3], [-0.2]]))
    assert res.extra["index"] == 1 and res.method == "enumeration"
    tie = solve_finite(OptimisticObjective(np.array([1.0]), ball), np.array([[0.5], [0.5]]))
    assert tie.extra["index"] == 0
    with pytest.raises(ValueError):
        solve_finite(OptimisticObjective(np.array([1.0]), ball), np.empty((0, 1)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.booleans())
def test_finite_matches_brute_force(seed, per_action):
    r = np.random.default_rng(seed)
    d = 3
    acts = unit_vectors(8, d, r) * r.uniform(0.2, 1.0, size=(8, 1))
    ball = ConfidenceBall(r.standard_normal(d), random_spd(d, r), float(r.uniform(0, 2)))
    c_hat = r.standard_normal(d)
    pa = {k: r.standard_normal(d) for k in range(8)} if per_action else None
    res = solve_finite(OptimisticObjective(c_hat, ball), acts, pa)
    k, val = brute_finite(c_hat, ball, acts, pa)
    assert res.extra["index"] == k
    assert res.value == pytest.approx(val, abs=1e-12)


def _sample_quadratic(F_x, G, mu, r, count=100_000):
    d = len(F_x)
    sphere = unit_vectors(count // 2, d, r)
    pts = np.vstack([sphere, sphere * r.uniform(size=(count // 2, 1)) ** (1 / d)])
    vals = pts @ (F_x + mu) + np.einsum("kd,de,ke->k", pts, G, pts)
    return vals.min()


def test_quadratic_examples():
    v = np.array([1.0, -2.0])
    res = solve_quadratic_ball(v, np.zeros((2, 2)), np.zeros(2))
    np.testing.assert_allclose(res.w, -v / np.linalg.norm(v))
    res = solve_quadratic_ball(np.zeros(2), np.eye(2), np.zeros(2))
    np.testing.assert_allclose(res.w, 0.0, atol=1e-12)
    assert res.value == pytest.approx(0.0)
    res = solve_quadratic_ball(np.zeros(2), -np.eye(2), np.zeros(2))
    assert res.value == pytest.approx(-1.0)
    assert res.method == "trust_region"
    assert abs(_sample_quadratic(np.zeros(2), -np.eye(2), np.zeros(2), np.random.default_rng(0)) + 1) < 1e-3


def test_trs_hard_case():
    # b orthogonal to the bottom eigenvector of an indefinite H
    form = QuadraticForm.from_matrix(np.diag([-1.0, 1.0]))
    W, vals = trs_batch(form, np.array([[0.0, 0.5]]))
    w = W[0]
    assert np.linalg.norm(w) == pytest.approx(1.0)
    theta = np.linspace(0, 2 * np.pi, 200_001)
    grid = -np.cos(theta) ** 2 + np.sin(theta) ** 2 + 0.5 * np.sin(theta)
    assert vals[0] == pytest.approx(grid.min(), abs=1e-8)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_quadratic_matches_sampling(d, seed):
    r = np.random.default_rng(seed)
    F_x, G, mu = r.standard_normal(d), r.standard_normal((d, d)), r.standard_normal(d) * 0.3
    res = solve_quadratic_ball(F_x, G, mu)
    assert np.linalg.norm(res.w) <= 1 + 1e-9
    assert res.value == pytest.approx(float((F_x + G @ res.w + mu) @ res.w), abs=1e-9)
    assert res.value <= _sample_quadratic(F_x, G, mu, r, 20_000) + 1e-9


@settings(max_examples=20, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_quadratic_optimistic_not_worse_than_samples(d, seed):
    r = np.random.default_rng(seed)
    form = QuadraticForm.from_matrix(r.standard_normal((d, d)))
    lin = r.standard_normal((1, d))
    A_inv = np.linalg.inv(random_spd(d, r))[None]
    W, vals, _ = solve_quadratic_optimistic_batch(form, lin, A_inv, 1.0, restarts=8, rng=r)
    pts = unit_vectors(20_000, d, r) * r.uniform(size=(20_000, 1)) ** (1 / d)
    g = (pts @ lin[0] + np.einsum("kd,de,ke->k", pts, form.H, pts)
         - np.sqrt(np.einsum("kd,de,ke->k", pts, A_inv[0], pts)))
    assert np.linalg.norm(W[0]) <= 1 + 1e-9
    assert vals[0] <= g.min() + 1e-9
    plain, plain_val = trs_batch(form, lin)
    assert vals[0] <= plain_val[0] - math.sqrt(plain[0] @ A_inv[0] @ plain[0]) + 1e-12
