import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robusta.core import ParameterError
from robusta.fdiv import kl_dual_value
from robusta.losses import loss_batch
from robusta.optim import (NormSpec, SolverConfig, dual_direction, dual_norm, golden_section, knn_graph,
                           project_l1_ball, project_lq_ball, project_simplex, projected_subgradient,
                           scalar_convex_min)

from oracles import kl_lambda_grid


def simplex_qp_enumeration(v):
    """Exact projection by trying every support set and keeping the nearest feasible point."""
    n = v.size
    best, best_d = None, math.inf
    for r in range(1, n + 1):
        for S in itertools.combinations(range(n), r):
            S = list(S)
            q = np.zeros(n)
            q[S] = v[S] - (v[S].sum() - 1.0) / r
            if q.min() < 0:
                continue
            dist = float(np.sum((q - v) ** 2))
            if dist < best_d:
                best, best_d = q, dist
    return best


# ------------------------------------------------------------ projections


def test_simplex_examples():
    assert np.allclose(project_simplex([0.2, 0.3, 0.5]), [0.2, 0.3, 0.5], atol=1e-15)
    assert np.array_equal(project_simplex([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])
    assert np.allclose(project_simplex([0.5, 0.9]), [0.3, 0.7], atol=1e-15)
    with pytest.raises(ValueError):
        project_simplex([])


def test_simplex_matches_enumeration_oracle():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(1, 11))
        v = rng.normal(size=n) * rng.choice([0.1, 1.0, 5.0])
        q = project_simplex(v)
        assert abs(q.sum() - 1.0) <= 1e-12 and q.min() >= 0.0
        assert np.max(np.abs(q - simplex_qp_enumeration(v))) <= 1e-8


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_simplex_feasible_and_idempotent(v):
    q = project_simplex(v)
    assert abs(q.sum() - 1.0) <= 1e-12 and q.min() >= 0.0
    assert np.allclose(project_simplex(q), q, atol=1e-12)


def test_lq_ball_projection_kkt():
    rng = np.random.default_rng(1)
    for q in (1.0, 1.5, 2.0, 3.0, math.inf):
        for _ in range(20):
            v = rng.normal(size=4) * 3
            x = project_lq_ball(v, 1.0, q)
            nrm = np.linalg.norm(x, ord=q)
            assert nrm <= 1.0 + 1e-9
            # no feasible point from a random sample is closer than x
            for _ in range(50):
                z = rng.normal(size=4)
                z /= max(np.linalg.norm(z, ord=q), 1.0)
                assert np.sum((v - x) ** 2) <= np.sum((v - z) ** 2) + 1e-7


def test_l1_ball_inside_is_identity():
    v = np.array([0.1, -0.2])
    assert np.array_equal(project_l1_ball(v, 1.0), v)


# ------------------------------------------------------------ scalar search


def test_scalar_examples():
    x, fx = scalar_convex_min(lambda t: (t - 2.0) ** 2, 0.0, 5.0, 1e-9)
    assert x == pytest.approx(2.0, abs=1e-6)
    x, fx = scalar_convex_min(lambda t: abs(t - 1.0), 0.0, 3.0, 1e-9)
    assert x == pytest.approx(1.0, abs=1e-8)


def test_scalar_kl_dual_matches_grid():
    v = np.array([0.0, 1.0])
    eps = 0.1

    def g(lam):
        return lam * eps + v.max() + lam * np.log(np.mean(np.exp((v - v.max()) / lam)))

    _, val = scalar_convex_min(g, 1e-3, 10.0, 1e-12)
    assert val == pytest.approx(kl_lambda_grid(v, eps), abs=1e-6)
    assert kl_dual_value(v, eps)[0] == pytest.approx(val, abs=1e-6)


def test_golden_expands_and_reports_cap():
    x, _, hit = golden_section(lambda t: (t - 50.0) ** 2, 0.0, 1.0, 1e-9)
    assert x == pytest.approx(50.0, abs=1e-6) and not hit
    x, _, hit = golden_section(lambda t: -t, 0.0, 1.0, 1e-6, cap=100.0)
    assert hit and x == pytest.approx(100.0)


def test_golden_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        golden_section(lambda t: math.nan, 0.0, 1.0, 1e-6)


@settings(max_examples=50, deadline=None)
@given(st.floats(-5, 5), st.floats(0.1, 10), st.floats(1, 100))
def test_scalar_stable_under_widening(c, a, widen):
    f = lambda t: a * (t - c) ** 2 + abs(t - c)
    x1, _ = scalar_convex_min(f, -10.0, 10.0, 1e-10)
    x2, _ = scalar_convex_min(f, -10.0 * widen, 10.0 * widen, 1e-10)
    assert abs(x1 - c) <= 1e-7 and abs(x2 - c) <= 1e-7


# ------------------------------------------------------ subgradient method


def test_subgradient_quadratic():
    x, rep = projected_subgradient(lambda z: (float(z @ z), 2 * z), None, [3.0, 4.0],
                                   SolverConfig(), lower_bound=0.0)
    assert np.linalg.norm(x) <= 1e-3
    assert rep.objective == pytest.approx(float(x @ x))


def test_subgradient_separable_hinge():
    X = np.array([[1.0], [-1.0]])
    y = np.array([1.0, -1.0])

    def oracle(w):
        ev = loss_batch("svm", w[:1], w[1], X, y)
        return float(ev.values.mean()), np.append(ev.subgrad_theta.mean(axis=0), ev.subgrad_intercept.mean())

    _, rep = projected_subgradient(oracle, None, np.zeros(2), SolverConfig(), lower_bound=0.0)
    assert rep.objective <= 1e-3


def test_subgradient_matches_grid_optimum():
    def f(z):
        return abs(z[0] - 0.3) + 2 * abs(z[1] + 0.7) + 0.4 * (z[0] + z[1]) ** 2 + 0.1 * z[0]

    def oracle(z):
        s = z[0] + z[1]
        g = np.array([np.sign(z[0] - 0.3) + 0.8 * s + 0.1, 2 * np.sign(z[1] + 0.7) + 0.8 * s])
        return float(f(z)), g

    # coarse grid, then a fine grid around the coarse winner
    t = np.arange(-2.0, 2.0 + 1e-9, 0.01)
    A, B = np.meshgrid(t, t, indexing="ij")
    F = np.abs(A - 0.3) + 2 * np.abs(B + 0.7) + 0.4 * (A + B) ** 2 + 0.1 * A
    i, j = np.unravel_index(np.argmin(F), F.shape)
    u = np.linspace(-0.01, 0.01, 2001)
    A2, B2 = np.meshgrid(t[i] + u, t[j] + u, indexing="ij")
    F2 = np.abs(A2 - 0.3) + 2 * np.abs(B2 + 0.7) + 0.4 * (A2 + B2) ** 2 + 0.1 * A2
    grid_min = float(F2.min())
    x, rep = projected_subgradient(oracle, None, [1.5, 1.5], SolverConfig(max_iter=20000))
    assert rep.objective == pytest.approx(grid_min, abs=1e-4)


def test_subgradient_reports_divergence():
    def oracle(z):
        return (math.inf if abs(z[0]) > 5 else -z[0]), np.array([-1.0])

    _, rep = projected_subgradient(oracle, None, [0.0], SolverConfig(max_iter=200, step_rule="diminishing", c=10.0))
    assert not rep.converged


def test_projection_is_applied():
    proj = lambda z: np.clip(z, 1.0, 2.0)
    x, _ = projected_subgradient(lambda z: (float(z @ z), 2 * z), proj, [3.0], SolverConfig())
    assert x[0] == pytest.approx(1.0, abs=1e-6)


def test_solver_config_validation():
    with pytest.raises(ParameterError):
        SolverConfig(max_iter=0)
    with pytest.raises(ParameterError):
        SolverConfig(step_rule="newton")


# ------------------------------------------------------------ norms


def test_dual_norm_examples():
    assert dual_norm([3.0, 4.0], NormSpec(2.0)) == pytest.approx(5.0, abs=1e-15)
    assert dual_norm([3.0, -4.0], NormSpec(1.0)) == pytest.approx(4.0, abs=1e-15)
    assert dual_norm([3.0, -4.0], NormSpec(math.inf)) == pytest.approx(7.0, abs=1e-15)
    sig = NormSpec(2.0, np.diag([4.0, 1.0]))
    assert dual_norm([1.0, 1.0], sig) == pytest.approx(math.sqrt(1.25), abs=1e-15)


def test_norm_rejects_non_pd():
    with pytest.raises(ParameterError):
        NormSpec(2.0, np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(ParameterError):
        NormSpec(0.5)


def _random_norm(rng, p):
    A = rng.normal(size=(3, 3))
    return NormSpec(p, A @ A.T + 0.5 * np.eye(3))


@settings(max_examples=100, deadline=None)
@given(st.sampled_from([1.0, 1.5, 2.0, 4.0, math.inf]), st.integers(0, 2**31))
def test_holder_inequality_and_tight_direction(p, seed):
    rng = np.random.default_rng(seed)
    norm = _random_norm(rng, p)
    v, u = rng.normal(size=3), rng.normal(size=3)
    dn = dual_norm(v, norm)
    assert v @ u <= dn * norm.primal(u) + 1e-10
    z = dual_direction(v, norm)
    assert norm.primal(z) == pytest.approx(1.0, rel=1e-9)
    assert v @ z == pytest.approx(dn, rel=1e-9)


# ------------------------------------------------------------ kNN


def test_knn_collinear_example():
    i, j, dist = knn_graph(np.array([[0.0], [1.0], [3.0]]), 1)
    assert list(zip(i.tolist(), j.tolist())) == [(0, 1), (1, 2)]
    assert dist.tolist() == [1.0, 2.0]


def test_knn_complete_and_duplicates():
    rng = np.random.default_rng(2)
    P = rng.normal(size=(6, 2))
    i, j, _ = knn_graph(P, 5)
    assert len(i) == 15
    i, j, dist = knn_graph(np.array([[1.0, 1.0], [1.0, 1.0], [5.0, 5.0]]), 1)
    assert (0, 1) in set(zip(i.tolist(), j.tolist()))
    assert dist[0] == 0.0


def test_knn_tie_goes_to_lower_index():
    # point 1 is equidistant from 0 and 2
    i, j, _ = knn_graph(np.array([[0.0], [1.0], [2.0], [10.0]]), 1)
    edges = set(zip(i.tolist(), j.tolist()))
    assert (0, 1) in edges and (1, 2) in edges and (2, 3) in edges
    assert len(edges) == 3


def test_knn_rejects_large_k():
    with pytest.raises(ParameterError):
        knn_graph(np.zeros((3, 1)), 3)


@settings(max_examples=40, deadline=None)
@given(st.integers(3, 25), st.integers(0, 2**31))
def test_knn_out_degree_against_brute_force(n, seed):
    rng = np.random.default_rng(seed)
    P = rng.normal(size=(n, 2))
    k = int(rng.integers(1, n))
    i, j, dist = knn_graph(P, k)
    D = np.linalg.norm(P[:, None] - P[None], axis=2)
    np.fill_diagonal(D, np.inf)
    expected = set()
    for a in range(n):
        for b in np.lexsort((np.arange(n), D[a]))[:k]:
            expected.add((min(a, b), max(a, b)))
    assert set(zip(i.tolist(), j.tolist())) == expected
    assert np.allclose(dist, D[i, j])
