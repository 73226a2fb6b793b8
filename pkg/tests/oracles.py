"""Independent reference computations used by the tests.

Nothing here calls into the package's solvers: the references are LPs
(scipy linprog), generic constrained local search (SLSQP) with many starts,
dense grids, and direct formula evaluation.
"""

import itertools
import math

import numpy as np
from scipy.optimize import linprog, minimize
from scipy.spatial.distance import cdist
from scipy.special import expit, xlogy

# ----------------------------------------------------------------- losses


def ref_losses(kind, theta, b, X, y):
    m = X @ np.asarray(theta, dtype=float) + b
    if kind == "lad":
        return np.abs(y - m)
    if kind == "ols":
        return (y - m) ** 2
    if kind == "svm":
        return np.maximum(0.0, 1.0 - y * m)
    return np.logaddexp(0.0, -y * m)


# ------------------------------------------------------------- f-divergence


def simplex_grid(n, steps):
    """All points of the simplex with coordinates in multiples of 1/steps."""
    pts = []
    for c in itertools.combinations(range(steps + n - 1), n - 1):
        cuts = np.array((-1,) + c + (steps + n - 1,))
        pts.append(np.diff(cuts) - 1)
    return np.array(pts, dtype=float) / steps


def div_value(q, family, n):
    if family == "kl":
        return float(np.sum(xlogy(q, n * q)))
    if family == "chi2":
        return float(np.mean((n * q - 1.0) ** 2))
    if family == "tv":
        return float(np.sum(np.abs(q - 1.0 / n)))
    raise ValueError(family)


def _grid_best(v, family, radius, steps):
    n = v.size
    Q = simplex_grid(n, steps)
    if family == "kl":
        d = np.sum(xlogy(Q, n * Q), axis=1)
    elif family == "chi2":
        d = np.mean((n * Q - 1.0) ** 2, axis=1)
    else:
        d = np.sum(np.abs(Q - 1.0 / n), axis=1)
    ok = d <= radius + 1e-12
    return float((Q[ok] @ v).max()) if np.any(ok) else -math.inf


def primal_fdiv(v, family, radius, starts=8, seed=0):
    """max q.v over the simplex ball, by simplex grid + multi-start SLSQP.

    TV is an LP and is solved exactly with linprog instead (CVaR: see cvar_lp).
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    if family == "tv":
        # q = 1/n + p - m, p, m >= 0, sum(p - m) = 0, sum(p + m) <= radius, q >= 0
        c = np.concatenate([-v, v])
        A_ub = np.vstack([np.ones(2 * n), np.hstack([-np.eye(n), np.eye(n)])])
        b_ub = np.concatenate([[radius], np.full(n, 1.0 / n)])
        A_eq = np.concatenate([np.ones(n), -np.ones(n)])[None]
        r = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[0.0], bounds=[(0, None)] * (2 * n),
                    method="highs")
        return float(v.mean() - r.fun)
    best = _grid_best(v, family, radius, steps={2: 400, 3: 200, 4: 60, 5: 30}.get(n, 12)) if n > 1 else v[0]
    rng = np.random.default_rng(seed)
    cons = [{"type": "eq", "fun": lambda q: q.sum() - 1.0, "jac": lambda q: np.ones(n)}]
    if family == "kl":
        cons.append({"type": "ineq", "fun": lambda q: radius - np.sum(xlogy(np.maximum(q, 0), n * np.maximum(q, 0)))})
    else:
        cons.append({"type": "ineq", "fun": lambda q: radius - np.mean((n * q - 1.0) ** 2),
                     "jac": lambda q: -2.0 * (n * q - 1.0)})
    for s in range(starts):
        q0 = rng.dirichlet(np.ones(n)) if s else np.full(n, 1.0 / n)
        r = minimize(lambda q: -(q @ v), q0, jac=lambda q: -v, method="SLSQP", constraints=cons,
                     bounds=[(0.0, 1.0)] * n, options={"ftol": 1e-14, "maxiter": 500})
        q = np.maximum(r.x, 0.0)
        q /= q.sum()
        if div_value(q, family, n) <= radius + 1e-9:
            best = max(best, float(q @ v))
    return best


def cvar_lp(v, alpha):
    """max q.v over {0 <= q <= 1/(alpha n), sum q = 1} via linprog."""
    v = np.asarray(v, dtype=float)
    n = v.size
    r = linprog(-v, A_eq=np.ones((1, n)), b_eq=[1.0], bounds=[(0.0, 1.0 / (alpha * n))] * n, method="highs")
    return float(-r.fun)


def cvar_breakpoints(v, alpha):
    """min over eta of eta + mean((v - eta)_+)/alpha, checked at every loss value."""
    v = np.asarray(v, dtype=float)
    etas = v[:, None]
    vals = v + np.mean(np.maximum(v[None, :] - etas, 0.0), axis=1) / alpha
    return float(vals.min())


def kl_lambda_grid(v, eps, points=1_000_000):
    """min over a dense lambda grid (plus lambda = 0) of the KL dual function."""
    v = np.asarray(v, dtype=float)
    top = v.max()
    spread = max(top - v.min(), 1e-12)
    lam = np.geomspace(1e-7 * spread, 1e3 * spread / max(eps, 1e-12), points)
    best = top
    for chunk in np.array_split(lam, 20):
        g = chunk * eps + top + chunk * np.log(np.mean(np.exp((v[None, :] - top) / chunk[:, None]), axis=1))
        best = min(best, float(g.min()))
    return best


# -------------------------------------------------------------- Wasserstein


def project_budget(D, budget):
    """Scale rows of D so that sum of row norms <= budget (l1 projection of the norms)."""
    norms = np.linalg.norm(D, axis=1)
    if norms.sum() <= budget:
        return D
    u = np.sort(norms)[::-1]
    css = np.cumsum(u) - budget
    k = np.nonzero(u - css / np.arange(1, u.size + 1) > 0)[0][-1]
    tau = css[k] / (k + 1.0)
    new = np.maximum(norms - tau, 0.0)
    scale = np.divide(new, norms, out=np.zeros_like(norms), where=norms > 0)
    return D * scale[:, None]


def perturbation_ascent(kind, theta, b, X, y, eps, iters=2000, seed=0):
    """Lower bound on the Wasserstein sup by gradient ascent on atom positions.

    Euclidean cost on x only (Sigma = I, p = 2, labels fixed); the average
    displacement is kept <= eps by projection.
    """
    rng = np.random.default_rng(seed)
    n = X.shape[0]
    theta = np.asarray(theta, dtype=float)
    D = rng.normal(size=X.shape) * 1e-3
    D = project_budget(D, n * eps)
    best = float(np.mean(ref_losses(kind, theta, b, X + D, y)))
    step = eps
    for t in range(iters):
        m = (X + D) @ theta + b
        if kind == "lad":
            s = -np.sign(y - m)
        elif kind == "ols":
            s = -2.0 * (y - m)
        elif kind == "svm":
            s = np.where(1.0 - y * m > 0, -y, 0.0)
        else:
            s = -y * expit(-y * m)
        G = s[:, None] * theta[None, :]
        D = project_budget(D + step * G, n * eps)
        best = max(best, float(np.mean(ref_losses(kind, theta, b, X + D, y))))
    return best


# ----------------------------------------------------------------- grids


def vectorized_objective(family, kind, W, X, y, radius):
    """Robust objective at many parameter rows W = [theta, b] (G x (d+1)).

    Closed forms only: cvar sorting, chi2 by enumerating top-k supports, tv by
    moving mass from the smallest losses, lad/svm Wasserstein (kappa = inf,
    l2) by the Lipschitz formula, kl by a vectorised lambda golden search.
    """
    M = X @ W[:, :-1].T + W[:, -1][None, :]  # n x G
    Y = y[:, None]
    if kind == "lad":
        V = np.abs(Y - M)
    elif kind == "ols":
        V = (Y - M) ** 2
    elif kind == "svm":
        V = np.maximum(0.0, 1.0 - Y * M)
    else:
        V = np.logaddexp(0.0, -Y * M)
    V = V.T  # G x n
    n = V.shape[1]
    if family == "wdro":
        return V.mean(axis=1) + radius * np.linalg.norm(W[:, :-1], axis=1)
    S = -np.sort(-V, axis=1)  # descending
    if family == "cvar":
        alpha = radius
        k = alpha * n
        full = int(math.floor(k + 1e-12))
        out = S[:, :full].sum(axis=1)
        if full < n:
            out += (k - full) * S[:, full]
        return out / k
    if family == "tv":
        budget = min(radius / 2.0, 1.0 - 1.0 / n)
        asc = S[:, ::-1]
        q = np.full(V.shape, 1.0 / n)
        drain = np.minimum(np.maximum(budget - np.arange(n - 1) / n, 0.0), 1.0 / n)
        q[:, : n - 1] -= drain[None, :]
        q[:, n - 1] += budget
        return np.sum(q * asc, axis=1)
    if family == "chi2":
        target = (1.0 + radius) / n
        best = np.full(V.shape[0], -np.inf)
        for k in range(1, n + 1):
            top = S[:, :k]
            mu = top.mean(axis=1)
            dev = top - mu[:, None]
            nrm = np.sqrt(np.sum(dev * dev, axis=1))
            if target < 1.0 / k - 1e-15:
                continue
            t = math.sqrt(max(target - 1.0 / k, 0.0))
            with np.errstate(invalid="ignore", divide="ignore"):
                q = 1.0 / k + t * np.where(nrm[:, None] > 0, dev / nrm[:, None], 0.0)
            ok = q.min(axis=1) >= -1e-12
            val = mu + t * nrm
            best = np.where(ok, np.maximum(best, val), best)
        return best
    if family == "kl":
        eps = radius
        top = S[:, 0]
        mean = V.mean(axis=1)
        lo = np.zeros_like(top)
        hi = np.maximum((top - mean) / eps, 1e-12)

        def g(lam):
            with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
                val = lam * eps + top + lam * np.log(np.mean(np.exp((V - top[:, None]) / lam[:, None]), axis=1))
            return np.where(lam > 0, val, top)

        phi = (math.sqrt(5.0) - 1.0) / 2.0
        a, bb = lo, hi
        c, d = bb - phi * (bb - a), a + phi * (bb - a)
        fc, fd = g(c), g(d)
        for _ in range(80):
            left = fc <= fd
            bb = np.where(left, d, bb)
            a = np.where(left, a, c)
            c_new = bb - phi * (bb - a)
            d_new = a + phi * (bb - a)
            c, d = np.where(left, c_new, d), np.where(left, c, d_new)
            fc, fd = np.where(left, g(c), fd), np.where(left, fc, g(d))
        return np.minimum(np.minimum(fc, fd), np.minimum(top, g(hi)))
    raise ValueError(family)


def grid_minimum(family, kind, X, y, radius, box=3.0, coarse=0.05, fine=0.01, chunk=200_000):
    """Grid minimum over (theta_1, theta_2, b): a coarse sweep of the whole box, then
    a step-``fine`` sweep of the neighbourhood of the coarse winner."""
    def sweep(axes):
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))
        best, arg = math.inf, None
        for s in range(0, grid.shape[0], chunk):
            W = grid[s:s + chunk]
            vals = vectorized_objective(family, kind, W, X, y, radius)
            i = int(np.argmin(vals))
            if vals[i] < best:
                best, arg = float(vals[i]), W[i]
        return best, arg

    axis = np.round(np.arange(-box, box + coarse / 2, coarse), 10)
    best, arg = sweep([axis] * (X.shape[1] + 1))
    local = [np.round(np.arange(c - 3 * coarse, c + 3 * coarse + fine / 2, fine), 10) for c in arg]
    local = [a[(a >= -box - 1e-9) & (a <= box + 1e-9)] for a in local]
    best2, arg2 = sweep(local)
    return min(best, best2), (arg2 if best2 <= best else arg)


# ---------------------------------------------------------------- marginal


def marginal_dense_lp(losses, C, alpha, L):
    """Dense-graph marginal-CVaR value at fixed losses, as one LP.

    Variables (eta, B_row, B_col, s) with all ordered pairs i != j as edges:
    eta + 1/(alpha n) sum s + 1/(L n^2) sum_{i != j} d_ij (B_row_i + B_col_j)/2,
    s_i >= loss_i - (B_row_i - B_col_i)/n - eta, s >= 0, sum B_row = sum B_col.
    """
    v = np.asarray(losses, dtype=float)
    n = v.size
    D = cdist(C, C)
    crow = 0.5 * D.sum(axis=1)
    ccol = 0.5 * D.sum(axis=0)
    c = np.concatenate([[1.0], crow / (L * n * n), ccol / (L * n * n), np.full(n, 1.0 / (alpha * n))])
    I = np.eye(n)
    A_ub = np.hstack([-np.ones((n, 1)), -I / n, I / n, -I])
    b_ub = -v
    A_eq = np.concatenate([[0.0], np.ones(n), -np.ones(n), np.zeros(n)])[None]
    bounds = [(None, None)] + [(0, None)] * (3 * n)
    r = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[0.0], bounds=bounds, method="highs",
                options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10})
    return float(r.fun)


def standardize(C):
    C = np.asarray(C, dtype=float)
    sd = C.std(axis=0)
    keep = sd > 0
    if not np.any(keep):
        return np.zeros((C.shape[0], 1))
    return (C[:, keep] - C[:, keep].mean(axis=0)) / sd[keep]


# -------------------------------------------------------------------- ERM


def erm_reference(kind, X, y):
    """Exact (LP / least squares) or tightly converged (L-BFGS) ERM minimum."""
    n, d = X.shape
    A = np.hstack([X, np.ones((n, 1))])
    if kind == "ols":
        w = np.linalg.lstsq(A, y, rcond=None)[0]
        return float(np.mean((y - A @ w) ** 2))
    if kind == "lad":
        c = np.concatenate([np.zeros(d + 1), np.ones(n) / n])
        A_ub = np.vstack([np.hstack([A, -np.eye(n)]), np.hstack([-A, -np.eye(n)])])
        b_ub = np.concatenate([y, -y])
        r = linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * (d + 1) + [(0, None)] * n, method="highs")
        return float(r.fun)
    if kind == "svm":
        Z = y[:, None] * A
        c = np.concatenate([np.zeros(d + 1), np.ones(n) / n])
        r = linprog(c, A_ub=np.hstack([-Z, -np.eye(n)]), b_ub=-np.ones(n),
                    bounds=[(None, None)] * (d + 1) + [(0, None)] * n, method="highs")
        return float(r.fun)

    def f(w):
        m = y * (A @ w)
        return float(np.mean(np.logaddexp(0.0, -m))), -(A.T @ (y * expit(-m))) / n

    r = minimize(f, np.zeros(d + 1), jac=True, method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12})
    return float(r.fun)


def ols_penalty_numeric(r, s, k):
    """sup_t (|r| + s t)^2 - k t^2 by bounded 1-D search (k > s^2)."""
    from scipy.optimize import minimize_scalar

    hi = 10.0 * (abs(r) + 1.0) * (1.0 + s) / max(k - s * s, 1e-12)
    res = minimize_scalar(lambda t: -((abs(r) + s * t) ** 2 - k * t * t), bounds=(0.0, hi), method="bounded",
                          options={"xatol": 1e-12})
    return max(-res.fun, r * r)

