"""Numeric kernels: projections, 1-D convex minimisation, projected subgradient,
dual norms and k-nearest-neighbour graphs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import FitReport, ParameterError

KNN_MAX_POINTS = 200_000
PATH_FACTOR = 0.5
GAP_TOL = 1e-4
PATH_SHRINK = 0.25
_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop settings.

    ``step_rule`` is ``"polyak_estimate"`` (Polyak steps toward an adaptive
    target level) or ``"diminishing"`` (normalised steps ``c / sqrt(t+1)``).
    """

    max_iter: int = 5000
    tol: float = 1e-8
    step_rule: str = "polyak_estimate"
    c: float = 1.0
    seed: int = 0
    window: int = 50

    def __post_init__(self):
        if int(self.max_iter) < 1:
            raise ParameterError("max_iter must be positive")
        if not self.tol > 0:
            raise ParameterError("tol must be > 0")
        if self.step_rule not in ("polyak_estimate", "diminishing"):
            raise ParameterError(f"unknown step rule {self.step_rule!r}")


@dataclass(frozen=True)
class NormSpec:
    """Cost norm ``||x||_{Sigma,p} = ||Sigma^{1/2} x||_p`` on feature space."""

    p: float = 2.0
    sigma: Optional[np.ndarray] = None
    _sqrt: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    _isqrt: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if not (1.0 <= float(self.p) <= math.inf):
            raise ParameterError(f"norm exponent p must lie in [1, inf], got {self.p}")
        object.__setattr__(self, "p", float(self.p))
        if self.sigma is not None:
            S = np.array(self.sigma, dtype=float)
            if S.ndim != 2 or S.shape[0] != S.shape[1] or not np.allclose(S, S.T):
                raise ParameterError("Sigma must be a symmetric square matrix")
            try:
                np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                raise ParameterError("Sigma is not positive definite") from None
            w, V = np.linalg.eigh(S)
            object.__setattr__(self, "sigma", S)
            object.__setattr__(self, "_sqrt", (V * np.sqrt(w)) @ V.T)
            object.__setattr__(self, "_isqrt", (V / np.sqrt(w)) @ V.T)

    @property
    def q(self) -> float:
        if self.p == 1.0:
            return math.inf
        if self.p == math.inf:
            return 1.0
        return self.p / (self.p - 1.0)

    def whiten_dual(self, v):
        """Sigma^{-1/2} v."""
        v = np.asarray(v, dtype=float)
        return v if self._isqrt is None else self._isqrt @ v

    def primal(self, u) -> float:
        u = np.asarray(u, dtype=float)
        z = u if self._sqrt is None else self._sqrt @ u
        return _lp(z, self.p)


def _lp(z: np.ndarray, p: float) -> float:
    if z.size == 0:
        return 0.0
    if p == math.inf:
        return float(np.max(np.abs(z)))
    if p == 1.0:
        return float(np.sum(np.abs(z)))
    if p == 2.0:
        return float(np.sqrt(z @ z))
    a = np.abs(z)
    s = a.max()
    if s == 0:
        return 0.0
    return float(s * np.sum((a / s) ** p) ** (1.0 / p))


def dual_norm(v, norm: NormSpec = NormSpec()) -> float:
    """||Sigma^{-1/2} v||_q with 1/p + 1/q = 1."""
    return _lp(norm.whiten_dual(v), norm.q)


def dual_direction(v, norm: NormSpec = NormSpec()) -> np.ndarray:
    """Unit vector u (``norm.primal(u) == 1``) with ``v @ u == dual_norm(v)``."""
    v = np.asarray(v, dtype=float)
    w = norm.whiten_dual(v)
    q = norm.q
    if not np.any(w):
        z = np.zeros_like(w)
        z[0] = 1.0
    elif q == math.inf:
        k = int(np.argmax(np.abs(w)))
        z = np.zeros_like(w)
        z[k] = 1.0 if w[k] >= 0 else -1.0
    elif q == 1.0:
        z = np.where(w >= 0, 1.0, -1.0)
    else:
        a = np.abs(w) / np.max(np.abs(w))
        z = np.sign(w) * a ** (q - 1.0)
        z /= _lp(z, norm.p)
    return z if norm._isqrt is None else norm._isqrt @ z


# --------------------------------------------------------------- projections


def project_simplex(v) -> np.ndarray:
    """Euclidean projection onto {q >= 0, sum(q) = 1}."""
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    ind = np.arange(1, v.size + 1)
    rho = np.nonzero(u - css / ind > 0)[0][-1]
    tau = css[rho] / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def project_l1_ball(v, radius: float) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    a = np.abs(v)
    if a.sum() <= radius:
        return v.copy()
    if radius <= 0:
        return np.zeros_like(v)
    return np.sign(v) * radius * project_simplex(a / radius)


def project_lq_ball(v, radius: float, q: float) -> np.ndarray:
    """Euclidean projection onto {x : ||x||_q <= radius}."""
    v = np.asarray(v, dtype=float)
    if _lp(v, q) <= radius:
        return v.copy()
    if radius <= 0:
        return np.zeros_like(v)
    if q == 2.0:
        return v * (radius / _lp(v, 2.0))
    if q == math.inf:
        return np.clip(v, -radius, radius)
    if q == 1.0:
        return project_l1_ball(v, radius)
    # KKT: x_i = sign(v_i) t_i, t_i + mu q t_i^{q-1} = |v_i|; bisection on mu.
    a = np.abs(v)

    def coords(mu):
        lo, hi = np.zeros_like(a), a.copy()
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            over = mid + mu * q * mid ** (q - 1.0) > a
            hi = np.where(over, mid, hi)
            lo = np.where(over, lo, mid)
        return lo

    mu_lo, mu_hi = 0.0, 1.0
    while _lp(coords(mu_hi), q) > radius:
        mu_hi *= 2.0
    for _ in range(80):
        mu = 0.5 * (mu_lo + mu_hi)
        if _lp(coords(mu), q) > radius:
            mu_lo = mu
        else:
            mu_hi = mu
    return np.sign(v) * coords(mu_hi)


# ---------------------------------------------------------- scalar search


def golden_section(f: Callable[[float], float], lo: float, hi: float, tol: float,
                   expand: bool = True, cap: float = 1e12):
    """Golden-section search for a unimodal ``f`` on [lo, hi].

    When the minimiser sits at ``hi`` and ``expand`` is set, the bracket is
    doubled (up to ``cap``). Returns ``(x, f(x), boundary_hit)`` where
    ``boundary_hit`` flags a minimiser pinned at the expansion cap.
    """
    if not lo < hi:
        raise ValueError("need lo < hi")

    def fv(x):
        val = float(f(x))
        if not math.isfinite(val):
            raise FloatingPointError(f"non-finite objective {val} at {x}")
        return val

    hit = False
    while True:
        a, b = lo, hi
        c = b - _GOLDEN * (b - a)
        d = a + _GOLDEN * (b - a)
        fc, fd = fv(c), fv(d)
        while b - a > tol:
            if fc <= fd:
                b, d, fd = d, c, fc
                c = b - _GOLDEN * (b - a)
                fc = fv(c)
            else:
                a, c, fc = c, d, fd
                d = a + _GOLDEN * (b - a)
                fd = fv(d)
        fx, x = min([(fv(lo), lo), (fc, c), (fd, d), (fv(hi), hi)], key=lambda t: t[0])
        at_hi = hi - x <= 2.0 * tol
        if expand and at_hi and hi < cap:
            lo, hi = max(lo, x - 4.0 * tol), min(cap, lo + 3.0 * (hi - lo))
            continue
        hit = expand and at_hi and hi >= cap
        return x, fx, hit


def scalar_convex_min(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-10):
    """Minimise a convex 1-D function; returns ``(argmin, min)``."""
    x, fx, _ = golden_section(f, lo, hi, tol)
    return x, fx


# -------------------------------------------------- projected subgradient


def projected_subgradient(oracle: Callable, project: Optional[Callable], x0,
                          cfg: SolverConfig = SolverConfig(), lower_bound: float = -math.inf):
    """Minimise a convex function given ``oracle(x) -> (f, g)``.

    Returns ``(x_best, FitReport)``. The reported point is the better of the
    best iterate and the step-weighted average of iterates. Divergence (a
    non-finite objective) stops the loop and is reported as non-converged.

    With ``step_rule="polyak_estimate"`` each step aims at the level
    ``f_rec - delta``; whenever the iterates travel a path longer than a
    budget without reaching the level, ``delta`` is halved and the search
    restarts from the best point. The budget shrinks like
    ``(delta/delta0)**PATH_SHRINK`` so that sharp minima (where the level is
    unreachable) are certified in a bounded number of halvings.
    ``lower_bound`` (0 for nonnegative losses) floors the level.

    Convergence: the best objective improved by less than ``tol`` (relative)
    over the last ``cfg.window`` iterations while the level gap ``delta``
    is below ``GAP_TOL`` relative -- a stall with a wide gap is an
    overshooting level, not an optimum.
    """
    proj = project if project is not None else (lambda z: z)
    x = proj(np.array(x0, dtype=float))
    f, g = oracle(x)
    if not math.isfinite(f):
        return x, FitReport(objective=f, iterations=0, converged=False)
    x_best, f_best = x.copy(), f
    history = [f]
    avg, wsum = np.zeros_like(x), 0.0
    polyak = cfg.step_rule == "polyak_estimate"
    base = f - lower_bound if math.isfinite(lower_bound) else abs(f)
    delta = delta0 = max(0.5 * base, 1e-12)
    f_rec = f
    path, path_cap = 0.0, None
    converged = False
    it = 0
    for it in range(1, int(cfg.max_iter) + 1):
        gn = math.sqrt(float(g @ g))
        if gn == 0.0:
            converged = True
            break
        if polyak:
            level = max(f_rec - delta, lower_bound)
            step = max(f - level, 0.25 * delta) / (gn * gn)
        else:
            step = cfg.c / math.sqrt(it) / gn
        if path_cap is None:
            path_cap = PATH_FACTOR * (float(np.sqrt(x @ x)) + step * gn + 1.0)
        x = proj(x - step * g)
        path += step * gn
        avg += step * x
        wsum += step
        f, g = oracle(x)
        if not math.isfinite(f):
            break
        if f < f_best:
            f_best, x_best = f, x.copy()
        if polyak:
            if f_best <= f_rec - 0.5 * delta:
                f_rec = f_best
                path = 0.0
            elif path > path_cap * (delta / delta0) ** PATH_SHRINK:
                delta *= 0.5
                path = 0.0
                f_rec = f_best
                x = x_best.copy()
                f, g = oracle(x)
        history.append(f_best)
        if len(history) > cfg.window:
            scale = max(abs(f_best), 1e-12)
            stalled = history[-cfg.window - 1] - f_best <= cfg.tol * scale
            if stalled and (not polyak or delta <= GAP_TOL * max(scale, 1e-3)):
                converged = True
                break
    if wsum > 0:
        xa = proj(avg / wsum)
        fa, _ = oracle(xa)
        if math.isfinite(fa) and fa < f_best:
            f_best, x_best = fa, xa
    return x_best, FitReport(objective=float(f_best), iterations=it,
                             converged=converged and math.isfinite(f_best))


# ----------------------------------------------------------------- kNN


def knn_graph(points, k: int, chunk: int = 2048):
    """Symmetric k-nearest-neighbour graph under Euclidean distance.

    Each point selects its k nearest other points (ties to the lower index);
    an undirected edge is kept when either endpoint selects it. Returns
    ``(i, j, dist)`` arrays with ``i < j``, sorted lexicographically.
    Brute force, O(n^2) time, O(chunk * n) memory; n is capped at
    ``KNN_MAX_POINTS``.
    """
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P.reshape(-1, 1)
    n = P.shape[0]
    k = int(k)
    if k < 1 or k >= n:
        raise ParameterError(f"need 1 <= k < n, got k={k}, n={n}")
    if n > KNN_MAX_POINTS:
        raise ParameterError(f"knn_graph supports at most {KNN_MAX_POINTS} points, got {n}")
    sq = np.einsum("ij,ij->i", P, P)
    src, dst = [], []
    for start in range(0, n, chunk):
        stop = min(start + chunk, n)
        D = sq[start:stop, None] - 2.0 * P[start:stop] @ P.T + sq[None, :]
        np.maximum(D, 0.0, out=D)
        rows = np.arange(stop - start)
        D[rows, rows + start] = np.inf
        # k smallest by (distance, index): everything below the k-th value,
        # then the lowest-indexed entries tied at it
        kth = np.partition(D, k - 1, axis=1)[:, k - 1 : k]
        below = D < kth
        tied = D == kth
        room = k - below.sum(axis=1, keepdims=True)
        keep = below | (tied & (np.cumsum(tied, axis=1) <= room))
        r, c = np.nonzero(keep)
        src.append(r + start)
        dst.append(c)
    src = np.concatenate(src)
    dst = np.concatenate(dst)
    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    keys = np.unique(lo.astype(np.int64) * n + hi)
    i, j = keys // n, keys % n
    dist = np.sqrt(np.sum((P[i] - P[j]) ** 2, axis=1))
    return i.astype(np.intp), j.astype(np.intp), dist
