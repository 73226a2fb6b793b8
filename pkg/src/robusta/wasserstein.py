"""Wasserstein DRO for linear backbones via exact regularisation forms.

Transport cost between atoms ``(x, y)`` and ``(x', y')`` is
``||x - x'||_{Sigma,p} + kappa * dy`` (squared for ``ols``), where ``dy`` is
``|y - y'|`` for regression and the flip indicator for classification.
``kappa = inf`` forbids label moves. The intercept is never charged.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special

from . import losses as L
from .core import (DROEstimator, DataError, Dataset, FitReport, LinearModel, ParameterError,
                   RobustaError, WorstCase, check_compatible, require_range)
from .optim import (NormSpec, SolverConfig, dual_direction, dual_norm, project_lq_ball,
                    projected_subgradient)

SLOPE_CAP = 1e8
MAX_BISECT = 200


@dataclass(frozen=True)
class WassersteinSpec:
    eps: float = 0.0
    kappa: float = math.inf
    norm: NormSpec = field(default_factory=NormSpec)

    def __post_init__(self):
        require_range("eps", self.eps, 0.0, math.inf)
        require_range("kappa", self.kappa, 0.0, math.inf, lo_open=True)


@dataclass(frozen=True)
class RSSpec:
    target_ratio: float = 1.1
    kappa: float = math.inf
    norm: NormSpec = field(default_factory=NormSpec)
    bisect_tol: float = 1e-3

    def __post_init__(self):
        require_range("target_ratio", self.target_ratio, 1.0, math.inf, lo_open=True)
        require_range("kappa", self.kappa, 0.0, math.inf, lo_open=True)
        require_range("bisect_tol", self.bisect_tol, 0.0, 1.0, lo_open=True, hi_open=True)


class TargetUnreachable(RobustaError):
    """No fragility slope up to the cap meets the satisficing target."""


def _slope(theta, spec) -> float:
    """Lipschitz constant of a regression residual under the transport cost."""
    return max(dual_norm(theta, spec.norm), 1.0 / spec.kappa)


def _dual_subgrad(theta, norm) -> np.ndarray:
    if not np.any(theta):
        return np.zeros_like(theta)
    return dual_direction(theta, norm)


def _flip_lambda(a: np.ndarray, b: np.ndarray, s0: float, eps: float, kappa: float) -> float:
    """argmin over lam >= s0 of lam*eps + mean(max(a, b - lam*kappa)).

    The objective is convex piecewise linear in lam with slope
    ``eps - kappa * #{i : (b_i - a_i)/kappa > lam} / n``.
    """
    if math.isinf(kappa):
        return s0
    n = a.size
    t = (b - a) / kappa
    K = int(math.floor(n * eps / kappa + 1e-12))
    if K >= n:
        return s0
    kth = -np.partition(-t, K)[K]  # (K+1)-th largest
    return max(s0, float(kth))


def _classification_parts(kind, m, y, theta, spec):
    a, sa = L.loss_and_slope(kind, m, y)
    b, sb = L.loss_and_slope(kind, m, -y)
    s0 = dual_norm(theta, spec.norm)
    lam = _flip_lambda(a, b, s0, spec.eps, spec.kappa)
    if math.isinf(spec.kappa):
        flip = np.zeros(a.size, dtype=bool)
        terms = a
    else:
        flip = b - lam * spec.kappa > a
        terms = np.where(flip, b - lam * spec.kappa, a)
    return lam, terms, flip, sa, sb


def _objective_and_grad(kind, Z, y, w, spec, want_grad=True):
    d = Z.shape[1]
    theta, b0 = w[:d], w[d]
    m = Z @ theta + b0
    n = y.size
    if kind in ("lad", "ols"):
        vals, slope = L.loss_and_slope(kind, m, y)
        dn = dual_norm(theta, spec.norm)
        s = max(dn, 1.0 / spec.kappa)
        ds = _dual_subgrad(theta, spec.norm) if dn >= 1.0 / spec.kappa else np.zeros(d)
        if kind == "lad":
            value = vals.mean() + spec.eps * s
            if not want_grad:
                return value, s, None
            g = np.append(Z.T @ slope / n + spec.eps * ds, slope.mean())
            return value, s, g
        mse = vals.mean()
        root = math.sqrt(mse)
        se = math.sqrt(spec.eps)
        value = (root + se * s) ** 2
        if not want_grad:
            return value, s, None
        outer = 2.0 * (root + se * s)
        gm = np.append(Z.T @ slope / n, slope.mean())
        groot = gm / (2.0 * root) if root > 0 else np.zeros(d + 1)
        g = outer * (groot + se * np.append(ds, 0.0))
        return value, s, g
    lam, terms, flip, sa, sb = _classification_parts(kind, m, y, theta, spec)
    value = lam * spec.eps + terms.mean()
    if not want_grad:
        return value, lam, None
    slope = np.where(flip, sb, sa)
    g = np.append(Z.T @ slope / n, slope.mean())
    s0 = dual_norm(theta, spec.norm)
    if lam <= s0:
        # multiplier of lam >= ||theta||_*: right slope of the lam-objective there
        if math.isinf(spec.kappa):
            mu = spec.eps
        else:
            a = L.loss_and_slope(kind, m, y)[0]
            bb = L.loss_and_slope(kind, m, -y)[0]
            cnt = np.count_nonzero((bb - a) / spec.kappa > s0)
            mu = max(0.0, spec.eps - spec.kappa * cnt / n)
        g[:d] += mu * _dual_subgrad(theta, spec.norm)
    return value, lam, g


def robust_objective(model: LinearModel, data: Dataset, spec: WassersteinSpec) -> float:
    """Worst-case expected loss over the Wasserstein ball, in closed form."""
    Z = check_compatible(model, data)
    w = np.append(model.theta, model.intercept)
    if spec.eps == 0:
        vals = L.loss_values(model.kind, model.theta, model.intercept, Z, data.y)
        return float(vals.mean())
    return float(_objective_and_grad(model.kind, Z, data.y, w, spec, want_grad=False)[0])


def _check_kind(data: Dataset, kind: str) -> None:
    if L.task_of(kind) != data.task:
        raise DataError(f"backbone {kind!r} does not match {data.task} data")


def fit(data: Dataset, kind: str, spec: WassersteinSpec, cfg: SolverConfig = SolverConfig()):
    _check_kind(data, kind)
    Z, y = data.X, data.y

    def oracle(w):
        value, _, g = _objective_and_grad(kind, Z, y, w, spec)
        return value, g

    w, report = projected_subgradient(oracle, None, np.zeros(data.d + 1), cfg, lower_bound=0.0)
    model = LinearModel(kind, w[:-1], w[-1])
    value, dual, _ = _objective_and_grad(kind, Z, y, w, spec, want_grad=False)
    report.objective = float(value)
    report.dual_lambda = float(dual)
    return model, report


# ------------------------------------------------------- worst case atoms


def transport_cost(data: Dataset, X_new, y_new, kind: str, norm: NormSpec, kappa: float) -> float:
    """Average cost of moving each atom to its perturbed copy (identity coupling)."""
    X_new = np.asarray(X_new, dtype=float)
    y_new = np.asarray(y_new, dtype=float)
    dx = np.array([norm.primal(r) for r in X_new - data.X])
    if data.task == "classification":
        dy = (y_new != data.y).astype(float)
    else:
        dy = np.abs(y_new - data.y)
    label = np.zeros_like(dy)
    moved = dy > 0
    label[moved] = kappa * dy[moved]
    c = dx + label
    if kind == "ols":
        c = c ** 2
    return float(np.mean(c))


def worst_distribution(model: LinearModel, data: Dataset, spec: WassersteinSpec) -> WorstCase:
    """Perturbed atoms (mass 1/n each) within transport budget ``eps``.

    lad moves every atom by eps along the steepest direction; ols moves
    atom i by a distance proportional to |r_i|; svm and logistic spend the
    whole budget on the single atom whose loss grows the most, optionally
    after flipping labels where the flip term of the dual is active.
    """
    Z = check_compatible(model, data)
    kind, theta, b0 = model.kind, model.theta, model.intercept
    X, y = data.X.copy(), data.y.copy()
    n = data.n
    eps = spec.eps

    def result(Xn, yn):
        vals = L.loss_values(kind, theta, b0, Xn, yn)
        return WorstCase("perturb", attained_value=float(vals.mean()), X=Xn, y=yn)

    if eps == 0:
        return result(X, y)
    dn = dual_norm(theta, spec.norm)
    u = dual_direction(theta, spec.norm)
    move_label = dn < 1.0 / spec.kappa
    r = y - (Z @ theta + b0)
    sgn = np.where(r >= 0, 1.0, -1.0)
    if kind in ("lad", "ols"):
        if kind == "lad":
            t = np.full(n, eps)
        else:
            mse = float(np.mean(r * r))
            t = np.abs(r) * math.sqrt(eps / mse) if mse > 0 else np.full(n, math.sqrt(eps))
        if move_label:
            y = y + sgn * t / spec.kappa
        else:
            X = X - (sgn * t)[:, None] * u[None, :]
        return result(X, y)

    budget = n * eps
    margins = y * (Z @ theta + b0)

    def concentrate(X0, y0, margins0, budget0):
        if budget0 <= 0 or dn == 0:
            return X0, y0
        shifted = margins0 - budget0 * dn
        gain = L.loss_and_slope(kind, shifted, np.ones(n))[0] - L.loss_and_slope(kind, margins0, np.ones(n))[0]
        i = int(np.argmax(gain))
        X1 = X0.copy()
        X1[i] = X1[i] - y0[i] * budget0 * u
        return X1, y0

    best = result(*concentrate(X, y, margins, budget))
    if not math.isinf(spec.kappa):
        m = Z @ theta + b0
        a = L.loss_and_slope(kind, m, y)[0]
        bb = L.loss_and_slope(kind, m, -y)[0]
        lam = _flip_lambda(a, bb, dn, eps, spec.kappa)
        gain = bb - a
        cand = np.flatnonzero(bb - lam * spec.kappa > a)
        cand = cand[np.argsort(-gain[cand], kind="stable")]
        nflip = min(cand.size, int(math.floor(budget / spec.kappa + 1e-12)))
        if nflip > 0:
            yf = y.copy()
            yf[cand[:nflip]] *= -1.0
            other = result(*concentrate(X, yf, -margins * (yf != y) + margins * (yf == y),
                                        budget - nflip * spec.kappa))
            if other.attained_value > best.attained_value:
                best = other
    return best


# --------------------------------------------------- robust satisficing


def _whitened(Z: np.ndarray, norm: NormSpec) -> np.ndarray:
    """Features for phi = Sigma^{-1/2} theta, so that ||theta||_* = ||phi||_q."""
    return Z if norm._sqrt is None else Z @ norm._sqrt


def _penalized_parts(kind, Zw, y, k, kappa):
    """Objective of sup_P E_P loss - k W(P, P_n) on {||phi||_q <= k}, for lad/svm/logistic."""
    d = Zw.shape[1]
    n = y.size

    def oracle(w):
        m = Zw @ w[:d] + w[d]
        if kind == "lad":
            vals, slope = L.loss_and_slope(kind, m, y)
        else:
            a, sa = L.loss_and_slope(kind, m, y)
            if math.isinf(kappa):
                vals, slope = a, sa
            else:
                bb, sb = L.loss_and_slope(kind, m, -y)
                flip = bb - k * kappa > a
                vals = np.where(flip, bb - k * kappa, a)
                slope = np.where(flip, sb, sa)
        return float(vals.mean()), np.append(Zw.T @ slope / n, slope.mean())

    return oracle


def _ball_projection(radius: float, q: float, d: int):
    def project(w):
        out = w.copy()
        out[:d] = project_lq_ball(w[:d], radius, q)
        return out
    return project


def _erm(data: Dataset, kind: str, cfg: SolverConfig):
    """ERM model and its exact empirical risk (least squares, LP, or L-BFGS for logistic)."""
    from . import fdiv

    model, _ = fdiv.fit(data, kind, fdiv.FDivSpec("cvar", alpha=1.0), cfg)
    X, y, n, d = data.X, data.y, data.n, data.d
    A = np.hstack([X, np.ones((n, 1))])
    if kind == "ols":
        w = np.linalg.lstsq(A, y, rcond=None)[0]
    elif kind == "logistic":
        def f(w):
            m = y * (A @ w)
            return float(np.mean(np.logaddexp(0.0, -m))), -(A.T @ (y * special.expit(-m))) / n
        w0 = np.append(model.theta, model.intercept)
        w = optimize.minimize(f, w0, jac=True, method="L-BFGS-B", options={"ftol": 1e-15, "gtol": 1e-12}).x
    else:
        # hinge / absolute residual as an LP over (w, slack)
        Z = y[:, None] * A if kind == "svm" else A
        c = np.concatenate([np.zeros(d + 1), np.full(n, 1.0 / n)])
        if kind == "svm":
            A_ub, b_ub = np.hstack([-Z, -np.eye(n)]), -np.ones(n)
        else:
            A_ub = np.vstack([np.hstack([Z, -np.eye(n)]), np.hstack([-Z, -np.eye(n)])])
            b_ub = np.concatenate([y, -y])
        res = optimize.linprog(c, A_ub=A_ub, b_ub=b_ub, bounds=[(None, None)] * (d + 1) + [(0, None)] * n,
                               method="highs")
        w = res.x[:d + 1] if res.status == 0 else np.append(model.theta, model.intercept)
    value = float(np.mean(L.loss_values(kind, w[:d], w[d], X, y)))
    return LinearModel(kind, w[:d], float(w[d])), value


def penalized_min(data: Dataset, kind: str, rs: RSSpec, k: float, cfg: SolverConfig = SolverConfig(),
                  tau: float | None = None):
    """min over theta of sup_P {E_P loss - k W(P, P_n)}; returns (value, w) with w = (theta, b).

    For ols, when ``tau`` is given only the sign of (min - tau) is reliable:
    the returned value is the penalized objective at the minimiser of
    ``k*MSE + tau*s^2``, which is <= tau exactly when the true minimum is.
    """
    Z, y = data.X, data.y
    d = data.d
    if kind in ("lad", "svm", "logistic"):
        radius = k
        if kind == "lad":
            if k < 1.0 / rs.kappa:
                return math.inf, np.zeros(d + 1)
        Zw = _whitened(Z, rs.norm)
        oracle = _penalized_parts(kind, Zw, y, k, rs.kappa)
        w, rep = projected_subgradient(oracle, _ball_projection(radius, rs.norm.q, d),
                                       np.zeros(d + 1), cfg, lower_bound=0.0)
        theta = w[:d] if rs.norm._sqrt is None else rs.norm._sqrt @ w[:d]
        return rep.objective, np.append(theta, w[d])
    # ols: sup_t (r + s t)^2 - k t^2 = r^2 k / (k - s^2) for k > s^2
    if k <= 1.0 / rs.kappa ** 2:
        return math.inf, np.zeros(d + 1)

    def value_at(w):
        theta = w[:d]
        s = _slope(theta, rs)
        if k <= s * s:
            return math.inf
        mse = float(np.mean((y - Z @ theta - w[d]) ** 2))
        return mse * k / (k - s * s)

    def surrogate(t):
        # min over theta of k*MSE + t*s^2 (convex)
        def oracle(w):
            theta = w[:d]
            r = y - Z @ theta - w[d]
            dn = dual_norm(theta, rs.norm)
            s = max(dn, 1.0 / rs.kappa)
            ds = _dual_subgrad(theta, rs.norm) if dn >= 1.0 / rs.kappa else np.zeros(d)
            g = np.append(-2.0 * k * Z.T @ r / len(y) + 2.0 * t * s * ds, -2.0 * k * r.mean())
            return k * float(np.mean(r * r)) + t * s * s, g
        w, _ = projected_subgradient(oracle, None, np.zeros(d + 1), cfg, lower_bound=0.0)
        return w

    if tau is not None:
        w = surrogate(tau)
        return value_at(w), w
    # Dinkelbach iterations on the ratio MSE*k / (k - s^2)
    w = np.zeros(d + 1)
    t = value_at(w)
    for _ in range(50):
        w_new = surrogate(t)
        t_new = value_at(w_new)
        if not t_new < t * (1.0 - 1e-10):
            break
        w, t = w_new, t_new
    return t, w


def fit_robust_satisficing(data: Dataset, kind: str, rs: RSSpec, cfg: SolverConfig = SolverConfig()):
    """Smallest fragility slope k whose penalised worst case meets tau.

    tau = target_ratio * (ERM minimum). Returns the model minimising the
    penalised objective at the returned k; ``report.fragility`` holds k.
    """
    _check_kind(data, kind)
    erm_model, erm_value = _erm(data, kind, cfg)
    tau = rs.target_ratio * erm_value
    iters = 0

    def feasible(k):
        nonlocal iters
        val, w = penalized_min(data, kind, rs, k, cfg, tau=tau)
        iters += 1
        return val <= tau, val, w

    lo = 0.0
    if kind == "lad":
        lo = 1.0 / rs.kappa
    elif kind == "ols":
        lo = 1.0 / rs.kappa ** 2
    unreachable = TargetUnreachable(f"target {tau:.6g} not reachable with slope <= {SLOPE_CAP:g}")
    if lo >= SLOPE_CAP:
        raise unreachable
    # the smallest admissible slope may already meet the target (at k -> 0 only the
    # constant model theta = 0 is left; for ols its value is the variance of y)
    if lo == 0.0 and kind == "ols":
        floor_val, floor_w = float(np.mean((data.y - data.y.mean()) ** 2)), np.append(np.zeros(data.d), data.y.mean())
    elif kind != "ols":
        floor_val, floor_w = penalized_min(data, kind, rs, lo, cfg)
        iters += 1
    else:
        floor_val = math.inf
    if floor_val <= tau:
        model = LinearModel(kind, floor_w[:-1], floor_w[-1])
        report = FitReport(objective=float(floor_val), iterations=iters, converged=True,
                           fragility=float(lo), dual_lambda=float(lo))
        return model, report
    hi = min(max(2.0 * lo, dual_norm(erm_model.theta, rs.norm), 1e-3), SLOPE_CAP)
    ok, val, w = feasible(hi)
    while not ok:
        if hi >= SLOPE_CAP:
            raise unreachable
        lo = hi
        hi = min(2.0 * hi, SLOPE_CAP)
        ok, val, w = feasible(hi)
    best = (hi, val, w)
    for _ in range(MAX_BISECT):
        if hi - lo <= rs.bisect_tol * hi:
            break
        mid = 0.5 * (lo + hi)
        ok, val, w = feasible(mid)
        if ok:
            hi = mid
            best = (hi, val, w)
        else:
            lo = mid
    k, val, w = best
    model = LinearModel(kind, w[:-1], w[-1])
    report = FitReport(objective=float(val), iterations=iters, converged=True,
                       fragility=float(k), dual_lambda=float(k))
    return model, report


# ------------------------------------------------------------- estimators


def _norm_from(p: dict) -> NormSpec:
    return NormSpec(p=p["p"], sigma=p["sigma"])


class WassersteinDRO(DROEstimator):
    method = "wdro"
    params = {"eps": 0.0, "kappa": math.inf, "p": 2.0, "sigma": None}

    def _validate(self, p):
        require_range("eps", p["eps"], 0.0, math.inf)
        require_range("kappa", p["kappa"], 0.0, math.inf, lo_open=True)
        _norm_from(p)

    def _spec(self):
        return WassersteinSpec(self.hyper["eps"], self.hyper["kappa"], _norm_from(self.hyper))

    def _fit(self, data, cfg):
        return fit(data, self.kind, self._spec(), cfg)

    def _worst_distribution(self, model, data):
        return worst_distribution(model, data, self._spec())


class RSWassersteinDRO(DROEstimator):
    method = "rswdro"
    params = {"target_ratio": 1.1, "kappa": math.inf, "p": 2.0, "sigma": None, "bisect_tol": 1e-3}

    def _validate(self, p):
        RSSpec(p["target_ratio"], p["kappa"], _norm_from(p), p["bisect_tol"])

    def _fit(self, data, cfg):
        p = self.hyper
        return fit_robust_satisficing(data, self.kind,
                                      RSSpec(p["target_ratio"], p["kappa"], _norm_from(p), p["bisect_tol"]), cfg)
