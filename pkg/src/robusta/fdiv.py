"""f-divergence DRO: worst-case reweighting of the empirical atoms.

Ambiguity sets, with q the weights on the n training atoms:

* ``kl``   -- sum_i q_i log(n q_i) <= eps
* ``chi2`` -- (1/n) sum_i (n q_i - 1)^2 <= rho
* ``tv``   -- sum_i |q_i - 1/n| <= eps
* ``cvar`` -- q_i <= 1 / (alpha n)

The robust fit minimises the worst-case weighted loss over (theta, b); the
subgradient at each step is the loss subgradient averaged under the current
worst-case weights.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .core import (DROEstimator, DataError, Dataset, FitReport, LinearModel, ParameterError,
                   WorstCase, check_compatible, require_range)
from .optim import SolverConfig, golden_section, projected_subgradient

FAMILIES = ("kl", "chi2", "tv", "cvar")


@dataclass(frozen=True)
class FDivSpec:
    family: str
    radius: float = 0.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown f-divergence family {self.family!r}")
        if self.family == "cvar":
            require_range("alpha", self.alpha, 0.0, 1.0, lo_open=True)
        else:
            require_range("radius", self.radius, 0.0, math.inf)


def _as_losses(losses) -> np.ndarray:
    v = np.asarray(losses, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("empty loss vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("losses must be finite")
    return v


def _uniform(n: int) -> np.ndarray:
    return np.full(n, 1.0 / n)


def _smallest(v: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k smallest entries ordered by (value, index)."""
    n = v.size
    if k >= n:
        return np.argsort(v, kind="stable")
    kth = np.partition(v, k - 1)[k - 1]
    below = np.flatnonzero(v < kth)
    tied = np.flatnonzero(v == kth)[: k - below.size]
    idx = np.concatenate([below, tied])
    return idx[np.argsort(v[idx], kind="stable")]


# ------------------------------------------------------------------ CVaR


def _cvar(v: np.ndarray, alpha: float):
    n = v.size
    m = alpha * n
    full = min(int(math.floor(m + 1e-9)), n)
    if full >= n or v.max() == v.min():
        return float(v.mean()), float(v.min()), _uniform(n)
    order = _smallest(-v, full + 1)
    q = np.zeros(n)
    q[order[:full]] = 1.0 / m
    rest = m - full
    top = float(np.sum(v[order[:full]]))
    if rest > 1e-12:
        q[order[full]] = rest / m
        eta = float(v[order[full]])
        value = (top + rest * v[order[full]]) / m
    else:
        eta = float(v[order[full - 1]])
        value = top / m
    q /= q.sum()
    return float(value), eta, q


def cvar_value(losses, alpha: float):
    """CVaR of the empirical loss distribution at level ``alpha``.

    Returns ``(value, eta)``: the mean of the top ``alpha`` fraction of
    losses (the boundary atom contributes its fractional mass) and the
    threshold loss, i.e. the ceil(alpha n)-th largest.
    """
    require_range("alpha", alpha, 0.0, 1.0, lo_open=True)
    value, eta, _ = _cvar(_as_losses(losses), float(alpha))
    return value, eta


# -------------------------------------------------------------------- KL


def _kl_objective(v: np.ndarray, eps: float, top: float):
    def g(lam):
        if lam <= 0.0:
            return top
        return lam * eps + top + lam * math.log(np.mean(np.exp((v - top) / lam)))
    return g


def _kl_weights(v: np.ndarray, lam: float) -> np.ndarray:
    if lam <= 0.0:
        w = (v == v.max()).astype(float)
    else:
        w = np.exp((v - v.max()) / lam)
    return w / w.sum()


def _kl_div(q: np.ndarray) -> float:
    n = q.size
    nz = q > 0
    return float(np.sum(q[nz] * np.log(n * q[nz])))


def _kl(v: np.ndarray, eps: float):
    """Returns (dual value, lambda*, boundary_hit) for the KL ball."""
    n = v.size
    top, mean = float(v.max()), float(v.mean())
    if eps == 0.0 or top == v.min():
        return mean, math.inf, False
    k_top = int(np.count_nonzero(v == top))
    if eps >= math.log(n / k_top):
        return top, 0.0, True
    # g(lam) >= lam*eps + mean and g(0+) = max, so lam* <= (max - mean) / eps
    hi = (top - mean) / eps
    lam, val, _ = golden_section(_kl_objective(v, eps, top), 0.0, hi, tol=1e-11 * hi, expand=False)
    return val, lam, lam <= 0.0


def kl_dual_value(losses, eps: float):
    """KL-DRO value via the one-dimensional dual.

    ``inf_{lam > 0} lam*eps + lam*log(mean(exp(loss/lam)))``; returns
    ``(value, lam*)``. ``lam* = inf`` at ``eps = 0`` and ``lam* = 0`` when the
    ball already contains the point mass on the largest loss.
    """
    require_range("eps", eps, 0.0, math.inf)
    value, lam, _ = _kl(_as_losses(losses), float(eps))
    return value, lam


def _kl_feasible_weights(v: np.ndarray, eps: float, lam: float) -> np.ndarray:
    q = _kl_weights(v, lam)
    if _kl_div(q) <= eps + 1e-10:
        return q
    # KL(q_lam) decreases in lam; nudge lam up until the constraint holds
    lo, hi = lam, max(2.0 * lam, 1e-12)
    while _kl_div(_kl_weights(v, hi)) > eps:
        lo, hi = hi, 2.0 * hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _kl_div(_kl_weights(v, mid)) > eps:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return _kl_weights(v, hi)


# ------------------------------------------------------------------ chi2


def _chi2(v: np.ndarray, rho: float):
    """Returns (value, q, water level)."""
    n = v.size
    if rho == 0.0 or v.max() == v.min():
        return float(v.mean()), _uniform(n), None
    target = (1.0 + rho) / n  # bound on sum q^2
    c = v - v.mean()
    sd = math.sqrt(float(np.mean(c * c)))
    q = (1.0 + math.sqrt(rho) * c / sd) / n
    if q.min() >= 0.0:
        # q is proportional to v - eta with eta below every loss
        return float(v.mean() + math.sqrt(rho) * sd), q, float(v.mean() - sd / math.sqrt(rho))
    top = v.max()
    k_top = int(np.count_nonzero(v == top))
    if target >= 1.0 / k_top:
        q = (v == top) / k_top
        return float(top), q.astype(float), float(top)
    # q ∝ (v - eta)_+ with sum q^2 = target; bisection on eta over [min, max)
    lo, hi = float(v.min()), float(top)

    def ratio(eta):
        r = np.maximum(v - eta, 0.0)
        s = r.sum()
        return float(r @ r) / (s * s)

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if ratio(mid) > target:
            hi = mid
        else:
            lo = mid
        if hi - lo <= 1e-15 * max(1.0, abs(hi)):
            break
    r = np.maximum(v - lo, 0.0)
    q = r / r.sum()
    return float(q @ v), q, lo


# -------------------------------------------------------------------- TV


def _tv(v: np.ndarray, eps: float):
    n = v.size
    if eps == 0.0 or v.max() == v.min() or n == 1:
        return float(v.mean()), _uniform(n)
    budget = min(eps / 2.0, 1.0 - 1.0 / n)
    j = int(np.argmax(v))
    k = min(n - 1, int(math.ceil(budget * n)) + 1)
    order = _smallest(v, k + 1)
    order = order[order != j][:k]
    # drain whole 1/n atoms from the smallest losses upward, then a fraction
    drained = np.minimum(np.maximum(budget - np.arange(order.size) / n, 0.0), 1.0 / n)
    q = _uniform(n)
    q[order] -= drained
    q[j] += budget
    q = np.maximum(q, 0.0)
    return float(q @ v), q


# ---------------------------------------------------------- dispatchers


def _solve(v: np.ndarray, spec: FDivSpec):
    """(value, weights, info) with info holding dual quantities."""
    if spec.family == "cvar":
        value, eta, q = _cvar(v, spec.alpha)
        return value, q, {"eta": eta}
    if spec.family == "kl":
        value, lam, hit = _kl(v, spec.radius)
        if math.isinf(lam):
            q = _uniform(v.size)
        else:
            q = _kl_weights(v, lam)
        return value, q, {"lambda": lam, "boundary_hit": hit}
    if spec.family == "chi2":
        value, q, eta = _chi2(v, spec.radius)
        return value, q, {"eta": eta}
    value, q = _tv(v, spec.radius)
    return value, q, {}


def worst_case(losses, spec: FDivSpec) -> WorstCase:
    """Worst-case reweighting of the empirical atoms within the ball."""
    v = _as_losses(losses)
    if spec.family == "kl":
        _, lam, _ = _kl(v, spec.radius)
        q = _uniform(v.size) if math.isinf(lam) else _kl_feasible_weights(v, spec.radius, lam)
    else:
        _, q, _ = _solve(v, spec)
    return WorstCase("reweight", attained_value=float(q @ v), weights=q)


def divergence(q, family: str) -> float:
    """Divergence of weights ``q`` from uniform under the family's convention."""
    q = np.asarray(q, dtype=float)
    n = q.size
    if family == "kl":
        return _kl_div(q)
    if family == "chi2":
        return float(np.mean((n * q - 1.0) ** 2))
    if family == "tv":
        return float(np.sum(np.abs(q - 1.0 / n)))
    if family == "cvar":
        return float(n * q.max())  # likelihood-ratio cap; feasible iff <= 1/alpha
    raise ParameterError(f"unknown family {family!r}")


# -------------------------------------------------------------------- fit


def robust_objective(model: LinearModel, data: Dataset, spec: FDivSpec) -> float:
    Z = check_compatible(model, data)
    v = L.loss_values(model.kind, model.theta, model.intercept, Z, data.y)
    return _solve(v, spec)[0]


def weighted_oracle(kind: str, Z: np.ndarray, y: np.ndarray, weigh):
    """Danskin oracle over w = (theta, b) given ``weigh(losses) -> (value, q)``."""
    d = Z.shape[1]

    def oracle(w):
        m = Z @ w[:d] + w[d]
        vals, slope = L.loss_and_slope(kind, m, y)
        value, q = weigh(vals)
        qs = q * slope
        return value, np.append(Z.T @ qs, qs.sum())

    return oracle


def fit(data: Dataset, kind: str, spec: FDivSpec, cfg: SolverConfig = SolverConfig()):
    """Minimise the worst-case expected loss over (theta, b)."""
    if L.task_of(kind) != data.task:
        raise DataError(f"backbone {kind!r} does not match {data.task} data")
    Z, y = data.X, data.y

    def weigh(vals):
        value, q, _ = _solve(vals, spec)
        return value, q

    w, report = projected_subgradient(weighted_oracle(kind, Z, y, weigh), None,
                                      np.zeros(data.d + 1), cfg, lower_bound=0.0)
    model = LinearModel(kind, w[:-1], w[-1])
    vals = L.loss_values(kind, model.theta, model.intercept, Z, y)
    value, _, info = _solve(vals, spec)
    report.objective = value
    lam = info.get("lambda")
    if lam is not None and math.isfinite(lam):
        report.dual_lambda = lam
    report.dual_eta = info.get("eta")
    report.boundary_hit = bool(info.get("boundary_hit", False))
    return model, report


# ------------------------------------------------------------- estimators


class _FDivDRO(DROEstimator):
    family = ""

    def _spec(self) -> FDivSpec:
        if self.family == "cvar":
            return FDivSpec("cvar", alpha=self.hyper["alpha"])
        return FDivSpec(self.family, radius=self.hyper["eps"])

    def _validate(self, p):
        if self.family == "cvar":
            require_range("alpha", p["alpha"], 0.0, 1.0, lo_open=True)
        else:
            require_range("eps", p["eps"], 0.0, math.inf)

    def _fit(self, data, cfg):
        return fit(data, self.kind, self._spec(), cfg)

    def _worst_distribution(self, model, data):
        Z = check_compatible(model, data)
        v = L.loss_values(model.kind, model.theta, model.intercept, Z, data.y)
        return worst_case(v, self._spec())


class KLDRO(_FDivDRO):
    method = "kl"
    family = "kl"
    params = {"eps": 0.0}


class Chi2DRO(_FDivDRO):
    method = "chi2"
    family = "chi2"
    params = {"eps": 0.0}


class TVDRO(_FDivDRO):
    method = "tv"
    family = "tv"
    params = {"eps": 0.0}


class CVaRDRO(_FDivDRO):
    method = "cvar"
    family = "cvar"
    params = {"alpha": 1.0}
