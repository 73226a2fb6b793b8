"""Marginal-CVaR DRO over covariate shifts on a sparse kNN transport graph.

For fixed scores the row/column transport variables are eliminated exactly.
With ``a_i = loss_i - eta``, ``u = B_row / n`` and ``v = B_col / n`` the inner
problem is the transportation LP

    H(a) = min_{u, v >= 0, sum u = sum v}
           (1/alpha) sum_i (a_i - u_i + v_i)_+ + (1/L) sum_i c_i (u_i + v_i)

with ``c_i`` half the summed control distance to the kNN neighbours of atom
i. The objective is ``eta + H(a) / n``. Shifting a unit of excess loss from
atom i to atom j saves ``1/alpha - c_i/L`` and costs ``c_j/L``, so a greedy
two-pointer match over sorted costs is optimal.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import losses as L
from .core import (DROEstimator, Dataset, FitReport, LinearModel, ParameterError, WorstCase,
                   check_compatible, require_range)
from .fdiv import weighted_oracle
from .optim import SolverConfig, golden_section, knn_graph, projected_subgradient, scalar_convex_min


@dataclass(frozen=True)
class MarginalSpec:
    alpha: float = 0.5
    cost_scale: float = 1.0
    control_idx: tuple = (0,)
    k: int = 5

    def __post_init__(self):
        require_range("alpha", self.alpha, 0.0, 1.0, lo_open=True)
        require_range("cost_scale", self.cost_scale, 0.0, math.inf, lo_open=True)
        idx = tuple(int(i) for i in np.atleast_1d(self.control_idx))
        if not idx:
            raise ParameterError("control_idx must be nonempty")
        if any(i < 0 for i in idx):
            raise ParameterError("control_idx entries must be >= 0")
        object.__setattr__(self, "control_idx", idx)
        if int(self.k) < 1:
            raise ParameterError("k must be >= 1")


def control_points(X: np.ndarray, control_idx) -> np.ndarray:
    """Standardised control columns; zero-variance columns are dropped."""
    d = X.shape[1]
    bad = [i for i in control_idx if i >= d]
    if bad:
        raise ParameterError(f"control_idx {bad} out of range for d={d}")
    C = X[:, list(control_idx)]
    sd = C.std(axis=0)
    keep = sd > 0
    if not np.all(keep):
        warnings.warn(f"dropping zero-variance control columns {np.asarray(control_idx)[~keep].tolist()}",
                      stacklevel=3)
    C = C[:, keep]
    if C.shape[1] == 0:
        return np.zeros((X.shape[0], 1))
    return (C - C.mean(axis=0)) / sd[keep]


def atom_costs(X: np.ndarray, spec: MarginalSpec) -> np.ndarray:
    """c_i = 1/2 * sum of control distances over the symmetric kNN edges of i."""
    n = X.shape[0]
    if spec.k >= n:
        raise ParameterError(f"k={spec.k} must be < n={n}")
    i, j, dist = knn_graph(control_points(X, spec.control_idx), spec.k)
    return 0.5 * (np.bincount(i, dist, minlength=n) + np.bincount(j, dist, minlength=n))


def _greedy_flow(a: np.ndarray, cost: np.ndarray, alpha: float):
    """Optimal matching of excess loss (suppliers) into slack (sinks).

    Suppliers are ordered by rising cost (falling saving), sinks by rising
    cost, so the per-unit margin along the cumulative flow axis is
    nonincreasing and the optimal flow stops where it first hits zero.
    """
    inv = 1.0 / alpha
    gain = inv - cost
    sup = np.flatnonzero((a > 0) & (gain > 0))
    sup = sup[np.argsort(cost[sup], kind="stable")]
    sink = np.flatnonzero(a < 0)
    sink = sink[np.argsort(cost[sink], kind="stable")]
    s_cum = np.cumsum(a[sup])
    t_cum = np.cumsum(-a[sink])
    flow, saved = 0.0, 0.0
    if sup.size and sink.size:
        total = min(s_cum[-1], t_cum[-1])
        z = np.union1d(s_cum, t_cum)
        z = np.concatenate([[0.0], z[z < total], [total]])
        lo, hi = z[:-1], z[1:]
        mid = 0.5 * (lo + hi)
        si = np.minimum(np.searchsorted(s_cum, mid), sup.size - 1)
        ti = np.minimum(np.searchsorted(t_cum, mid), sink.size - 1)
        margin = gain[sup[si]] - cost[sink[ti]]
        pos = margin > 0
        stop = int(np.argmin(pos)) if not np.all(pos) else pos.size
        seg = hi[:stop] - lo[:stop]
        saved = float(seg @ margin[:stop])
        flow = float(hi[stop - 1]) if stop else 0.0
    return sup, s_cum, sink, t_cum, flow, saved


def transport_value(a: np.ndarray, cost: np.ndarray, alpha: float):
    """Exact H(a) and a subgradient w = dH/da (the LP dual prices).

    ``cost`` is already divided by L.
    """
    inv = 1.0 / alpha
    gain = inv - cost
    base = inv * float(a[a > 0].sum())
    sup, s_cum, sink, t_cum, flow, saved = _greedy_flow(a, cost, alpha)
    value = base - saved

    # price p of absorbed loss: any value consistent with complementary slackness
    slack = 1e-12 * max(1.0, flow)
    lo, hi = -math.inf, math.inf
    if flow > 0:
        used = sink[(t_cum - (-a[sink])) < flow - slack]
        if used.size:
            lo = max(lo, float(cost[used].max()))
    done = sup[s_cum <= flow + slack] if flow > 0 else sup[:0]
    if done.size:
        hi = min(hi, float(gain[done].min()))
    pos = a > 0
    unshipped = pos.copy()
    unshipped[done] = False
    if np.any(unshipped):
        lo = max(lo, float(gain[unshipped].max()))
    free = sink[t_cum > flow + slack]
    if free.size:
        hi = min(hi, float(cost[free].min()))
    p = min(max(0.0, lo), hi) if lo <= hi else lo

    w = np.empty_like(a)
    w[pos] = np.minimum(inv, cost[pos] + p)
    w[~pos] = np.clip(p - cost[~pos], 0.0, inv)
    return value, w


def dual_weights(cost: np.ndarray, alpha: float):
    """Return ``weigh(losses) -> (value, q)``, the inner problem solved through its dual.

    Minimising over eta and the transport plan equals maximising ``q . losses``
    over q in the simplex with ``n q_i`` in [0, 1/alpha] and ``|n q_i - p| <= c_i``
    for a free price p. At fixed p a greedy fill by falling loss is optimal and
    the filled value is concave in p, so p is found by golden section.
    """
    n = cost.size
    inv = 1.0 / alpha

    def first_true(test, a, b):
        for _ in range(200):
            mid = 0.5 * (a + b)
            if test(mid):
                b = mid
            else:
                a = mid
        return b

    # p = 1 (uniform q) is always feasible; bracket the feasible prices around it
    cmin = float(cost.min())
    p_lo = first_true(lambda p: np.minimum(inv, p + cost).sum() >= n, -cmin, 1.0)
    p_hi = -first_true(lambda p: np.maximum(0.0, -p - cost).sum() <= n, -(inv + cmin), -1.0)
    p_lo, p_hi = min(p_lo, 1.0), max(p_hi, 1.0)
    tol = 1e-12 * max(1.0, p_hi - p_lo)

    def weigh(vals):
        order = np.argsort(-vals, kind="stable")
        v, c = vals[order], cost[order]

        def fill(p):
            low = np.maximum(0.0, p - c)
            room = np.minimum(inv, p + c) - low
            before = np.cumsum(room) - room
            return low + np.clip(n - low.sum() - before, 0.0, room)

        if p_hi - p_lo > tol:
            p, _, _ = golden_section(lambda p: -float(fill(p) @ v), p_lo, p_hi, tol, expand=False)
        else:
            p = 0.5 * (p_lo + p_hi)
        w = fill(p)
        q = np.empty(n)
        q[order] = w / n
        return float(w @ v) / n, q

    return weigh


def _eta_polish(kind, Z, y, theta, b0, cost, alpha):
    vals = L.loss_values(kind, theta, b0, Z, y)
    lo, hi = float(vals.min()), float(vals.max())
    if hi - lo <= 0:
        return lo
    f = lambda e: e + transport_value(vals - e, cost, alpha)[0] / y.size
    x, _ = scalar_convex_min(f, lo, hi, tol=1e-12 * max(1.0, hi - lo))
    return x


def profile_objective(model: LinearModel, data: Dataset, spec: MarginalSpec):
    """min over eta and transport of the objective at fixed (theta, b); returns (value, eta)."""
    Z = check_compatible(model, data)
    cost = atom_costs(data.X, spec) / spec.cost_scale
    eta = _eta_polish(model.kind, Z, data.y, model.theta, model.intercept, cost, spec.alpha)
    vals = L.loss_values(model.kind, model.theta, model.intercept, Z, data.y)
    h, _ = transport_value(vals - eta, cost, spec.alpha)
    return eta + h / data.n, eta


def fit(data: Dataset, kind: str, spec: MarginalSpec, cfg: SolverConfig = SolverConfig()):
    if L.task_of(kind) != data.task:
        from .core import DataError

        raise DataError(f"backbone {kind!r} does not match {data.task} data")
    Z, y = data.X, data.y
    d = data.d
    cost = atom_costs(data.X, spec) / spec.cost_scale
    w, report = projected_subgradient(weighted_oracle(kind, Z, y, dual_weights(cost, spec.alpha)), None,
                                      np.zeros(d + 1), cfg, lower_bound=0.0)
    theta, b0 = w[:d], w[d]
    eta = _eta_polish(kind, Z, y, theta, b0, cost, spec.alpha)
    vals = L.loss_values(kind, theta, b0, Z, y)
    value = eta + transport_value(vals - eta, cost, spec.alpha)[0] / data.n
    report.objective = float(value)
    report.dual_eta = float(eta)
    return LinearModel(kind, theta, b0), report


def worst_case_profile(model: LinearModel, data: Dataset, spec: MarginalSpec) -> WorstCase:
    """Uniform weights on atoms whose adjusted excess loss stays positive."""
    Z = check_compatible(model, data)
    cost = atom_costs(data.X, spec) / spec.cost_scale
    value, eta = profile_objective(model, data, spec)
    vals = L.loss_values(model.kind, model.theta, model.intercept, Z, data.y)
    a = vals - eta
    active = _active_after_transport(a, cost, spec.alpha)
    n = data.n
    if not np.any(active):
        q = np.full(n, 1.0 / n)
    else:
        q = active / active.sum()
    return WorstCase("reweight", attained_value=float(value), weights=q)


def _active_after_transport(a, cost, alpha):
    """Indicator of (a_i - u_i + v_i) > 0 under the greedy transport plan."""
    sup, s_cum, _, _, flow, _ = _greedy_flow(a, cost, alpha)
    tol = 1e-12 * max(1.0, float(np.abs(a).max()))
    residual = np.where(a > 0, a, 0.0)
    if sup.size:
        shipped = np.clip(flow - (s_cum - a[sup]), 0.0, a[sup])
        residual[sup] -= shipped
    return (residual > tol).astype(float)


class MarginalCVaRDRO(DROEstimator):
    method = "marginal_cvar"
    params = {"alpha": 0.5, "L": 1.0, "control_idx": (0,), "k": 5}

    def _spec(self, p=None):
        p = p or self.hyper
        return MarginalSpec(p["alpha"], p["L"], tuple(np.atleast_1d(p["control_idx"]).tolist()), p["k"])

    def _validate(self, p):
        self._spec(p)

    def _fit(self, data, cfg):
        return fit(data, self.kind, self._spec(), cfg)

    def _worst_distribution(self, model, data):
        return worst_case_profile(model, data, self._spec())
