"""Bayesian DRO: KL-DRO averaged over posterior draws of a linear-Gaussian model.

Each draw ``(beta, sigma2)`` from the conjugate normal-inverse-gamma
posterior defines a generative law for ``y | x``; covariates are resampled
from the training rows. The objective is the average of the KL-DRO dual
values on the synthetic sets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import losses as L
from .core import (CapabilityError, DROEstimator, DataError, Dataset, LinearModel, ParameterError,
                   REGRESSION, require_range)
from .fdiv import _kl, _kl_weights, kl_dual_value
from .optim import SolverConfig, projected_subgradient

KINDS = ("lad", "ols")


@dataclass(frozen=True)
class Prior:
    """beta | sigma2 ~ N(mean, sigma2 / precision * I), sigma2 ~ InvGamma(shape, rate).

    ``beta`` stacks the slopes and the intercept (last). ``mean=None`` is zero.
    """

    mean: Optional[tuple] = None
    precision: float = 1e-2
    shape: float = 1.0
    rate: float = 1.0

    def __post_init__(self):
        require_range("precision", self.precision, 0.0, math.inf, lo_open=True, hi_open=True)
        require_range("shape", self.shape, 0.0, math.inf, lo_open=True, hi_open=True)
        require_range("rate", self.rate, 0.0, math.inf, lo_open=True, hi_open=True)
        if self.mean is not None:
            object.__setattr__(self, "mean", tuple(float(v) for v in np.ravel(self.mean)))


@dataclass(frozen=True)
class BayesianSpec:
    inner_eps: float = 0.1
    posterior_draws: int = 10
    synthetic_per_draw: int = 200
    prior: Prior = Prior()
    seed: int = 0

    def __post_init__(self):
        require_range("inner_eps", self.inner_eps, 0.0, math.inf)
        if int(self.posterior_draws) < 1:
            raise ParameterError("posterior_draws must be >= 1")
        if int(self.synthetic_per_draw) < 1:
            raise ParameterError("synthetic_per_draw must be >= 1")


def _design(X: np.ndarray) -> np.ndarray:
    return np.hstack([X, np.ones((X.shape[0], 1))])


def posterior(data: Dataset, prior: Prior):
    """Posterior hyperparameters (mean, precision matrix, shape, rate)."""
    if data.task != REGRESSION:
        raise CapabilityError("posterior sampling needs a regression dataset")
    A = _design(data.X)
    p = A.shape[1]
    mu0 = np.zeros(p) if prior.mean is None else np.asarray(prior.mean, dtype=float)
    if mu0.shape != (p,):
        raise ParameterError(f"prior mean must have length d+1={p}, got {mu0.shape[0]}")
    lam0 = prior.precision * np.eye(p)
    lam_n = A.T @ A + lam0
    mu_n = np.linalg.solve(lam_n, lam0 @ mu0 + A.T @ data.y)
    a_n = prior.shape + 0.5 * data.n
    resid = data.y - A @ mu_n
    b_n = prior.rate + 0.5 * (resid @ resid + (mu_n - mu0) @ lam0 @ (mu_n - mu0))
    return mu_n, lam_n, a_n, b_n


def posterior_sample(data: Dataset, spec: BayesianSpec, count: int, rng=None):
    """``count`` exact draws ``(beta, sigma2)``; beta has the intercept last."""
    if int(count) < 1:
        raise ParameterError("count must be >= 1")
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    mu_n, lam_n, a_n, b_n = posterior(data, spec.prior)
    chol = np.linalg.cholesky(lam_n)
    draws = []
    for _ in range(int(count)):
        sigma2 = b_n / rng.gamma(a_n)
        z = rng.standard_normal(mu_n.size)
        # cov = sigma2 * lam_n^{-1}; with lam_n = C C^T, C^{-T} z has cov lam_n^{-1}
        beta = mu_n + math.sqrt(sigma2) * np.linalg.solve(chol.T, z)
        draws.append((beta, float(sigma2)))
    return draws


def synthetic_sets(data: Dataset, spec: BayesianSpec):
    """Posterior draws and one synthetic (X, y) set per draw, all from ``spec.seed``."""
    rng = np.random.default_rng(spec.seed)
    draws = posterior_sample(data, spec, spec.posterior_draws, rng)
    sets = []
    for beta, sigma2 in draws:
        idx = rng.integers(0, data.n, size=spec.synthetic_per_draw)
        Xs = data.X[idx]
        ys = Xs @ beta[:-1] + beta[-1] + math.sqrt(sigma2) * rng.standard_normal(idx.size)
        sets.append((Xs, ys))
    return draws, sets


def _check_kind(kind: str, data: Dataset) -> None:
    if kind not in KINDS:
        raise CapabilityError(f"bayesian DRO supports {KINDS}, not {kind!r}")
    if data.task != REGRESSION:
        raise DataError("bayesian DRO needs regression data")


def objective(model: LinearModel, sets, inner_eps: float) -> float:
    """Average KL-DRO value of the model over the synthetic sets (fixed draw order)."""
    total = 0.0
    for Xs, ys in sets:
        vals = L.loss_values(model.kind, model.theta, model.intercept, model.features(Xs), ys)
        total += kl_dual_value(vals, inner_eps)[0]
    return total / len(sets)


def fit(data: Dataset, kind: str, spec: BayesianSpec, cfg: SolverConfig = SolverConfig()):
    _check_kind(kind, data)
    _, sets = synthetic_sets(data, spec)
    d = data.d
    m = len(sets)

    def oracle(w):
        value = 0.0
        g = np.zeros(d + 1)
        for Xs, ys in sets:
            vals, slope = L.loss_and_slope(kind, Xs @ w[:d] + w[d], ys)
            v, lam, _ = _kl(vals, spec.inner_eps)
            q = np.full(vals.size, 1.0 / vals.size) if math.isinf(lam) else _kl_weights(vals, lam)
            qs = q * slope
            value += v
            g += np.append(Xs.T @ qs, qs.sum())
        return value / m, g / m

    w, report = projected_subgradient(oracle, None, np.zeros(d + 1), cfg, lower_bound=0.0)
    model = LinearModel(kind, w[:-1], w[-1])
    report.objective = float(objective(model, sets, spec.inner_eps))
    return model, report


class BayesianDRO(DROEstimator):
    method = "bayesian"
    supported_kinds = KINDS
    params = {"eps": 0.1, "posterior_draws": 10, "synthetic_per_draw": 200,
              "prior_mean": None, "prior_precision": 1e-2, "prior_shape": 1.0, "prior_rate": 1.0}

    def _spec(self, p=None) -> BayesianSpec:
        p = p or self.hyper
        prior = Prior(p["prior_mean"], p["prior_precision"], p["prior_shape"], p["prior_rate"])
        return BayesianSpec(p["eps"], int(p["posterior_draws"]), int(p["synthetic_per_draw"]), prior, p["seed"])

    def _validate(self, p):
        if p["kernel"] != "linear":
            raise CapabilityError("bayesian DRO is defined on raw features only")
        self._spec(p)

    def _fit(self, data, cfg):
        return fit(data, self.kind, self._spec(), cfg)
