"""Shared domain types, the estimator contract, and plain evaluation."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional

import numpy as np

from . import losses

CLASSIFICATION = "classification"
REGRESSION = "regression"
TASKS = (CLASSIFICATION, REGRESSION)


class RobustaError(Exception):
    """Base class for package errors."""


class DataError(RobustaError, ValueError):
    """Malformed or incompatible data."""


class CapabilityError(RobustaError):
    """Requested (formulation, backbone) combination or operation is unsupported."""


class ParameterError(RobustaError, ValueError):
    """Unknown hyperparameter or value out of range."""


class NotFittedError(RobustaError):
    """Operation requires a fitted model."""


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray
    task: str

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        y = np.array(self.y, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        if X.ndim != 2:
            raise DataError(f"X must be 2-D, got shape {X.shape}")
        y = y.ravel()
        n, d = X.shape
        if n < 1 or d < 1:
            raise DataError(f"need n >= 1 and d >= 1, got {X.shape}")
        if y.shape[0] != n:
            raise DataError(f"X has {n} rows but y has {y.shape[0]} entries")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("data contains NaN or Inf")
        if self.task not in TASKS:
            raise DataError(f"unknown task {self.task!r}")
        if self.task == CLASSIFICATION and not np.all(np.abs(y) == 1.0):
            raise DataError("classification labels must be in {-1, +1}")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass(frozen=True)
class LinearModel:
    kind: str
    theta: np.ndarray
    intercept: float = 0.0
    feature_map: Any = None

    def __post_init__(self):
        if self.kind not in losses.KINDS:
            raise CapabilityError(f"unknown backbone {self.kind!r}; expected one of {losses.KINDS}")
        theta = np.array(self.theta, dtype=float).ravel()
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "intercept", float(self.intercept))
        if self.feature_map is not None and self.feature_map.m != theta.shape[0]:
            raise DataError(
                f"theta has length {theta.shape[0]} but feature map has {self.feature_map.m} components"
            )

    @property
    def task(self) -> str:
        return losses.task_of(self.kind)

    def features(self, X: np.ndarray) -> np.ndarray:
        """Apply the attached feature map (if any) and check the width."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(1, -1)
        if self.feature_map is not None:
            X = self.feature_map.transform(X)
        if X.shape[1] != self.theta.shape[0]:
            raise DataError(f"model expects {self.theta.shape[0]} features, data has {X.shape[1]}")
        return X

    def decision_function(self, X: np.ndarray) -> np.ndarray:
        return self.features(X) @ self.theta + self.intercept

    def predict(self, X: np.ndarray) -> np.ndarray:
        m = self.decision_function(X)
        if self.task == CLASSIFICATION:
            return np.where(m >= 0, 1.0, -1.0)
        return m


@dataclass
class FitReport:
    objective: float
    iterations: int
    converged: bool
    wallclock_seconds: float = 0.0
    dual_lambda: Optional[float] = None
    dual_eta: Optional[float] = None
    fragility: Optional[float] = None
    boundary_hit: bool = False

    def __post_init__(self):
        if self.converged and not np.isfinite(self.objective):
            raise ValueError("converged report must carry a finite objective")
        if self.dual_lambda is not None and self.dual_lambda < 0:
            raise ValueError("dual_lambda must be nonnegative")

    def to_dict(self, timing: bool = True) -> dict:
        out = {
            "objective": float(self.objective),
            "dual_lambda": None if self.dual_lambda is None else float(self.dual_lambda),
            "dual_eta": None if self.dual_eta is None else float(self.dual_eta),
            "fragility": None if self.fragility is None else float(self.fragility),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "boundary_hit": bool(self.boundary_hit),
        }
        if timing:
            out["wallclock_seconds"] = float(self.wallclock_seconds)
        return out

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FitReport":
        return cls(
            objective=d["objective"],
            iterations=d["iterations"],
            converged=d["converged"],
            wallclock_seconds=d.get("wallclock_seconds", 0.0),
            dual_lambda=d.get("dual_lambda"),
            dual_eta=d.get("dual_eta"),
            fragility=d.get("fragility"),
            boundary_hit=d.get("boundary_hit", False),
        )


@dataclass
class WorstCase:
    """Distribution attaining (or approaching) the inner supremum.

    ``variant == "reweight"`` carries ``weights`` over the n empirical atoms;
    ``variant == "perturb"`` carries moved atoms ``X``/``y``, each with mass 1/n.
    """

    variant: str
    attained_value: float
    weights: Optional[np.ndarray] = None
    X: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.variant == "reweight":
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise ValueError("reweight weights must be a probability vector")
            self.weights = w
        elif self.variant == "perturb":
            if self.X is None or self.y is None or len(self.X) != len(self.y):
                raise ValueError("perturb variant needs X and y with matching length")
        else:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def atoms(self):
        if self.variant != "perturb":
            return None
        return list(zip(self.X, self.y))


def as_dataset(X, y=None, task: Optional[str] = None) -> Dataset:
    if isinstance(X, Dataset):
        return X
    if task is None:
        raise DataError("task required when building a dataset from arrays")
    return Dataset(X, y, task)


def check_compatible(model: LinearModel, data: Dataset) -> np.ndarray:
    """Return the (mapped) feature matrix after validating model/data agreement."""
    if model.task != data.task:
        raise DataError(f"backbone {model.kind!r} needs {model.task} data, got {data.task}")
    return model.features(data.X)


def evaluate(model: LinearModel, data: Dataset) -> float:
    """Plain empirical mean loss of ``model`` on ``data``."""
    Z = check_compatible(model, data)
    vals = losses.loss_values(model.kind, model.theta, model.intercept, Z, data.y)
    return float(np.mean(vals))


def score(model: LinearModel, data: Dataset) -> float:
    """Accuracy for classification, negative MSE for regression."""
    check_compatible(model, data)
    pred = model.predict(data.X)
    if data.task == CLASSIFICATION:
        return float(np.mean(pred == data.y))
    return float(-np.mean((data.y - pred) ** 2))


class Timer:
    def __enter__(self):
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self._t0
        return False


class DROEstimator:
    """Estimator contract shared by every trainer.

    Subclasses declare ``params`` (name -> default), implement ``_validate``
    and ``_fit`` and optionally ``_worst_distribution``. Features may be
    routed through a Gaussian-kernel Nyström map by setting
    ``kernel="rbf"``.
    """

    method: str = ""
    supported_kinds: tuple = losses.KINDS
    params: dict = {}
    common = {"kernel": "linear", "n_components": None, "gamma": None,
              "max_iter": 5000, "tol": 1e-8, "seed": 0}

    def __init__(self, kind: str = "svm", **kwargs):
        if kind not in self.supported_kinds:
            raise CapabilityError(
                f"{self.method} does not support backbone {kind!r}; valid: {self.supported_kinds}"
            )
        self.kind = kind
        self.hyper = {**self.common, **self.params}
        self.model_: Optional[LinearModel] = None
        self.report_: Optional[FitReport] = None
        self.update(kwargs)

    # ---------------------------------------------------------------- API
    def get_params(self) -> dict:
        return {"kind": self.kind, **self.hyper}

    def update(self, params: Mapping[str, Any]) -> dict:
        unknown = set(params) - set(self.hyper)
        if unknown:
            raise ParameterError(f"unknown hyperparameter(s) {sorted(unknown)} for {self.method}")
        merged = {**self.hyper, **params}
        self._validate_common(merged)
        self._validate(merged)
        self.hyper = merged
        return dict(self.hyper)

    def fit(self, X, y=None):
        from .kernel import fit_map
        from .optim import SolverConfig

        data = as_dataset(X, y, losses.task_of(self.kind))
        fmap = None
        if self.hyper["kernel"] == "rbf":
            m = self.hyper["n_components"] or data.n
            fmap = fit_map(data.X, min(m, data.n), self.hyper["gamma"], self.hyper["seed"])
            data = Dataset(fmap.transform(data.X), data.y, data.task)
        cfg = SolverConfig(max_iter=self.hyper["max_iter"], tol=self.hyper["tol"], seed=self.hyper["seed"])
        with Timer() as t:
            model, report = self._fit(data, cfg)
        report.wallclock_seconds = t.elapsed
        if fmap is not None:
            model = LinearModel(model.kind, model.theta, model.intercept, fmap)
        self.model_, self.report_ = model, report
        return self

    def predict(self, X) -> np.ndarray:
        return self._fitted().predict(X)

    def score(self, X, y=None) -> float:
        return score(self._fitted(), as_dataset(X, y, losses.task_of(self.kind)))

    def evaluate(self, X, y=None) -> float:
        return evaluate(self._fitted(), as_dataset(X, y, losses.task_of(self.kind)))

    def worst_distribution(self, X, y=None) -> WorstCase:
        model = self._fitted()
        data = as_dataset(X, y, losses.task_of(self.kind))
        if model.feature_map is not None:
            data = Dataset(model.feature_map.transform(data.X), data.y, data.task)
            model = LinearModel(model.kind, model.theta, model.intercept)
        return self._worst_distribution(model, data)

    # ------------------------------------------------------------ hooks
    def _validate(self, p: dict) -> None:
        pass

    def _fit(self, data: Dataset, cfg) -> tuple:
        raise NotImplementedError

    def _worst_distribution(self, model: LinearModel, data: Dataset) -> WorstCase:
        raise CapabilityError(f"{self.method} does not provide a worst-case distribution")

    def _fitted(self) -> LinearModel:
        if self.model_ is None:
            raise NotFittedError(f"{type(self).__name__} is not fitted")
        return self.model_

    @staticmethod
    def _validate_common(p: dict) -> None:
        if p["kernel"] not in ("linear", "rbf"):
            raise ParameterError(f"kernel must be 'linear' or 'rbf', got {p['kernel']!r}")
        if p["n_components"] is not None and int(p["n_components"]) < 1:
            raise ParameterError("n_components must be >= 1")
        if p["gamma"] is not None and not p["gamma"] > 0:
            raise ParameterError("gamma must be > 0")
        if int(p["max_iter"]) < 1:
            raise ParameterError("max_iter must be >= 1")
        if not p["tol"] > 0:
            raise ParameterError("tol must be > 0")


def require_range(name: str, value, lo=None, hi=None, lo_open=False, hi_open=False) -> None:
    """Raise ParameterError unless lo (<|<=) value (<|<=) hi."""
    try:
        v = float(value)
    except (TypeError, ValueError):
        raise ParameterError(f"{name} must be a number, got {value!r}") from None
    if np.isnan(v):
        raise ParameterError(f"{name} is NaN")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ParameterError(f"{name}={v} out of range")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ParameterError(f"{name}={v} out of range")
