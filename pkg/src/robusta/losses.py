"""Per-sample losses and subgradients for the four exact backbones.

Every loss is a convex function of the linear score ``m = theta @ x + b``,
so subgradients factor as ``dloss/dm * (x, 1)``. The fit routines use the
factored form (:func:`loss_and_slope`) to avoid materialising n-by-d
subgradient matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("lad", "ols", "svm", "logistic")
_TASK = {"lad": "regression", "ols": "regression", "svm": "classification", "logistic": "classification"}


def task_of(kind: str) -> str:
    try:
        return _TASK[kind]
    except KeyError:
        from .core import CapabilityError

        raise CapabilityError(f"unknown backbone {kind!r}; expected one of {KINDS}") from None


def softplus(z):
    """log(1 + exp(z)), overflow-safe."""
    z = np.asarray(z, dtype=float)
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid(z):
    z = np.asarray(z, dtype=float)
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def loss_and_slope(kind: str, m: np.ndarray, y: np.ndarray):
    """Loss values and d(loss)/d(score) for scores ``m``.

    Kink conventions: hinge slope is 0 at margin exactly 1, lad slope is 0 at
    residual exactly 0.
    """
    if kind == "lad":
        r = y - m
        return np.abs(r), -np.sign(r)
    if kind == "ols":
        r = y - m
        return r * r, -2.0 * r
    if kind == "svm":
        z = 1.0 - y * m
        return np.maximum(z, 0.0), np.where(z > 0, -y, 0.0)
    if kind == "logistic":
        margin = y * m
        return softplus(-margin), -y * sigmoid(-margin)
    task_of(kind)
    raise AssertionError("unreachable")


def loss_values(kind: str, theta, intercept, X, y) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if X.ndim != 2 or X.shape[1] != theta.shape[0]:
        from .core import DataError

        raise DataError(f"theta has length {theta.shape[0]}, features have shape {X.shape}")
    return loss_and_slope(kind, X @ theta + intercept, np.asarray(y, dtype=float))[0]


def loss(kind: str, theta, intercept: float, x, y: float) -> float:
    """Single-sample loss."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return float(loss_values(kind, theta, intercept, x.reshape(1, -1), np.array([float(y)]))[0])


@dataclass
class LossEval:
    values: np.ndarray
    subgrad_theta: np.ndarray
    subgrad_intercept: np.ndarray


def loss_batch(kind: str, theta, intercept: float, X, y) -> LossEval:
    X = np.asarray(X, dtype=float)
    theta = np.asarray(theta, dtype=float)
    vals = loss_values(kind, theta, intercept, X, y)
    _, slope = loss_and_slope(kind, X @ theta + intercept, np.asarray(y, dtype=float))
    return LossEval(vals, slope[:, None] * X, slope)
