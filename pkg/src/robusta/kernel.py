"""Gaussian-kernel feature maps via the Nyström method.

``k(x, z) = exp(-gamma * ||x - z||^2)``; with a width sigma this is
``gamma = 1 / (2 sigma^2)``. Features are ``Phi = K(X, landmarks) @ W`` where
``W`` is the pseudo-inverse square root of the landmark Gram, so that
``Phi @ Phi.T`` approximates the full Gram matrix.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import pdist

from .core import DataError, ParameterError

EIG_FLOOR = 1e-12
MEDIAN_SUBSAMPLE = 1000
# every matmul runs on blocks of exactly this many rows (zero padded), so a
# row's features do not depend on how the caller batches the input
BLOCK = 64


@dataclass(frozen=True)
class NystroemMap:
    landmarks: np.ndarray
    gamma: float
    whitener: np.ndarray

    @property
    def m(self) -> int:
        return self.landmarks.shape[0]

    @property
    def d(self) -> int:
        return self.landmarks.shape[1]

    def transform(self, X) -> np.ndarray:
        return transform(self, X)

    def to_dict(self) -> dict:
        return {"landmarks": self.landmarks.tolist(), "gamma": float(self.gamma),
                "whitener": self.whitener.tolist()}

    @classmethod
    def from_dict(cls, d) -> "NystroemMap":
        return cls(np.asarray(d["landmarks"], dtype=float), float(d["gamma"]),
                   np.asarray(d["whitener"], dtype=float))


def median_gamma(X, seed: int = 0) -> float:
    """1 / (2 * median^2) of pairwise distances on a row subsample."""
    X = np.asarray(X, dtype=float)
    rng = np.random.default_rng(seed)
    if X.shape[0] > MEDIAN_SUBSAMPLE:
        X = X[np.sort(rng.choice(X.shape[0], MEDIAN_SUBSAMPLE, replace=False))]
    if X.shape[0] < 2:
        return 1.0
    med = float(np.median(pdist(X)))
    if med <= 0:
        return 1.0
    return 1.0 / (2.0 * med * med)


def gram(A, B, gamma: float) -> np.ndarray:
    """Exact Gaussian kernel matrix between the rows of A and B."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    sq = np.einsum("ij,ij->i", A, A)[:, None] + np.einsum("ij,ij->i", B, B)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def inv_sqrt_psd(K: np.ndarray, floor: float = EIG_FLOOR) -> np.ndarray:
    """Pseudo-inverse square root; eigenvalues below ``floor * max(1, top)`` are dropped."""
    K = 0.5 * (K + K.T)
    w, V = np.linalg.eigh(K)
    keep = w > floor * max(1.0, float(w.max()))
    Vk = V[:, keep]
    return (Vk / np.sqrt(w[keep])) @ Vk.T


def fit_map(X, m: int, gamma=None, seed: int = 0) -> NystroemMap:
    """Sample ``m`` landmarks uniformly without replacement and whiten their Gram.

    Landmarks are a prefix of one seeded permutation, so maps with the same
    seed and growing ``m`` use nested landmark sets.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise DataError("X must be 2-D")
    n = X.shape[0]
    m = int(m)
    if not 1 <= m <= n:
        raise ParameterError(f"need 1 <= m <= n, got m={m}, n={n}")
    if gamma is None:
        gamma = median_gamma(X, seed)
    if not gamma > 0:
        raise ParameterError("gamma must be > 0")
    rng = np.random.default_rng(seed)
    idx = rng.permutation(n)[:m]
    L = X[idx].copy()
    W = inv_sqrt_psd(gram(L, L, gamma))
    L.setflags(write=False)
    W.setflags(write=False)
    return NystroemMap(L, float(gamma), W)


def _check(fmap: NystroemMap, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X.reshape(1, -1)
    if X.ndim != 2 or X.shape[1] != fmap.d:
        raise DataError(f"feature map expects {fmap.d} columns, got shape {X.shape}")
    return X


def transform(fmap: NystroemMap, X) -> np.ndarray:
    """Phi = K(X, landmarks) @ whitener."""
    X = _check(fmap, X)
    n = X.shape[0]
    out = np.empty((n, fmap.m))
    buf = np.zeros((BLOCK, fmap.d))
    Lsq = np.einsum("ij,ij->i", fmap.landmarks, fmap.landmarks)
    for start in range(0, n, BLOCK):
        stop = min(start + BLOCK, n)
        buf[:] = 0.0
        buf[: stop - start] = X[start:stop]
        sq = np.einsum("ij,ij->i", buf, buf)[:, None] + Lsq[None, :] - 2.0 * (buf @ fmap.landmarks.T)
        K = np.exp(-fmap.gamma * np.maximum(sq, 0.0))
        out[start:stop] = (K @ fmap.whitener)[: stop - start]
    return out


def worker_cap() -> int:
    """Worker limit from ROBUSTA_THREADS (unset or invalid means no cap)."""
    raw = os.environ.get("ROBUSTA_THREADS", "")
    try:
        v = int(raw)
    except ValueError:
        return 1 << 30
    return max(1, v)


def batched_transform(fmap: NystroemMap, X, batch_size: int = 5000, workers: int = 1) -> np.ndarray:
    """Same output as :func:`transform`, computed in row batches on a thread pool."""
    X = _check(fmap, X)
    if int(batch_size) < 1 or int(workers) < 1:
        raise ParameterError("batch_size and workers must be >= 1")
    starts = range(0, X.shape[0], int(batch_size))
    parts = [X[s:s + int(batch_size)] for s in starts]
    n_workers = min(int(workers), worker_cap(), max(1, len(parts)))
    if n_workers == 1:
        out = [transform(fmap, p) for p in parts]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            out = list(pool.map(lambda p: transform(fmap, p), parts))
    if not out:
        return np.empty((0, fmap.m))
    return np.vstack(out)
