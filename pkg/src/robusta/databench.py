"""Synthetic classification and regression benches plus CSV round-tripping.

Generator equations (all draws from ``numpy.random.default_rng(seed)``):

cls_basic
    Two unit-variance Gaussian blobs centred at ``+-radius * u`` with ``u`` a
    random unit vector; labels balanced (+1 gets the extra point when n is odd).
cls_dn21
    ``x ~ N(0, I)``, ``y = sign(w . x)`` for a random unit ``w``, each label
    flipped independently with probability ``noise``.
cls_snvd20
    ``x ~ N(0, I)``, ``y = +1`` iff ``||x|| + margin * e > radius`` with
    ``e ~ N(0, 1)``; ``radius`` defaults to the median norm so classes balance.
cls_lwlc
    Half the latent coordinates Gaussian, half binary in {-1, +1}; a minority
    group (fraction ``group_frac``) is shifted by +2 on coordinate 0 and
    labelled by its own direction; ``y = sign(w_g . z + 0.5 sin(3 z_0))``,
    flipped with probability ``noise``; features ``X = z Q`` for a random
    rotation ``Q``.
reg_basic
    ``y = x . beta + noise * e`` with ``beta ~ N(0, I)``.
reg_dn20_1
    As reg_basic but the noise sd is multiplied by ``sqrt(factor)`` where
    ``x_0 > threshold``, so the residual variance ratio is ``factor``.
reg_dn20_2
    Minority group (fraction ``group_frac``) has ``x_0`` shifted by +2 and
    slopes ``beta + shift * 1``.
reg_lwlc
    Sparse ``beta`` (first min(5, d) coordinates), minority group with doubled
    feature scale and an extra ``x_0 * x_1`` interaction (needs d >= 2).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .core import CLASSIFICATION, REGRESSION, DataError, Dataset, ParameterError

# name -> (default, lo, hi); None default means "derived from the data"
KNOBS = {
    "cls_basic": {"radius": (2.0, 0.0, math.inf)},
    "cls_dn21": {"noise": (0.1, 0.0, 0.5)},
    "cls_snvd20": {"radius": (None, 0.0, math.inf), "margin": (0.2, 0.0, math.inf)},
    "cls_lwlc": {"group_frac": (0.2, 0.0, 1.0), "noise": (0.05, 0.0, 0.5)},
    "reg_basic": {"noise": (1.0, 0.0, math.inf)},
    "reg_dn20_1": {"noise": (0.5, 0.0, math.inf), "factor": (4.0, 1.0, math.inf),
                   "threshold": (0.0, -math.inf, math.inf)},
    "reg_dn20_2": {"noise": (0.5, 0.0, math.inf), "group_frac": (0.3, 0.0, 1.0),
                   "shift": (2.0, -math.inf, math.inf)},
    "reg_lwlc": {"noise": (0.5, 0.0, math.inf), "group_frac": (0.1, 0.0, 1.0)},
}
KINDS = tuple(KNOBS)
MIN_D = {"cls_lwlc": 2, "reg_lwlc": 2}


@dataclass(frozen=True)
class GenSpec:
    kind: str
    n: int = 100
    d: int = 2
    seed: int = 0
    knobs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KNOBS:
            raise ParameterError(f"unknown generator {self.kind!r}; expected one of {KINDS}")
        if int(self.n) < 1:
            raise ParameterError("n must be >= 1")
        if int(self.d) < MIN_D.get(self.kind, 1):
            raise ParameterError(f"{self.kind} needs d >= {MIN_D.get(self.kind, 1)}")
        table = KNOBS[self.kind]
        unknown = set(self.knobs) - set(table)
        if unknown:
            raise ParameterError(f"unknown knob(s) {sorted(unknown)} for {self.kind}; valid: {sorted(table)}")
        full = {}
        for name, (default, lo, hi) in table.items():
            v = self.knobs.get(name, default)
            if v is not None:
                v = float(v)
                if not lo <= v <= hi:
                    raise ParameterError(f"{name}={v} outside [{lo}, {hi}]")
            full[name] = v
        object.__setattr__(self, "knobs", full)

    @property
    def task(self) -> str:
        return CLASSIFICATION if self.kind.startswith("cls") else REGRESSION


def _unit(rng, d):
    u = rng.standard_normal(d)
    return u / np.linalg.norm(u)


def _sign(z):
    return np.where(z >= 0, 1.0, -1.0)


def _flip(rng, y, rate):
    mask = rng.random(y.size) < rate
    return np.where(mask, -y, y)


def _groups(rng, n, frac):
    return rng.random(n) < frac


def _cls_basic(rng, n, d, k):
    c = k["radius"] * _unit(rng, d)
    y = np.where(np.arange(n) < (n + 1) // 2, 1.0, -1.0)
    y = y[rng.permutation(n)]
    X = y[:, None] * c[None, :] + rng.standard_normal((n, d))
    return X, y


def _cls_dn21(rng, n, d, k):
    w = _unit(rng, d)
    X = rng.standard_normal((n, d))
    return X, _flip(rng, _sign(X @ w), k["noise"])


def _cls_snvd20(rng, n, d, k):
    r0 = k["radius"] if k["radius"] is not None else math.sqrt(stats.chi2.ppf(0.5, d))
    X = rng.standard_normal((n, d))
    e = rng.standard_normal(n)
    return X, _sign(np.linalg.norm(X, axis=1) + k["margin"] * e - r0)


def _cls_lwlc(rng, n, d, k):
    h = (d + 1) // 2
    Q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    w_major, w_minor = _unit(rng, d), _unit(rng, d)
    g = _groups(rng, n, k["group_frac"])
    z = np.hstack([rng.standard_normal((n, h)), rng.choice([-1.0, 1.0], size=(n, d - h))])
    z[g, 0] += 2.0
    score = np.where(g, z @ w_minor, z @ w_major) + 0.5 * np.sin(3.0 * z[:, 0])
    y = _flip(rng, _sign(score), k["noise"])
    return z @ Q, y


def _reg_basic(rng, n, d, k):
    beta = rng.standard_normal(d)
    X = rng.standard_normal((n, d))
    return X, X @ beta + k["noise"] * rng.standard_normal(n)


def _reg_dn20_1(rng, n, d, k):
    beta = rng.standard_normal(d)
    X = rng.standard_normal((n, d))
    sd = np.where(X[:, 0] > k["threshold"], k["noise"] * math.sqrt(k["factor"]), k["noise"])
    return X, X @ beta + sd * rng.standard_normal(n)


def _reg_dn20_2(rng, n, d, k):
    beta = rng.standard_normal(d)
    g = _groups(rng, n, k["group_frac"])
    X = rng.standard_normal((n, d))
    X[g, 0] += 2.0
    slope = np.where(g[:, None], beta + k["shift"], beta)
    return X, np.sum(X * slope, axis=1) + k["noise"] * rng.standard_normal(n)


def _reg_lwlc(rng, n, d, k):
    beta = np.zeros(d)
    s = min(5, d)
    beta[:s] = rng.standard_normal(s)
    g = _groups(rng, n, k["group_frac"])
    X = rng.standard_normal((n, d))
    X[g] *= 2.0
    y = X @ beta + np.where(g, X[:, 0] * X[:, 1], 0.0) + k["noise"] * rng.standard_normal(n)
    return X, y


_GEN = {"cls_basic": _cls_basic, "cls_dn21": _cls_dn21, "cls_snvd20": _cls_snvd20, "cls_lwlc": _cls_lwlc,
        "reg_basic": _reg_basic, "reg_dn20_1": _reg_dn20_1, "reg_dn20_2": _reg_dn20_2, "reg_lwlc": _reg_lwlc}


def generate(spec: GenSpec) -> Dataset:
    rng = np.random.default_rng(spec.seed)
    X, y = _GEN[spec.kind](rng, int(spec.n), int(spec.d), spec.knobs)
    return Dataset(X, y, spec.task)


# ------------------------------------------------------------------ CSV


def export_csv(data: Dataset, path) -> None:
    """Write ``x0,...,x{d-1},y`` with 17 significant digits (lossless)."""
    header = [f"x{j}" for j in range(data.d)] + ["y"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        rows = np.hstack([data.X, data.y[:, None]])
        for row in rows:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def import_csv(path, task: str, map01: bool = False) -> Dataset:
    """Read a CSV with a header; the column named ``y`` is the label.

    With ``map01`` a classification file labelled {0, 1} is mapped to {-1, +1}.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    with fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if "y" not in header:
            raise DataError(f"{path}: no 'y' column in header {header}")
        iy = header.index("y")
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise DataError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
            vals = []
            for c, cell in enumerate(row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataError(f"{path}: row {r}, column {header[c]!r}: non-numeric cell {cell!r}") from None
                if not math.isfinite(v):
                    raise DataError(f"{path}: row {r}, column {header[c]!r}: non-finite value {cell!r}")
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    A = np.array(rows)
    y = A[:, iy]
    X = np.delete(A, iy, axis=1)
    if X.shape[1] == 0:
        raise DataError(f"{path}: no feature columns")
    if map01:
        if task != CLASSIFICATION:
            raise DataError("map01 applies to classification files only")
        if not np.all((y == 0) | (y == 1)):
            raise DataError(f"{path}: map01 requested but labels are not in {{0, 1}}")
        y = 2.0 * y - 1.0
    return Dataset(X, y, task)


def read_features(path) -> np.ndarray:
    """Feature matrix of a CSV file; a ``y`` column, if present, is ignored."""
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            header = [h.strip() for h in next(csv.reader(fh))]
    except (OSError, StopIteration) as exc:
        raise DataError(f"cannot read header of {path}: {exc!r}") from None
    if "y" in header:
        return import_csv(path, REGRESSION).X
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()[1:]
    rows = []
    for r, line in enumerate(lines, start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(header):
            raise DataError(f"{path}: row {r} has {len(cells)} cells, header has {len(header)}")
        try:
            vals = [float(c) for c in cells]
        except ValueError:
            raise DataError(f"{path}: row {r}: non-numeric cell") from None
        if not all(math.isfinite(v) for v in vals):
            raise DataError(f"{path}: row {r}: non-finite value")
        rows.append(vals)
    if not rows:
        raise DataError(f"{path}: no data rows")
    return np.array(rows)
