"""Batch command line: generate, fit, predict, evaluate, worstcase.

Exit codes: 0 ok, 2 usage/parameter error, 3 unsupported combination,
4 data error, 5 non-convergence (the model file is still written).
Every command prints one JSON line on stdout.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import databench
from .bayesian import BayesianDRO
from .core import CapabilityError, DataError, LinearModel, ParameterError, RobustaError, evaluate, score
from .fdiv import CVaRDRO, Chi2DRO, KLDRO, TVDRO
from .kernel import NystroemMap
from .losses import KINDS, task_of
from .marginal import MarginalCVaRDRO
from .wasserstein import RSWassersteinDRO, WassersteinDRO

FORMAT_VERSION = 1
EXIT_OK, EXIT_USAGE, EXIT_CAPABILITY, EXIT_DATA, EXIT_NOT_CONVERGED = 0, 2, 3, 4, 5

METHODS = {
    "wdro": WassersteinDRO,
    "rswdro": RSWassersteinDRO,
    "kl": KLDRO,
    "chi2": Chi2DRO,
    "tv": TVDRO,
    "cvar": CVaRDRO,
    "marginal_cvar": MarginalCVaRDRO,
    "bayesian": BayesianDRO,
}

# flag name -> hyperparameter key
HYPER_FLAGS = {
    "eps": "eps", "alpha": "alpha", "kappa": "kappa", "p": "p", "target_ratio": "target_ratio",
    "bisect_tol": "bisect_tol", "L": "L", "k": "k", "control_idx": "control_idx", "m": "posterior_draws",
    "synthetic_per_draw": "synthetic_per_draw", "prior_precision": "prior_precision",
    "prior_shape": "prior_shape", "prior_rate": "prior_rate", "kernel": "kernel",
    "n_components": "n_components", "gamma": "gamma", "max_iter": "max_iter", "tol": "tol",
}
GEN_KNOBS = ("radius", "noise", "margin", "group_frac", "factor", "threshold", "shift")


def capability_table() -> dict:
    return {name: tuple(cls.supported_kinds) for name, cls in METHODS.items()}


def _valid_pairs() -> str:
    return "; ".join(f"{m}: {','.join(k)}" for m, k in capability_table().items())


@dataclass
class RunConfig:
    command: str
    method: Optional[str] = None
    kind: Optional[str] = None
    hyper: dict = field(default_factory=dict)
    paths: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.method is None:
            return
        if self.method not in METHODS:
            raise CapabilityError(f"unknown method {self.method!r}; valid pairs: {_valid_pairs()}")
        if self.kind not in METHODS[self.method].supported_kinds:
            raise CapabilityError(f"method {self.method!r} does not support backbone {self.kind!r}; "
                                  f"valid pairs: {_valid_pairs()}")


# ------------------------------------------------------------ JSON helpers


def _enc(v):
    if isinstance(v, float) and not math.isfinite(v):
        return "nan" if math.isnan(v) else ("inf" if v > 0 else "-inf")
    if isinstance(v, np.ndarray):
        return [_enc(x) for x in v.tolist()]
    if isinstance(v, (list, tuple)):
        return [_enc(x) for x in v]
    if isinstance(v, dict):
        return {k: _enc(x) for k, x in v.items()}
    if isinstance(v, np.generic):
        return _enc(v.item())
    return v


def _dec_float(v):
    if isinstance(v, str) and v in ("inf", "-inf", "nan"):
        return float(v)
    return v


def _dumps(obj) -> str:
    return json.dumps(_enc(obj), sort_keys=True, allow_nan=False)


def model_to_dict(est) -> dict:
    model = est.model_
    hyper = dict(est.hyper)
    return {
        "format_version": FORMAT_VERSION,
        "method": est.method,
        "kind": model.kind,
        "theta": model.theta.tolist(),
        "intercept": model.intercept,
        "feature_map": None if model.feature_map is None else model.feature_map.to_dict(),
        "hyperparameters": hyper,
        "report": est.report_.to_dict(timing=False),
    }


def load_model(path):
    """Rebuild the estimator (hyperparameters + fitted model) from a model file."""
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from None
    if d.get("format_version") != FORMAT_VERSION:
        raise DataError(f"unsupported model format_version {d.get('format_version')!r}")
    RunConfig("load", d["method"], d["kind"])
    hyper = {k: _dec_float(v) for k, v in d["hyperparameters"].items()}
    if hyper.get("sigma") is not None:
        hyper["sigma"] = np.asarray(hyper["sigma"], dtype=float)
    est = METHODS[d["method"]](d["kind"], **hyper)
    fmap = None if d["feature_map"] is None else NystroemMap.from_dict(d["feature_map"])
    est.model_ = LinearModel(d["kind"], np.asarray(d["theta"], dtype=float), d["intercept"], fmap)
    return est


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="robusta", description="Distributionally robust training toolkit.")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic dataset as CSV")
    g.add_argument("--kind", required=True, help=f"one of {', '.join(databench.KINDS)}")
    g.add_argument("--n", type=int, default=100)
    g.add_argument("--d", type=int, default=2)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    for knob in GEN_KNOBS:
        g.add_argument(f"--{knob.replace('_', '-')}", dest=knob, type=float)

    f = sub.add_parser("fit", help="fit a robust model and write it as JSON")
    f.add_argument("--method", required=True, help=f"one of {', '.join(METHODS)}")
    f.add_argument("--kind", required=True, help=f"backbone, one of {', '.join(KINDS)}")
    # checked after the capability check, so unsupported pairs report as such
    f.add_argument("--data", help="training CSV (required)")
    f.add_argument("--out", help="model JSON to write (required)")
    f.add_argument("--map01", action="store_true", help="map {0,1} labels to {-1,+1}")
    f.add_argument("--seed", type=int, default=0)
    f.add_argument("--timing", action="store_true", help="include wall-clock seconds on stdout")
    f.add_argument("--sigma-file", help="CSV matrix for the Wasserstein cost Sigma")
    for name in ("eps", "alpha", "kappa", "p", "target_ratio", "bisect_tol", "L", "gamma", "tol",
                 "prior_precision", "prior_shape", "prior_rate"):
        f.add_argument(f"--{name.replace('_', '-')}", dest=name, type=float)
    for name in ("k", "m", "synthetic_per_draw", "n_components", "max_iter"):
        f.add_argument(f"--{name.replace('_', '-')}", dest=name, type=int)
    f.add_argument("--control-idx", dest="control_idx", help="comma-separated feature indices")
    f.add_argument("--kernel", choices=("linear", "rbf"))

    for name, helptext in (("predict", "write predictions as CSV"),
                           ("evaluate", "print the empirical mean loss"),
                           ("worstcase", "write the worst-case distribution as CSV")):
        c = sub.add_parser(name, help=helptext)
        c.add_argument("--model", required=True)
        c.add_argument("--data", required=True)
        c.add_argument("--map01", action="store_true")
        if name != "evaluate":
            c.add_argument("--out", required=True)
    return parser


# ---------------------------------------------------------------- commands


def _emit(obj) -> None:
    sys.stdout.write(_dumps(obj) + "\n")


def _cmd_generate(args) -> int:
    knobs = {k: getattr(args, k) for k in GEN_KNOBS if getattr(args, k) is not None}
    spec = databench.GenSpec(args.kind, args.n, args.d, args.seed, knobs)
    data = databench.generate(spec)
    databench.export_csv(data, args.out)
    _emit({"command": "generate", "kind": args.kind, "n": data.n, "d": data.d, "out": args.out})
    return EXIT_OK


def _hyper_from(args, method) -> dict:
    allowed = set(METHODS[method].params) | set(METHODS[method].common)
    hyper = {}
    for flag, key in HYPER_FLAGS.items():
        v = getattr(args, flag, None)
        if v is None:
            continue
        if key not in allowed:
            raise ParameterError(f"--{flag.replace('_', '-')} does not apply to method {method!r}")
        if key == "control_idx":
            try:
                v = tuple(int(s) for s in v.split(",") if s.strip())
            except ValueError:
                raise ParameterError(f"--control-idx must be comma-separated integers, got {v!r}") from None
        hyper[key] = v
    if args.sigma_file:
        if "sigma" not in allowed:
            raise ParameterError(f"--sigma-file does not apply to method {method!r}")
        try:
            hyper["sigma"] = np.loadtxt(args.sigma_file, delimiter=",", ndmin=2)
        except (OSError, ValueError) as exc:
            raise DataError(f"cannot read Sigma from {args.sigma_file}: {exc}") from None
    hyper["seed"] = args.seed
    return hyper


def _cmd_fit(args) -> int:
    cfg = RunConfig("fit", args.method, args.kind, paths={"data": args.data, "out": args.out}, seed=args.seed)
    missing = [f"--{k}" for k in ("data", "out") if not cfg.paths[k]]
    if missing:
        raise ParameterError(f"fit requires {' and '.join(missing)}")
    cfg.hyper = _hyper_from(args, cfg.method)
    data = databench.import_csv(args.data, task_of(cfg.kind), args.map01)
    est = METHODS[cfg.method](cfg.kind, **cfg.hyper)
    est.fit(data)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(_enc(model_to_dict(est)), sort_keys=True, indent=2, allow_nan=False) + "\n")
    report = est.report_.to_dict(timing=args.timing)
    _emit({"command": "fit", "method": cfg.method, "kind": cfg.kind, "out": args.out, **report})
    return EXIT_OK if est.report_.converged else EXIT_NOT_CONVERGED


def _load_data(args, est):
    return databench.import_csv(args.data, task_of(est.kind), args.map01)


def _cmd_predict(args) -> int:
    est = load_model(args.model)
    X = databench.read_features(args.data)
    pred = est.predict(X)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("prediction\n")
        for v in pred:
            fh.write("%.17g\n" % v)
    _emit({"command": "predict", "n": int(len(pred)), "out": args.out})
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    est = load_model(args.model)
    data = _load_data(args, est)
    _emit({"command": "evaluate", "loss": evaluate(est.model_, data), "score": score(est.model_, data)})
    return EXIT_OK


def _cmd_worstcase(args) -> int:
    est = load_model(args.model)
    data = _load_data(args, est)
    wc = est.worst_distribution(data)
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        if wc.variant == "reweight":
            fh.write("index,weight\n")
            for i, w in enumerate(wc.weights):
                fh.write("%d,%.17g\n" % (i, w))
        else:
            fh.write(",".join([f"x{j}" for j in range(wc.X.shape[1])] + ["y"]) + "\n")
            for row, yv in zip(wc.X, wc.y):
                fh.write(",".join("%.17g" % v for v in (*row, yv)) + "\n")
    _emit({"command": "worstcase", "variant": wc.variant, "attained_value": wc.attained_value, "out": args.out})
    return EXIT_OK


COMMANDS = {"generate": _cmd_generate, "fit": _cmd_fit, "predict": _cmd_predict,
            "evaluate": _cmd_evaluate, "worstcase": _cmd_worstcase}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except CapabilityError as exc:
        code, msg = EXIT_CAPABILITY, str(exc)
    except DataError as exc:
        code, msg = EXIT_DATA, str(exc)
    except ParameterError as exc:
        code, msg = EXIT_USAGE, str(exc)
    except RobustaError as exc:
        code, msg = EXIT_NOT_CONVERGED, str(exc)
    except OSError as exc:
        code, msg = EXIT_DATA, str(exc)
    sys.stderr.write(f"robusta {args.command}: error: {msg}\n")
    return code


def main() -> None:
    sys.exit(run())
