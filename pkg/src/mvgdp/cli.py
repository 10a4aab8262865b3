"""Command-line interface: ``mvgdp budget | perturb | experiment``.

Exit codes: 0 success, 2 invalid parameters, 3 mechanism failure,
4 inconsistent experiment configuration.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .budget import (
    Mode,
    PrivacyParams,
    QuerySpec,
    Structure,
    Theorem,
    budget_terms,
    general_bound,
    precision_budget,
    prefer_psd_theorem,
    psd_bound,
)
from .errors import ConfigError, MvgError, ParameterError
from .evalharness import (
    SYNTHETIC,
    config_from_dict,
    config_to_dict,
    default_config,
    load_csv,
    run_experiment,
    signal_allocation,
)
from .io import dumps_json, matrix_to_csv, read_matrix_csv, table_to_csv
from .mechanism import (
    NoiseDirections,
    PrecisionAllocation,
    baseline_gaussian,
    baseline_laplace,
    binary_allocation,
    design_equimodal,
    design_unimodal,
    private_directions,
)
from .sampler import RandomSeed

EXIT_OK = 0
EXIT_PARAM = 2
EXIT_MECHANISM = 3
EXIT_CONFIG = 4

log = logging.getLogger("mvgdp")


class _Fail(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _u64(text: str) -> int:
    try:
        v = int(text, 0)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if not 0 <= v < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _manifest(args, command: str) -> dict:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "timing")}
    return {"command": command, "version": __version__, "seed": config.get("seed"), "config": config}


def _write(path: Path, text: str) -> str:
    path.write_text(text)
    return hashlib.sha256(text.encode()).hexdigest()


def _write_timing(out: Path, started: float) -> None:
    # kept out of the manifest so reruns stay byte-identical
    (out / "timing.json").write_text(dumps_json({"wall_clock_seconds": time.perf_counter() - started}))


def _validated(fn, *a, **kw):
    """Call ``fn``; library validation errors become exit code 2."""
    try:
        return fn(*a, **kw)
    except MvgError as exc:
        raise _Fail(EXIT_PARAM, str(exc)) from exc


# --- budget --------------------------------------------------------------


def cmd_budget(args) -> int:
    p = _validated(PrivacyParams, args.epsilon, args.delta)
    q = _validated(QuerySpec, args.m, args.n, args.s2, args.gamma, Structure(args.structure))
    t = budget_terms(q, p)
    report = {
        "alpha": t.alpha,
        "beta": t.beta,
        "omega": t.omega,
        "zeta": t.zeta,
        "h_r": t.h_r,
        "h_r_half": t.h_r_half,
        "r": t.r,
        "general_bound": general_bound(t, p),
    }
    if q.is_psd:
        report["psd_bound"] = psd_bound(t, p)
        pref = prefer_psd_theorem(q)
        report["prefer_psd"] = {"preferred": pref.preferred, "reason": pref.reason.value}
    if args.mode is not None:
        report["precision_budget"] = _validated(precision_budget, q, p, Mode(args.mode), args.theorem)
        report["mode"] = args.mode
    text = dumps_json({"manifest": _manifest(args, "budget"), "budget": report})
    sys.stdout.write(text)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "budget.json", text)
    return EXIT_OK


# --- perturb -------------------------------------------------------------


def _read_theta(path: str) -> np.ndarray:
    return _validated(read_matrix_csv, path).reshape(-1)


def _perturb_inputs(args):
    x = _validated(read_matrix_csv, args.input)
    p = _validated(PrivacyParams, args.epsilon, args.delta)
    seed = _validated(RandomSeed, args.seed)
    mech = args.mechanism
    if mech.startswith("mvg") and args.gamma is None:
        raise _Fail(EXIT_PARAM, "--gamma is required for MVG mechanisms")
    if mech in ("gaussian",) + ("mvg-unimodal", "mvg-equimodal") and args.s2 is None:
        raise _Fail(EXIT_PARAM, "--s2 is required")
    if mech == "laplace" and args.s1 is None:
        raise _Fail(EXIT_PARAM, "--s1 is required for the Laplace mechanism")
    q = None
    if args.s2 is not None:
        # baselines ignore gamma; any value QuerySpec accepts will do
        gamma = args.gamma if args.gamma is not None else max(args.s2, 1.0)
        q = _validated(QuerySpec, x.shape[0], x.shape[1], args.s2, gamma, Structure(args.structure))
    return x, p, seed, q


def _directions(args, x, q, p, seed):
    """Directions, allocation, and the privacy left for the noise itself."""
    m = q.m
    spec = args.directions
    if spec == "private-svd":
        pd = private_directions(x, args.frac, p, seed.spawn(1), args.bound)
        mode = Mode.UNIMODAL if args.mechanism == "mvg-unimodal" else Mode.EQUIMODAL
        budget = precision_budget(q, pd.remaining, mode, None if mode is Mode.UNIMODAL else args.theorem)
        alloc = signal_allocation(pd.eigenvalues, x.shape[1], budget)
        return pd.dirs, alloc, pd.remaining, {"frac": args.frac}
    if spec == "identity":
        dirs = NoiseDirections.identity(m)
    elif spec.startswith("file:"):
        dirs = NoiseDirections(_validated(read_matrix_csv, spec[5:]))
    else:
        raise _Fail(EXIT_PARAM, f"--directions must be identity, file:PATH or private-svd, got {spec!r}")
    if args.theta is not None:
        alloc = PrecisionAllocation(_read_theta(args.theta))
    elif args.tau is not None:
        alloc = binary_allocation(m, args.flag or [], args.tau / 100.0)
    else:
        alloc = PrecisionAllocation.uniform(m)
    return dirs, alloc, p, {}


def cmd_perturb(args) -> int:
    x, p, seed, q = _perturb_inputs(args)
    meta: dict = {}
    try:
        if args.mechanism == "gaussian":
            y = baseline_gaussian(x, q, p, seed.spawn(0))
        elif args.mechanism == "laplace":
            y = baseline_laplace(x, args.s1, p.epsilon, seed.spawn(0))
        else:
            dirs, alloc, p_noise, extra = _directions(args, x, q, p, seed)
            if args.mechanism == "mvg-unimodal":
                design = design_unimodal(q, p_noise, dirs, alloc)
            else:
                theorem = args.theorem or (Theorem.PSD.value if q.is_psd else Theorem.GENERAL.value)
                design = design_equimodal(q, p_noise, dirs, alloc, theorem)
            y = design.perturb(x, seed.spawn(0)).value
            rep = design.condition_report
            meta = {
                "condition_report": {"holds": rep.holds, "lhs": rep.lhs, "rhs": rep.rhs},
                "theorem": design.theorem.value,
                "precision_budget": design.budget,
                "budget_spent": design.budget_spent,
                "theta": alloc.theta,
                **extra,
            }
    except MvgError as exc:
        raise _Fail(EXIT_MECHANISM, f"{type(exc).__name__}: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    digest = _write(out / "perturbed.csv", matrix_to_csv(y))
    manifest = _manifest(args, "perturb")
    manifest["outputs"] = {"perturbed.csv": digest}
    manifest.update(meta)
    _write(out / "manifest.json", dumps_json(manifest))
    return EXIT_OK


# --- experiment ----------------------------------------------------------


def _experiment_config(args) -> tuple[dict, str | None]:
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise _Fail(EXIT_CONFIG, f"cannot read config: {exc}") from exc
        doc["seed"] = args.seed
        if args.trials is not None:
            doc["trials"] = args.trials
        if args.epsilon is not None:
            doc["epsilon"] = args.epsilon
        if args.delta is not None:
            doc["delta"] = args.delta
        return doc, doc.get("dataset")
    if not args.task:
        raise _Fail(EXIT_CONFIG, "pass --config FILE or --task")
    cfg, synthetic = default_config(
        args.task,
        trials=args.trials if args.trials is not None else 100,
        seed=args.seed,
        epsilon=args.epsilon if args.epsilon is not None else 1.0,
    )
    doc = config_to_dict(cfg)
    if args.delta is not None:
        doc["delta"] = args.delta
    return doc, synthetic


def _delta_arg(text: str):
    return text if text == "1/n" else float(text)


_TASK_DATA = {"regression": "liver", "first-pc": "movement", "covariance": "ctg"}


def cmd_experiment(args) -> int:
    doc, suggested = _experiment_config(args)
    if args.synthetic is not None or not args.data:
        name = args.synthetic or suggested or _TASK_DATA.get(doc.get("task"))
        if name not in SYNTHETIC:
            raise _Fail(EXIT_CONFIG, f"unknown synthetic dataset {name!r}; choose from {sorted(SYNTHETIC)}")
        data = _validated(SYNTHETIC[name], args.data_seed)
        source = {"synthetic": name, "data_seed": args.data_seed}
    else:
        vr = tuple(args.value_range) if args.value_range else None
        data = _validated(load_csv, args.data, vr)
        source = {"path": args.data}
    try:
        cfg = config_from_dict(doc, data)
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from exc
    try:
        result = run_experiment(cfg, data)
    except ConfigError as exc:
        raise _Fail(EXIT_CONFIG, str(exc)) from exc
    except MvgError as exc:
        raise _Fail(EXIT_MECHANISM, f"{type(exc).__name__}: {exc}") from exc
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for r in result.reports:
        rows.append([r.label, r.metric, r.trials, r.mean, r.ci_half_width, r.metadata.get("tau", "")])
    csv_text = table_to_csv(["mechanism", "metric", "trials", "mean", "ci95", "tau"], rows)
    digest = _write(out / "results.csv", csv_text)
    manifest = _manifest(args, "experiment")
    manifest["experiment"] = config_to_dict(cfg)
    manifest["dataset"] = {**source, **result.dataset}
    manifest["outputs"] = {"results.csv": digest}
    payload = {
        "manifest": manifest,
        "reports": [dict(r.summary(), values=r.values) for r in result.reports],
    }
    _write(out / "results.json", dumps_json(payload))
    sys.stdout.write(csv_text)
    return EXIT_OK


# --- entry point ---------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvgdp", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    b = sub.add_parser("budget", help="privacy budget terms and bounds as JSON")
    b.add_argument("--m", type=int, required=True)
    b.add_argument("--n", type=int, required=True)
    b.add_argument("--s2", type=float, required=True)
    b.add_argument("--gamma", type=float, required=True)
    b.add_argument("--epsilon", type=float, required=True)
    b.add_argument("--delta", type=float, required=True)
    b.add_argument("--structure", choices=[s.value for s in Structure], default="general")
    b.add_argument("--mode", choices=[m.value for m in Mode])
    b.add_argument("--theorem", choices=[t.value for t in Theorem])
    b.add_argument("--out")
    b.set_defaults(func=cmd_budget)

    p = sub.add_parser("perturb", help="release a CSV matrix through a mechanism")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=_u64, required=True)
    p.add_argument(
        "--mechanism", choices=["mvg-unimodal", "mvg-equimodal", "gaussian", "laplace"], required=True
    )
    p.add_argument("--epsilon", type=float, required=True)
    p.add_argument("--delta", type=float, required=True)
    p.add_argument("--s2", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--s1", type=float)
    p.add_argument("--structure", choices=[s.value for s in Structure], default="general")
    p.add_argument("--theorem", choices=[t.value for t in Theorem])
    p.add_argument("--directions", default="identity", help="identity | file:PATH | private-svd")
    p.add_argument("--theta", help="CSV file with the precision allocation")
    p.add_argument("--tau", type=float, help="binary allocation percentage toward --flag indices")
    p.add_argument("--flag", type=int, nargs="*", help="direction indices favoured by --tau")
    p.add_argument("--frac", type=float, default=0.2, help="privacy share for private-svd directions")
    p.add_argument("--bound", type=float, default=1.0, help="public bound on |x_ij| for private-svd")
    p.add_argument("--timing", action="store_true", help="write wall-clock time to timing.json")
    p.set_defaults(func=cmd_perturb)

    e = sub.add_parser("experiment", help="repeated-trial utility experiment")
    e.add_argument("--seed", type=_u64, required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config", help="JSON experiment config")
    e.add_argument("--task", choices=sorted(_TASK_DATA))
    e.add_argument("--data", help="CSV dataset, one row per sample")
    e.add_argument("--value-range", type=float, nargs=2, metavar=("LO", "HI"))
    e.add_argument("--synthetic", nargs="?", const="", default=None, help="use a shape-matched synthetic dataset")
    e.add_argument("--data-seed", type=int, default=0)
    e.add_argument("--trials", type=int)
    e.add_argument("--epsilon", type=float)
    e.add_argument("--delta", type=_delta_arg)
    e.add_argument("--timing", action="store_true", help="write wall-clock time to timing.json")
    e.set_defaults(func=cmd_experiment)
    return ap


def main(argv=None) -> int:
    level = os.environ.get("MVGDP_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    args = _parser().parse_args(argv)
    started = time.perf_counter()
    try:
        code = args.func(args)
    except _Fail as exc:
        print(f"mvgdp: error: {exc}", file=sys.stderr)
        return exc.code
    except (ParameterError, ValueError) as exc:
        print(f"mvgdp: error: {exc}", file=sys.stderr)
        return EXIT_PARAM
    if getattr(args, "timing", False) and getattr(args, "out", None):
        _write_timing(Path(args.out), started)
    return code


if __name__ == "__main__":
    sys.exit(main())
