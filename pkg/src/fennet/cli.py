"""Command-line interface.

Every subcommand reads FENT tensors and JSON configs, writes its outputs
atomically, and on failure prints one JSON line ``{"error": ..., "message": ...}``
to stderr and exits nonzero.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
from dataclasses import asdict
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from . import fent
from .analysis import error_bound_sweep, missingness_uniformity, smoothing_benefit_check
from .community import all_strengths, complete_at, complete_edge, extract_communities
from .data import gridsearch, ingest_od_csv, save_dataset, train_test_refit
from .manifold import TuckerPoint, load_point, save_point
from .objective import Grid, Problem
from .optimizer import FitConfig, fit
from .simulation import SimConfig, generate_instance, run_experiment, se_metrics

MODEL_SCHEMA_VERSION = 1


class CLIError(Exception):
    """Invalid input detected by the CLI itself."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise CLIError(message)


def clean(obj):
    """Make ``obj`` JSON-safe: numpy scalars to Python, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return clean(obj.tolist())
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _emit(obj, out=None) -> None:
    text = dumps(obj)
    if out is not None:
        fent.atomic_write(out, text)
    else:
        sys.stdout.write(text)


def _int_list(text: str) -> list[int]:
    try:
        values = [int(v) for v in text.replace(" ", "").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def _load_inputs(args) -> tuple[np.ndarray, np.ndarray]:
    Y = fent.read_tensor(args.data)
    mask = fent.read_mask(args.mask) if args.mask else np.ones(Y.shape, dtype=bool)
    return Y, mask


# -- model directories ------------------------------------------------------

def save_model(directory, point: TuckerPoint, prob: Problem, cfg: FitConfig, report) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_point(point, directory)
    if prob.centering_means is not None:
        fent.write_tensor(directory / "centering.fent", prob.centering_means)
    model = {"schema_version": MODEL_SCHEMA_VERSION, "fit": asdict(cfg),
             "alpha": prob.alpha if np.isscalar(prob.alpha) else np.asarray(prob.alpha).tolist(),
             "grid": prob.grid.to_dict(), "centered": prob.centering_means is not None,
             "created_at": datetime.now(timezone.utc).isoformat()}
    fent.atomic_write(directory / "model.json", dumps(model))
    fent.atomic_write(directory / "report.json", dumps(report.to_dict()))


def load_model(directory) -> tuple[TuckerPoint, Grid, np.ndarray | None]:
    directory = Path(directory)
    meta_path = directory / "model.json"
    if not meta_path.exists():
        raise CLIError(f"{directory} is not a model directory (no model.json)")
    meta = json.loads(meta_path.read_text())
    if meta.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise CLIError(f"unsupported model schema_version {meta.get('schema_version')}")
    means = fent.read_tensor(directory / "centering.fent") if meta.get("centered") else None
    return load_point(directory), Grid(**meta["grid"]), means


def completed_tensor(point: TuckerPoint, means) -> np.ndarray:
    X = np.array(point.value)
    return X if means is None else X + means[:, :, None, :]


# -- subcommands ------------------------------------------------------------

def cmd_simulate(args) -> None:
    cfg = SimConfig.from_dict(json.loads(Path(args.config).read_text()))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if args.instance is not None:
        rep, sigma2, omega = int(args.instance[0]), float(args.instance[1]), float(args.instance[2])
        inst = generate_instance(cfg, rep, sigma2, omega)
        fent.write_tensor(out / "X.fent", inst.X)
        fent.write_tensor(out / "Y.fent", inst.Y)
        fent.write_mask(out / "mask.fent", inst.mask)
        return
    rows, _ = run_experiment(cfg, out)
    _emit({"rows": [asdict(r) for r in rows]})


def cmd_fit(args) -> None:
    Y, mask = _load_inputs(args)
    grid = Grid(args.ts, args.te, Y.shape[2]) if Y.ndim == 4 else None
    prob = Problem.build(Y, mask, args.alpha, grid, center=args.center)
    cfg = FitConfig(s=args.s, K=args.K, alpha=args.alpha, max_iter=args.max_iter,
                    grad_tol=args.tol, obj_tol=args.obj_tol, seed=args.seed)
    point, report = fit(prob, cfg)
    save_model(args.out, point, prob, cfg, report)
    _emit({"iterations": report.iterations, "converged": report.converged,
           "termination_reason": report.termination_reason,
           "final_objective": report.objective_trace[-1],
           "final_grad_norm": report.final_grad_norm})


def cmd_complete(args) -> None:
    point, grid, means = load_model(args.model)
    if args.out:
        fent.write_tensor(args.out, completed_tensor(point, means))
    if args.edge is not None and not args.at:
        raise CLIError("--edge needs at least one --at time")
    queries = []
    for t in args.at or []:
        if args.edge is not None:
            i, j, n = args.edge
            queries.append({"t": t, "edge": [i, j, n],
                            "value": complete_edge(point, i, j, n, t, grid, means)})
        else:
            queries.append({"t": t, "values": complete_at(point, t, grid, means)})
    if queries or not args.out:
        _emit({"queries": queries})


def cmd_eval(args) -> None:
    point, _, means = load_model(args.model)
    X = fent.read_tensor(args.truth)
    Xhat = completed_tensor(point, means)
    if X.shape != Xhat.shape:
        raise CLIError(f"truth dims {X.shape} differ from model dims {Xhat.shape}")
    mask = fent.read_mask(args.mask) if args.mask else np.ones(X.shape, dtype=bool)
    if args.mask and args.mask_diagonal:
        # Match the training problem, whose diagonal fibers are never observed.
        mask = mask & ~np.eye(X.shape[0], dtype=bool)[:, :, None, None]
    se_full, se_miss = se_metrics(Xhat, X, mask)
    _emit({"se_full": se_full, "se_miss": se_miss,
           "mse_per_entry": se_full / X.size,
           "relative_error": math.sqrt(se_full) / (np.linalg.norm(X) or 1.0)}, args.out)


def cmd_communities(args) -> None:
    point, _, _ = load_model(args.model)
    result = extract_communities(point).to_dict()
    if args.strengths:
        result["strengths"] = all_strengths(point)
    _emit(result, args.out)


def cmd_ingest(args) -> None:
    ds = ingest_od_csv(args.csv, args.L, args.ts, args.te, args.threshold, center=args.center)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(ds, out)
    _emit({"nodes": len(ds.nodes), "samples": len(ds.samples), "L": ds.grid.L,
           "observed": int(ds.mask.sum()), "entries": int(ds.mask.size)})


def cmd_refit(args) -> None:
    point, _, _ = load_model(args.model)
    Y = fent.read_tensor(args.test_data)
    mask = fent.read_mask(args.test_mask) if args.test_mask else None
    B, Xhat = train_test_refit(point, Y, mask, mode=args.mode)
    summary = {"mode": args.mode, "core_dims": list(B.shape)}
    if mask is not None:
        summary["observed_se"] = float(np.sum(np.where(mask, Xhat - Y, 0.0) ** 2))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        fent.write_tensor(out / "core_test.fent", B)
        fent.write_tensor(out / "Xhat_test.fent", Xhat)
    _emit(summary)


def cmd_gridsearch(args) -> None:
    Y, mask = _load_inputs(args)
    prob = Problem.build(Y, mask, args.alpha, Grid(args.ts, args.te, Y.shape[2]))
    base = FitConfig(s=1, K=1, alpha=args.alpha, max_iter=args.max_iter, seed=args.seed)
    result = gridsearch(prob, args.s_list, args.K_list, args.holdout, args.seed, base,
                        refit=args.out is not None)
    if args.out:
        cfg = FitConfig(**{**asdict(base), "s": result.best[0], "K": result.best[1]})
        save_model(args.out, result.point, prob, cfg, result.report)
        fent.atomic_write(Path(args.out) / "gridsearch.json", dumps(result.to_dict()))
    _emit(result.to_dict())


def cmd_analyze(args) -> None:
    cfg = SimConfig.from_dict(json.loads(Path(args.config).read_text()))
    bounds = error_bound_sweep(cfg, trials=args.trials)
    smoothing = smoothing_benefit_check(cfg)
    inst = generate_instance(cfg, 0, cfg.sigma2[0], cfg.omega[0])
    report = {"error_bound": [b.to_dict() for b in bounds],
              "error_bound_holds": sum(b.holds for b in bounds),
              "smoothing": smoothing.to_dict(),
              "missingness": missingness_uniformity(inst.mask)}
    _emit(report, args.out)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="fennet", description="Functional network completion on a symmetric Tucker manifold.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sp = sub.add_parser("simulate", help="run a simulation grid from a JSON config")
    sp.add_argument("--config", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--instance", nargs=3, metavar=("REP", "SIGMA2", "OMEGA"),
                    help="only write X, Y and mask of one replication")
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("fit", help="fit a model to an observed tensor")
    sp.add_argument("--data", required=True)
    sp.add_argument("--mask")
    sp.add_argument("--s", type=int, required=True)
    sp.add_argument("--K", type=int, required=True)
    sp.add_argument("--alpha", type=float, default=0.0)
    sp.add_argument("--max-iter", type=int, default=500)
    sp.add_argument("--tol", type=float, default=1e-8)
    sp.add_argument("--obj-tol", type=float, default=1e-12)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--center", action="store_true")
    sp.add_argument("--ts", type=float, default=-1.0)
    sp.add_argument("--te", type=float, default=1.0)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_fit)

    sp = sub.add_parser("complete", help="write the completed tensor or query times")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out")
    sp.add_argument("--at", type=float, action="append")
    sp.add_argument("--edge", type=int, nargs=3, metavar=("I", "J", "N"))
    sp.set_defaults(func=cmd_complete)

    sp = sub.add_parser("eval", help="squared errors against a ground-truth tensor")
    sp.add_argument("--model", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--mask")
    sp.add_argument("--no-mask-diagonal", dest="mask_diagonal", action="store_false")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("communities", help="community memberships of a fitted model")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out")
    sp.add_argument("--strengths", action="store_true")
    sp.set_defaults(func=cmd_communities)

    sp = sub.add_parser("ingest", help="build a dataset from an O-D CSV")
    sp.add_argument("--csv", required=True)
    sp.add_argument("--L", type=int, required=True)
    sp.add_argument("--ts", type=float, required=True)
    sp.add_argument("--te", type=float, required=True)
    sp.add_argument("--threshold", type=float, default=0.0)
    sp.add_argument("--center", action="store_true")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("refit", help="refit the core on test samples")
    sp.add_argument("--model", required=True)
    sp.add_argument("--test-data", required=True)
    sp.add_argument("--test-mask")
    sp.add_argument("--mode", choices=("projection", "paper", "masked-ls"), default="projection",
                    help="projection (alias: paper) or masked-ls")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_refit)

    sp = sub.add_parser("gridsearch", help="select (s, K) by held-out error")
    sp.add_argument("--data", required=True)
    sp.add_argument("--mask")
    sp.add_argument("--s-list", type=_int_list, required=True)
    sp.add_argument("--K-list", type=_int_list, required=True)
    sp.add_argument("--holdout", type=float, default=0.1)
    sp.add_argument("--alpha", type=float, default=0.0)
    sp.add_argument("--max-iter", type=int, default=500)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--ts", type=float, default=-1.0)
    sp.add_argument("--te", type=float, default=1.0)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_gridsearch)

    sp = sub.add_parser("analyze", help="empirical bound and smoothing checks")
    sp.add_argument("--config", required=True)
    sp.add_argument("--trials", type=int, default=20)
    sp.add_argument("--out", default="analysis_report.json")
    sp.set_defaults(func=cmd_analyze)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        args.func(args)
    except CLIError as exc:
        sys.stderr.write(json.dumps({"error": "UsageError", "message": str(exc)}) + "\n")
        return 2
    except Exception as exc:
        msg = " ".join(str(exc).split())
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": msg}) + "\n")
        return 1
    return 0
