"""Command-line interface: ``fungraph {simulate,estimate,tune,roc,eval,basis}``.

Every command writes a manifest JSON next to its outputs. The manifest holds
the full configuration (paths relative to the manifest) and can be passed
back through ``--config`` to reproduce the outputs exactly.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .basis import basis_by_name, estimate_fpca, project_scores
from .errors import FunGraphError, ParseError, ValidationError
from .evaluation import auc, confusion, precision_recall, roc
from .experiment import ExperimentConfig, run_batch
from .functional import FunctionalDataset, Grid, center_dataset, load_dataset, save_dataset
from .grouplasso import AdmmConfig, GroupLassoProblem, lambda_max
from .neighborhood import (
    GraphEstimate,
    combine,
    graph_paths,
    graphs_along_path,
    neighborhoods_at_t,
)
from .parallel import resolve_threads
from .simgen import MODELS, PrecisionSpec, build_precision, sample_dataset
from .tuning import LambdaGrid, default_t_values, scv_neighborhoods, scv_select_lambda, select_M

SCHEMA_VERSION = 1

# options that never appear in a manifest (they cannot change any output)
_RUNTIME_KEYS = {"command", "config", "threads", "func", "basis_command"}
# options holding file paths; stored relative to the manifest directory
_PATH_KEYS = {"out", "data", "truth", "estimate", "estimates"}


# ---------------------------------------------------------------------------
# Output helpers
# ---------------------------------------------------------------------------


def _json_default(obj):
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


def _clean(obj):
    """Replace non-finite floats by ``None`` so the JSON stays standard."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, default=_json_default) + "\n")


def write_csv(path: Path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    path.write_text(buf.getvalue())


def graph_to_json(graph: GraphEstimate, **extra) -> dict:
    return {"p": graph.p, "rule": graph.rule, "edges": [list(e) for e in graph.edges()], **extra}


def read_graph(path) -> GraphEstimate:
    path = Path(path)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    try:
        p = int(obj["p"])
        edges = obj["edges"]
    except (KeyError, TypeError, ValueError):
        raise ParseError(f"{path}: graph files need integer 'p' and an 'edges' list") from None
    adj = np.zeros((p, p), dtype=bool)
    for e in edges:
        i, j = int(e[0]), int(e[1])
        if not (0 <= i < p and 0 <= j < p) or i == j:
            raise ParseError(f"{path}: invalid edge {e} for p={p}")
        adj[i, j] = adj[j, i] = True
    return GraphEstimate(adj, obj.get("rule", "AND"))


def _out_prefix(args) -> Path:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    return out


def _with_suffix(prefix: Path, suffix: str) -> Path:
    return prefix.with_name(prefix.name + suffix)


def manifest_path(args) -> Path:
    return _with_suffix(Path(args.out), f".{args.command}.manifest.json")


def write_manifest(path: Path, args, outputs) -> None:
    base = path.parent.resolve()
    cfg = {}
    for key, value in sorted(vars(args).items()):
        if key in _RUNTIME_KEYS:
            continue
        if key in _PATH_KEYS and value is not None:
            if isinstance(value, list):
                value = [os.path.relpath(Path(v).resolve(), base) for v in value]
            else:
                value = os.path.relpath(Path(value).resolve(), base)
        cfg[key] = value
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "library": "fungraph",
        "library_version": __version__,
        "command": args.command if args.command != "basis" else "basis export",
        "config": cfg,
        "outputs": sorted(os.path.relpath(Path(o).resolve(), base) for o in outputs),
    }
    write_json(path, manifest)


# ---------------------------------------------------------------------------
# Shared option groups
# ---------------------------------------------------------------------------


def _t_values(args) -> np.ndarray:
    if args.t_num < 1:
        raise ValidationError("--t-num must be positive")
    if not 0 < args.t_min <= 1:
        raise ValidationError("--t-min must lie in (0, 1]")
    if args.t_num == 1:
        return np.array([1.0])
    return default_t_values(args.t_num, args.t_min)


def _admm(args) -> AdmmConfig:
    return AdmmConfig(eps_abs=args.eps_abs, eps_rel=args.eps_rel, max_iter=args.max_iter)


def _load(args) -> FunctionalDataset:
    ds = load_dataset(args.data, args.format)
    return center_dataset(ds) if args.center else ds


def _fixed_basis(args, grid: Grid):
    if args.basis_mode != "fixed":
        return None
    return basis_by_name(args.fixed_basis, args.M, grid)


def _add_data(p):
    p.add_argument("--data", help="dataset file (.csv or FGM1 binary)")
    p.add_argument("--format", choices=["csv", "binary"], default=None, help="override format inference")
    p.add_argument("--center", action="store_true", help="subtract the sample mean curve of each node")


def _add_model(p):
    p.add_argument("--basis-mode", choices=["fpca_gy", "fpca_gx", "fixed"], default="fpca_gy")
    p.add_argument("--fixed-basis", choices=["fourier", "bspline"], default="fourier")
    p.add_argument("--M", type=int, default=5, help="number of basis functions per node")
    p.add_argument("--epsilon", type=float, default=0.0, help="block-norm threshold")
    p.add_argument("--t-num", type=int, default=50, help="points of the log-spaced t grid")
    p.add_argument("--t-min", type=float, default=0.01, help="smallest t of the grid")
    p.add_argument("--eps-abs", type=float, default=AdmmConfig.eps_abs)
    p.add_argument("--eps-rel", type=float, default=AdmmConfig.eps_rel)
    p.add_argument("--max-iter", type=int, default=AdmmConfig.max_iter)


def _add_common(p):
    p.add_argument("--config", help="JSON file of options (or a manifest) replacing the flags")
    p.add_argument("--threads", type=int, default=None, help="worker processes (default: FGM_THREADS or all cores)")


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def cmd_simulate(args) -> list:
    if args.model is None:
        raise _Usage("simulate requires --model")
    if args.out is None:
        raise _Usage("simulate requires --out")
    theta = build_precision(PrecisionSpec(args.model, args.p, seed=args.seed))
    ds, truth = sample_dataset(theta, args.n, args.T, args.sigma, args.seed)
    out = _out_prefix(args)
    save_dataset(ds, out, args.format)
    truth_path = _with_suffix(out, ".truth.json")
    write_json(truth_path, graph_to_json(truth, model=args.model, seed=args.seed))
    return [out, Path(str(out) + ".grid.json"), truth_path]


def cmd_estimate(args) -> list:
    if args.data is None or args.out is None:
        raise _Usage("estimate requires --data and --out")
    if (args.lambda_t is None) == (not args.scv):
        raise _Usage("estimate needs exactly one of --lambda-t or --scv")
    ds = _load(args)
    threads = resolve_threads(args.threads)
    config = _admm(args)
    fixed = _fixed_basis(args, ds.grid)
    diag = {"basis_mode": args.basis_mode, "M": args.M, "epsilon": args.epsilon}
    if args.scv:
        t = _t_values(args)
        paths = graph_paths(ds, t, args.basis_mode, args.M, config, fixed, threads)
        nbs, results = scv_neighborhoods(ds, paths, args.basis_mode, args.M, args.folds, args.seed,
                                         args.epsilon, config, fixed, threads)
        nodes = []
        for nb, path, res in zip(nbs, paths, results):
            entry = nb.to_json()
            entry.update(lambda_max=path.lambda_max, t=float(path.t_values[res.chosen_index]),
                         scv_criterion=float(res.criterion[res.chosen_index]),
                         converged=bool(path.converged.all()))
            nodes.append(entry)
        diag.update(selection="scv", folds=args.folds, seed=args.seed, t_values=list(t))
    else:
        nbs = neighborhoods_at_t(ds, args.lambda_t, args.basis_mode, args.M, args.epsilon, config, fixed, threads)
        nodes = [nb.to_json() for nb in nbs]
        diag.update(selection="fixed_t", t=args.lambda_t)
    diag["nodes"] = nodes
    out = _out_prefix(args)
    written = []
    for rule in ("AND", "OR"):
        graph = combine(nbs, rule)
        path = _with_suffix(out, f".{rule}.json")
        write_json(path, graph_to_json(graph))
        table = _with_suffix(out, f".{rule}.csv")
        table.write_text("".join(",".join("1" if v else "0" for v in row) + "\n" for row in graph.adjacency))
        written += [path, table]
    path = _with_suffix(out, ".diagnostics.json")
    write_json(path, diag)
    return written + [path]


def cmd_tune(args) -> list:
    if args.data is None or args.out is None or args.node is None:
        raise _Usage("tune requires --data, --node and --out")
    ds = _load(args)
    if not 0 <= args.node < ds.p:
        raise ValidationError(f"--node must lie in [0, {ds.p - 1}]")
    config = _admm(args)
    fixed = _fixed_basis(args, ds.grid)
    t = _t_values(args)
    scores = project_scores(ds, args.node, args.basis_mode, args.M, fixed)
    grid = LambdaGrid(t, lambda_max(GroupLassoProblem.from_scores(scores)))
    res = scv_select_lambda(scores, grid, args.folds, config, args.seed, epsilon=args.epsilon)
    out = _out_prefix(args)
    table = _with_suffix(out, ".scv.csv")
    write_csv(table, ["lambda", "t", "support_size", "criterion", "chosen"],
              [(lam, tv, size, crit, int(i == res.chosen_index))
               for i, ((lam, size, crit), tv) in enumerate(zip(res.table(), t))])
    written = [table]
    if args.select_M:
        cands = [int(m) for m in args.select_M]
        chosen, crit = select_M(ds, args.node, args.basis_mode, cands, args.folds, t, config, fixed,
                                args.seed, return_criteria=True)
        path = _with_suffix(out, ".select_M.json")
        write_json(path, {"node": args.node, "chosen_M": chosen,
                          "criterion": {str(m): v for m, v in sorted(crit.items())}})
        written.append(path)
    return written


def cmd_roc(args) -> list:
    out = _out_prefix(args) if args.out else None
    if out is None:
        raise _Usage("roc requires --out")
    threads = resolve_threads(args.threads)
    if args.estimates:
        if args.truth is None:
            raise _Usage("roc --estimates requires --truth")
        truth = read_graph(args.truth)
        ests = [read_graph(p) for p in args.estimates]
        t = []
        for p in args.estimates:
            obj = json.loads(Path(p).read_text())
            t.append(float(obj["t"]) if obj.get("t") is not None else float("nan"))
        return _write_roc(out, roc(ests, truth, t))
    if args.data is not None:
        if args.truth is None:
            raise _Usage("roc --data requires --truth")
        ds = _load(args)
        truth = read_graph(args.truth)
        t = _t_values(args)
        paths = graph_paths(ds, t, args.basis_mode, args.M, _admm(args), _fixed_basis(args, ds.grid), threads)
        return _write_roc(out, roc(graphs_along_path(paths, args.rule, args.epsilon), truth, t))
    if args.model is None:
        raise _Usage("roc needs --estimates, --data or --model (batch mode)")
    if args.basis_mode == "fixed":
        raise _Usage("batch mode uses estimated FPCA bases")
    cfg = ExperimentConfig(model=args.model, p=args.p, n=args.n, T=args.T, M=args.M, sigma=args.sigma,
                           t_values=tuple(_t_values(args)), basis_modes=(args.basis_mode,),
                           rules=(args.rule,), epsilon=args.epsilon, admm=_admm(args))
    seeds = list(range(args.seed, args.seed + args.seeds))
    batch = run_batch(cfg, seeds, threads)
    vals = batch.auc_values(args.basis_mode, args.rule)
    table = _with_suffix(out, ".auc.csv")
    write_csv(table, ["seed", "auc"], [(s, float(v)) for s, v in zip(seeds, vals)])
    summary = _with_suffix(out, ".summary.json")
    write_json(summary, {"model": args.model, "p": args.p, "basis_mode": args.basis_mode, "rule": args.rule,
                         "runs": len(seeds), "auc_mean": float(vals.mean()),
                         "auc_sd": float(vals.std(ddof=1)) if len(vals) > 1 else 0.0})
    return [table, summary]


def _write_roc(out: Path, curve) -> list:
    table = _with_suffix(out, ".roc.csv")
    write_csv(table, ["t", "fpr", "tpr"], curve.rows())
    summary = _with_suffix(out, ".summary.json")
    write_json(summary, {"auc": auc(curve), "points": len(curve.fpr)})
    return [table, summary]


def cmd_eval(args) -> list:
    if args.truth is None or args.estimate is None or args.out is None:
        raise _Usage("eval requires --truth, --estimate and --out")
    truth, est = read_graph(args.truth), read_graph(args.estimate)
    c = confusion(est, truth)
    pr = precision_recall(est, truth)
    out = _out_prefix(args)
    path = _with_suffix(out, ".eval.json")
    write_json(path, {"precision": pr.precision, "recall": pr.recall, "empty_prediction": pr.empty_prediction,
                      "tp": c.tp, "fp": c.fp, "tn": c.tn, "fn": c.fn})
    return [path]


def cmd_basis_export(args) -> list:
    if args.out is None:
        raise _Usage("basis export requires --out")
    if args.kind == "fpca":
        if args.data is None or args.node is None:
            raise _Usage("an FPCA basis needs --data and --node")
        ds = _load(args)
        basis = estimate_fpca(ds.node(args.node), args.M)
    else:
        basis = basis_by_name(args.kind, args.M, Grid(args.a, args.b, args.T), args.degree)
    out = _out_prefix(args)
    table = _with_suffix(out, ".csv")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for row in basis.functions:
        w.writerow([repr(float(v)) for v in row])
    table.write_text(buf.getvalue())
    meta = _with_suffix(out, ".json")
    write_json(meta, {"kind": basis.kind, "M": basis.M, "grid": basis.grid.to_json(),
                      "eigenvalues": None if basis.eigenvalues is None else basis.eigenvalues.tolist()})
    return [table, meta]


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


class _Usage(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fungraph", description="Functional graphical model estimation")
    parser.add_argument("--version", action="version", version=f"fungraph {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw a dataset from Model A, B, C or D")
    p.add_argument("--model", choices=MODELS)
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--sigma", type=float, default=None, help="noise sd (default: the model's own)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="dataset path; '.csv' selects CSV, anything else FGM1 binary")
    p.add_argument("--format", choices=["csv", "binary"], default=None)
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("estimate", help="estimate AND and OR graphs")
    _add_data(p)
    _add_model(p)
    p.add_argument("--lambda-t", type=float, default=None, help="shared t; node j uses t * lambda_max(j)")
    p.add_argument("--scv", action="store_true", help="select each node's penalty by SCV-RSS")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0, help="fold assignment seed")
    p.add_argument("--out", help="output prefix")
    _add_common(p)
    p.set_defaults(func=cmd_estimate)

    p = sub.add_parser("tune", help="SCV-RSS criterion table for one node")
    _add_data(p)
    _add_model(p)
    p.add_argument("--node", type=int, default=None, help="0-based target node")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--select-M", type=int, nargs="+", default=None, metavar="M", help="candidate M values")
    p.add_argument("--out", help="output prefix")
    _add_common(p)
    p.set_defaults(func=cmd_tune)

    p = sub.add_parser("roc", help="ROC curve and AUC (estimate files, one dataset, or a seed batch)")
    _add_data(p)
    _add_model(p)
    p.add_argument("--truth", help="true graph JSON")
    p.add_argument("--estimates", nargs="+", default=None, help="graph JSON files along a path")
    p.add_argument("--rule", choices=["AND", "OR"], default="AND")
    p.add_argument("--model", choices=MODELS, default=None, help="batch mode: simulate --seeds datasets")
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--T", type=int, default=100)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--seed", type=int, default=1, help="first seed of the batch")
    p.add_argument("--seeds", type=int, default=30, help="number of runs in the batch")
    p.add_argument("--out", help="output prefix")
    _add_common(p)
    p.set_defaults(func=cmd_roc)

    p = sub.add_parser("eval", help="precision and recall of one estimated graph")
    p.add_argument("--truth")
    p.add_argument("--estimate")
    p.add_argument("--out", help="output prefix")
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("basis", help="basis utilities")
    bsub = p.add_subparsers(dest="basis_command", required=True)
    b = bsub.add_parser("export", help="write a basis as CSV (M x T) plus JSON metadata")
    b.add_argument("--kind", choices=["fourier", "bspline", "fpca"], default="fourier")
    b.add_argument("--M", type=int, default=5)
    b.add_argument("--T", type=int, default=100)
    b.add_argument("--a", type=float, default=0.0)
    b.add_argument("--b", type=float, default=1.0)
    b.add_argument("--degree", type=int, default=3)
    b.add_argument("--node", type=int, default=None)
    _add_data(b)
    b.add_argument("--out", help="output prefix")
    _add_common(b)
    b.set_defaults(func=cmd_basis_export)
    return parser


def _explicit_keys(argv) -> set:
    """Destinations given on the command line (all defaults suppressed)."""
    parser = build_parser()
    stack = [parser]
    while stack:
        p = stack.pop()
        for action in p._actions:
            if isinstance(action, argparse._SubParsersAction):
                stack.extend(action.choices.values())
            elif action.dest != "help":
                action.default = argparse.SUPPRESS
    return set(vars(parser.parse_args(argv)))


def _apply_config(args, explicit: set, parser: argparse.ArgumentParser) -> None:
    """Merge a JSON config (or manifest) into ``args``; explicit flags win."""
    path = Path(args.config)
    try:
        obj = json.loads(path.read_text())
    except FileNotFoundError:
        raise ParseError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(obj, dict):
        raise ParseError(f"{path}: config must be a JSON object")
    base = path.parent
    if "config" in obj and "schema_version" in obj:
        command = obj.get("command", "")
        expected = args.command if args.command != "basis" else "basis export"
        if command != expected:
            raise ValidationError(f"{path}: manifest is for '{command}', not '{expected}'")
        if obj["schema_version"] != SCHEMA_VERSION:
            raise ValidationError(f"{path}: unsupported schema version {obj['schema_version']}")
        obj = obj["config"]
    known = set(vars(args)) - _RUNTIME_KEYS
    unknown = sorted(set(obj) - known)
    if unknown:
        raise ValidationError(f"{path}: unknown config keys {unknown}")
    for key, value in obj.items():
        if key in explicit:
            continue
        if key in _PATH_KEYS and value is not None:
            value = [str(base / v) for v in value] if isinstance(value, list) else str(base / value)
        setattr(args, key, value)


def main(argv: Optional[list] = None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    explicit = _explicit_keys(argv)
    try:
        if args.config:
            _apply_config(args, explicit, parser)
        outputs = args.func(args)
        write_manifest(manifest_path(args), args, outputs)
    except _Usage as exc:
        parser.print_usage(sys.stderr)
        print(f"fungraph: error: {exc}", file=sys.stderr)
        return 2
    except (FunGraphError, OSError) as exc:
        print(f"fungraph: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
