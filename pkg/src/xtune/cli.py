"""``xtune`` command line: datasets, models, explanations, solves and benchmarks."""

from __future__ import annotations

import argparse
import json
import os
import sys
import warnings
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import data, forest, shapley
from .kernels import EXECUTABLE, SPARSE_SCHEME, BlockConfig, default_threads, run_variant, variant
from .matrices import CrsMatrix, dense_to_crs, gen_identity_mix, gen_random_scaled
from .mmio import mm_read, mm_write, read_vector, write_vector
from .ozaki import COL_SPLIT, ROW_SPLIT, SplitConfig, split_matrix
from .piccg import BreakdownError, IcParams, p3d_generate, piccg_solve

EXIT_OK, EXIT_VALIDATION, EXIT_NUMERICAL, EXIT_IO = 0, 2, 3, 4
EXPERIMENTS = ("matmul-select", "blockwidth", "piccg", "matmul-engineered")


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION, payload: dict | None = None):
        super().__init__(message)
        self.code = code
        self.payload = payload or {}


def _emit(doc) -> None:
    sys.stdout.write(json.dumps(doc, sort_keys=True, indent=2, default=_jsonable) + "\n")


def _jsonable(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"{type(o).__name__} is not JSON serializable")


def _progress(args):
    if not args.verbose:
        return None

    def show(i, n):
        print(f"\r{i}/{n}", end="" if i < n else "\n", file=sys.stderr, flush=True)
    return show


def _threads(args) -> int:
    return args.threads if args.threads else default_threads()


def _int_list(text: str) -> tuple[int, ...]:
    return tuple(int(v) for v in text.split(",") if v.strip())


# --- gen ----------------------------------------------------------------------

def _plan(args) -> data.DatasetPlan:
    paper = args.scale == "paper"
    if paper and not args.ack_long_run:
        raise CliError("--scale paper runs for many hours on a workstation; "
                       "rerun with --ack-long-run to confirm")
    repeats = args.repeats or data.BenchmarkConfig.repeats
    bench = data.BenchmarkConfig(repeats=repeats, warmup=args.warmup, threads=_threads(args),
                                 variants=args.variants or EXECUTABLE)
    if args.experiment == "matmul-select":
        grid = data.paper_matmul_grid() if paper else data.desk_matmul_grid()
        return data.plan_matmul(grid, args.seed, bench=bench, scale=args.scale)
    if args.experiment == "blockwidth":
        bench = data.BenchmarkConfig(repeats=repeats, warmup=args.warmup, threads=_threads(args),
                                     variants=(data.BLOCKED_VARIANT,))
        if paper:
            return data.plan_blockwidth(1500, data.paper_blockwidths(), seed=args.seed, bench=bench,
                                        scale="paper")
        return data.plan_blockwidth(seed=args.seed, bench=bench)
    if args.experiment == "piccg":
        sweep = data.PiccgSweep.paper() if paper else data.PiccgSweep()
        if args.repeats:
            sweep = data.PiccgSweep(**{**asdict(sweep), "repeats": args.repeats})
        return data.plan_piccg(sweep, args.seed, scale=args.scale)
    raise CliError(f"no plan for experiment {args.experiment}")


def cmd_gen(args) -> dict:
    out = Path(args.out)
    if out.suffix != ".csv":
        out = out / f"{args.experiment}-{args.scale}.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.experiment == "matmul-engineered":
        d = data.engineered_selection_dataset(seed=args.seed)
        warn = []
    else:
        plan = _plan(args)
        if args.dry_run:
            return {"experiment": args.experiment, "scale": args.scale, "rows": plan.n_rows,
                    "split": plan.split_counts(), "warnings": plan.manifest.get("warnings", []),
                    "manifest_sha256": data.manifest_digest(plan.manifest)}
        build = {"matmul-select": data.build_matmul_dataset, "blockwidth": data.build_blockwidth_dataset,
                 "piccg": data.build_piccg_dataset}[args.experiment]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            d = build(plan, _progress(args))
        warn = plan.manifest.get("warnings", [])
    data.dataset_write_csv(d, out)
    return {"dataset": str(out), "manifest": str(data.manifest_path(out)), "rows": d.n_rows,
            "split": {t: int(np.sum(d.split == t)) for t in (data.TRAIN, data.TEST, data.EXCLUDED)},
            "manifest_sha256": d.manifest_hash, "warnings": warn}


# --- train / eval / explain ---------------------------------------------------

def _encode_for(model: forest.RandomForest, d: data.Dataset) -> data.Dataset:
    for rec in model.meta.get("one_hot", []):
        d = data.one_hot_encode(d, rec["column"], rec["prefix"], rec["levels"])
    if tuple(d.features) != model.features:
        raise forest.SchemaMismatch(f"model expects {list(model.features)}, dataset has {list(d.features)}")
    return d


def _split_arg(s: str):
    return None if s == "all" else s


def cmd_train(args) -> dict:
    d = data.dataset_read_csv(args.data)
    one_hot = []
    if args.one_hot:
        levels = sorted(int(v) for v in np.unique(d.column(args.one_hot)))
        prefix = args.one_hot_prefix if args.one_hot_prefix is not None else args.one_hot + "_"
        d = data.one_hot_encode(d, args.one_hot, prefix, levels)
        one_hot.append({"column": args.one_hot, "prefix": prefix, "levels": levels})
    cfg = forest.TrainConfig(n_trees=args.trees, max_depth=args.max_depth,
                             min_samples_leaf=args.min_leaf, features_per_split=args.features_per_split,
                             bootstrap=not args.no_bootstrap, seed=args.seed)
    model = forest.train(d, cfg, _split_arg(args.split))
    model.meta["one_hot"] = one_hot
    forest.model_save(model, args.out)
    return {"model": args.out, "task": model.task, "features": list(model.features),
            "n_trees": len(model.trees), "dataset_manifest_sha256": d.manifest_hash,
            "train_rows": int(d.n_rows if args.split == "all" else np.sum(d.split == args.split))}


def cmd_eval(args) -> dict:
    model = forest.model_load(args.model)
    d = _encode_for(model, data.dataset_read_csv(args.data))
    return forest.evaluate(model, d, _split_arg(args.split)).as_dict()


def cmd_explain(args) -> dict:
    model = forest.model_load(args.model)
    d = _encode_for(model, data.dataset_read_csv(args.data))
    bg = shapley.BackgroundSet.from_dataset(d, "train", args.background_cap, args.seed)
    target = None
    if args.target_class is not None:
        target = int(args.target_class)
    g = shapley.global_summary(model, d, bg, _split_arg(args.split), target)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shapley.export_beeswarm(g, out / "beeswarm.csv", "csv")
    title = f"{model.target}" + (f" (class {g.target_output})" if g.target_output is not None else "")
    shapley.export_beeswarm(g, out / "beeswarm.svg", "svg", title)
    shapley.write_summary_json(g, out / "summary.json")
    return {**g.as_dict(), "files": [str(out / n) for n in ("beeswarm.csv", "beeswarm.svg", "summary.json")]}


# --- tune ---------------------------------------------------------------------

def demo_selection_model(seed: int = 0) -> forest.RandomForest:
    """Classifier trained on the engineered sparsity-rule dataset."""
    d = data.engineered_selection_dataset(seed=seed)
    return forest.train(d, forest.TrainConfig(seed=seed), split=None)


def _load_dense(path) -> np.ndarray:
    return mm_read(path).to_dense()


def cmd_tune(args) -> dict:
    a = _load_dense(args.a)
    b = _load_dense(args.b)
    model = forest.model_load(args.model) if args.model else demo_selection_model()
    if model.task != "classify":
        raise CliError("tune needs a variant classifier")
    feats = data.extract_matmul_features(a, b)
    predicted = int(forest.predict(model, feats))
    sa = split_matrix(a, ROW_SPLIT)
    sb = split_matrix(b, COL_SPLIT, inner_dim=a.shape[1])
    run = run_variant(predicted, sa, sb, threads=_threads(args))
    report = {"features": feats, "predicted_variant": predicted,
              "predicted_label": variant(predicted).label,
              "predicted_is_sparse_scheme": predicted in SPARSE_SCHEME,
              "predicted_seconds": run.elapsed_seconds, "model": args.model or "demo"}
    if not args.no_measure:
        res = data.benchmark_variants(a, b, data.BenchmarkConfig(repeats=args.repeats, warmup=1,
                                                                  threads=_threads(args)))
        report["measured_seconds"] = {str(k): v for k, v in res.timings.items()}
        report["fastest_measured"] = res.best
        report["prediction_matches"] = res.best == predicted
        if not np.array_equal(res.result, run.result):
            raise CliError("predicted variant disagrees with the benchmark result", EXIT_NUMERICAL)
    if args.c_out:
        mm_write(args.c_out, dense_to_crs(run.result))
    return report


# --- solve / p3d --------------------------------------------------------------

def _solve(a: CrsMatrix, b, args) -> dict:
    m = float("inf") if str(args.m) in ("inf", "unbounded") else int(args.m)
    params = IcParams(m, args.t)
    try:
        x, rep = piccg_solve(a, b, params, args.tol, args.max_iter)
    except BreakdownError as exc:
        raise CliError(str(exc), EXIT_NUMERICAL, {"converged": False, "tol": args.tol}) from None
    out = rep.as_dict()
    out.update({"order": a.rows, "max_fill_level": str(args.m), "threshold": args.t})
    if getattr(args, "x_out", None):
        write_vector(args.x_out, x)
    if not rep.converged:
        raise CliError("solver did not reach the tolerance", EXIT_NUMERICAL, out)
    return out


def cmd_solve(args) -> dict:
    a = mm_read(args.matrix)
    if a.rows != a.cols or not a.is_symmetric():
        raise CliError("solve needs a square symmetric matrix")
    b = read_vector(args.rhs) if args.rhs else np.ones(a.rows)
    return _solve(a, b, args)


def cmd_p3d(args) -> dict:
    prob = p3d_generate(args.n, args.lambda1, args.lambda2)
    out = {"n": args.n, "order": prob.order, "nnz": prob.a.nnz, "lambda1": args.lambda1,
           "lambda2": args.lambda2, "layer": list(prob.layer)}
    if args.out_matrix:
        mm_write(args.out_matrix, prob.a, symmetric=True,
                 comment=f"P3D n={args.n} lambda1={args.lambda1!r} lambda2={args.lambda2!r}")
        out["matrix"] = args.out_matrix
    if args.out_rhs:
        write_vector(args.out_rhs, prob.b)
        out["rhs"] = args.out_rhs
    if args.solve:
        out["solve"] = _solve(prob.a, prob.b, args)
    return out


# --- bench --------------------------------------------------------------------

def cmd_bench(args) -> dict:
    if args.a:
        a = _load_dense(args.a)
        b = _load_dense(args.b) if args.b else a
    else:
        gen = {1: lambda n, s, seed: gen_random_scaled(n, s, args.phi, seed),
               2: gen_identity_mix}[args.generator]
        a = gen(args.size, args.sparsity, args.seed)
        b = gen(args.size, args.sparsity, args.seed + 1)
    if args.block_width:
        BlockConfig(args.block_width).check(b.shape[1])
    cfg = data.BenchmarkConfig(repeats=args.repeats, warmup=args.warmup, threads=_threads(args),
                               variants=args.variants or EXECUTABLE, block_width=args.block_width)
    res = data.benchmark_variants(a, b, cfg, SplitConfig(max_splits=args.max_splits))
    return {"features": data.extract_matmul_features(a, b, SplitConfig(max_splits=args.max_splits)),
            "timings": {str(k): v for k, v in res.timings.items()}, "best": res.best,
            "best_label": variant(res.best).label, "repeats": args.repeats}


# --- parser -------------------------------------------------------------------

def build_parser() -> tuple[argparse.ArgumentParser, dict]:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file of option defaults (keys are option names)")
    common.add_argument("--threads", type=int, default=0, help="worker threads (default $XTUNE_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="store_true", help="progress on stderr")

    p = argparse.ArgumentParser(prog="xtune", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    subs = {}

    def add(name, fn, help):
        sp = sub.add_parser(name, parents=[common], help=help)
        sp.set_defaults(func=fn)
        subs[name] = sp
        return sp

    g = add("gen", cmd_gen, "build a dataset (CSV + manifest)")
    g.add_argument("--experiment", choices=EXPERIMENTS, required=True)
    g.add_argument("--scale", choices=("desk", "paper"), default="desk")
    g.add_argument("--ack-long-run", action="store_true")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", default="datasets")
    g.add_argument("--repeats", type=int, default=None, help="timing repeats (median taken)")
    g.add_argument("--warmup", type=int, default=1)
    g.add_argument("--variants", type=_int_list, default=None, help="comma-separated variant ids")
    g.add_argument("--dry-run", action="store_true", help="report row counts and warnings only")

    t = add("train", cmd_train, "train a random forest on a dataset")
    t.add_argument("--data", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--split", default="train", choices=("train", "test", "all"))
    t.add_argument("--trees", type=int, default=100)
    t.add_argument("--max-depth", type=int, default=0)
    t.add_argument("--min-leaf", type=int, default=1)
    t.add_argument("--features-per-split", type=int, default=None)
    t.add_argument("--no-bootstrap", action="store_true")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--one-hot", default=None, help="integer feature to replace by indicators")
    t.add_argument("--one-hot-prefix", default=None)

    e = add("eval", cmd_eval, "evaluate a model on a dataset split")
    e.add_argument("--model", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--split", default="test", choices=("train", "test", "all"))

    x = add("explain", cmd_explain, "Shapley beeswarm CSV/SVG and summary JSON")
    x.add_argument("--model", required=True)
    x.add_argument("--data", required=True)
    x.add_argument("--out-dir", required=True)
    x.add_argument("--split", default="test", choices=("train", "test", "all"))
    x.add_argument("--target-class", default=None)
    x.add_argument("--background-cap", type=int, default=shapley.DEFAULT_BACKGROUND_CAP)
    x.add_argument("--seed", type=int, default=0)

    u = add("tune", cmd_tune, "predict, run and check the best variant for a matrix pair")
    u.add_argument("--a", required=True, help="Matrix Market file for A")
    u.add_argument("--b", required=True, help="Matrix Market file for B")
    u.add_argument("--model", default=None, help="classifier JSON (default: built-in demo model)")
    u.add_argument("--repeats", type=int, default=3)
    u.add_argument("--no-measure", action="store_true", help="skip timing the other variants")
    u.add_argument("--c-out", default=None, help="write the product as Matrix Market")

    def solver_opts(sp):
        sp.add_argument("--m", default="0", help="maximum fill level (integer or 'inf')")
        sp.add_argument("--t", type=float, default=0.0, help="drop threshold for fill-ins")
        sp.add_argument("--tol", type=float, default=1e-8)
        sp.add_argument("--max-iter", type=int, default=10000)

    s = add("solve", cmd_solve, "IC(m,t)-preconditioned CG on a Matrix Market system")
    s.add_argument("--matrix", required=True)
    s.add_argument("--rhs", default=None, help="one value per line (default: all ones)")
    s.add_argument("--x-out", default=None)
    solver_opts(s)

    q = add("p3d", cmd_p3d, "generate (and optionally solve) the layered heat-conduction problem")
    q.add_argument("--n", type=int, default=16)
    q.add_argument("--lambda1", type=float, default=1.0)
    q.add_argument("--lambda2", type=float, default=1.0)
    q.add_argument("--out-matrix", default=None)
    q.add_argument("--out-rhs", default=None)
    q.add_argument("--solve", action="store_true")
    solver_opts(q)

    b = add("bench", cmd_bench, "time every executable variant on one matrix pair")
    b.add_argument("--a", default=None)
    b.add_argument("--b", default=None)
    b.add_argument("--generator", type=int, choices=(1, 2), default=1)
    b.add_argument("--size", type=int, default=128)
    b.add_argument("--sparsity", type=float, default=0.0)
    b.add_argument("--phi", type=int, default=30)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--repeats", type=int, default=5)
    b.add_argument("--warmup", type=int, default=1)
    b.add_argument("--variants", type=_int_list, default=None)
    b.add_argument("--block-width", type=int, default=None)
    b.add_argument("--max-splits", type=int, default=8)
    return p, subs


def _parse(argv):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise CliError("config file must hold a JSON object")
        sp = subs[args.command]
        known = {a.dest for a in sp._actions}
        unknown = set(k.replace("-", "_") for k in cfg) - known
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        sp.set_defaults(**{k.replace("-", "_"): v for k, v in cfg.items()})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = _parse(argv)
        if args.threads:
            os.environ["XTUNE_THREADS"] = str(args.threads)
        _emit(args.func(args))
        return EXIT_OK
    except CliError as exc:
        code, payload, msg = exc.code, exc.payload, str(exc)
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        code, payload, msg = EXIT_IO, {}, str(exc)
    except (ArithmeticError, data.VariantMismatchError) as exc:
        code, payload, msg = EXIT_NUMERICAL, {}, str(exc)
    except (ValueError, KeyError, TypeError) as exc:
        code, payload, msg = EXIT_VALIDATION, {}, f"{type(exc).__name__}: {exc}"
    except OSError as exc:
        code, payload, msg = EXIT_IO, {}, str(exc)
    if payload:
        _emit(payload)
    print(json.dumps({"error": msg, "exit_code": code}), file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
