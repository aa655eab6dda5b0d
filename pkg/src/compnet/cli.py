"""Command-line entry point: ``compnet {fit,predict,cv,simulate,graph,report}``.

Every flag may also come from ``--config file.toml|file.json`` (keys are the
flag names, dashes or underscores); flags given on the command line win.
Failures print one JSON object on stderr and exit with a stage-specific code.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import graph as graphs
from .baseline import ClFit, fit_cl
from .composition import log_transform, read_dataset
from .report import cmd_report as build_report
from .selection import CvGrid, MODES, kfold_cv, loocv, predict_new, r_squared
from .simulation import SimSpec, run_benchmark
from .solver import SolverConfig, SolverDivergence, extract_clusters, fit_arrays
from .weber import WeberConfig

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2  # argparse
EXIT_CONFIG = 3
EXIT_IO = 4
EXIT_PARSE = 5
EXIT_SOLVER = 6

_STAGE_CODES = {"config": EXIT_CONFIG, "read": EXIT_PARSE, "solve": EXIT_SOLVER, "write": EXIT_IO}
CSV_FLOAT = "%.6g"

log = logging.getLogger("compnet")


class CliError(Exception):
    def __init__(self, stage, code, message, residuals=None):
        super().__init__(message)
        self.stage = stage
        self.code = code
        self.residuals = residuals

    def payload(self) -> dict:
        out = {"stage": self.stage, "message": str(self), "exit_code": self.code}
        if self.residuals is not None:
            out["residuals"] = self.residuals
        return out


@contextmanager
def stage(name):
    try:
        yield
    except CliError:
        raise
    except (SolverDivergence, FloatingPointError) as exc:
        raise CliError("solve", EXIT_SOLVER, str(exc), getattr(exc, "residuals", None)) from exc
    except OSError as exc:
        raise CliError(name, EXIT_IO, str(exc)) from exc
    except (ValueError, KeyError, pd.errors.ParserError,
            tomllib.TOMLDecodeError) as exc:
        raise CliError(name, _STAGE_CODES.get(name, EXIT_INTERNAL), str(exc)) from exc


# ---------------------------------------------------------------- parser


def _floats(text):
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    return [float(v) for v in str(text).split(",") if v.strip()]


def _names(text):
    if text is None:
        return None
    if isinstance(text, (list, tuple)):
        return [str(v) for v in text]
    return [v.strip() for v in str(text).split(",") if v.strip()]


def _common(p):
    p.add_argument("--config", help="TOML or JSON file supplying any of these flags")
    p.add_argument("--seed", type=int, help="random seed (printed when omitted)")
    p.add_argument("--threads", type=int, default=1, help="worker threads for CV folds")
    p.add_argument("-v", "--verbose", action="count", default=0)


def _data_flags(p, response=True):
    p.add_argument("--data", help="input CSV, one row per sample")
    if response:
        p.add_argument("--response", default="y", help="response column")
    p.add_argument("--id-column", default="id")
    p.add_argument("--features", help="comma-separated feature columns (default: all numeric)")
    p.add_argument("--covariates", help="comma-separated covariate columns")
    p.add_argument("--categorical", help="covariates to treat as categorical")
    p.add_argument("--input-kind", choices=["auto", "counts", "proportions"], default="auto")
    p.add_argument("--zero-replacement", type=float, default=1.0)


def _graph_flags(p):
    p.add_argument("--graph", help="similarity graph file")
    p.add_argument("--graph-format", choices=["dense", "triplet"], default="dense")


def _solver_flags(p):
    p.add_argument("--mode", choices=list(MODES), default="proposed")
    p.add_argument("--lambda1", type=float, default=1.0)
    p.add_argument("--lambda2", type=float, default=1.0)
    p.add_argument("--lambda", dest="lam", type=float, help="CL penalty (defaults to --lambda2)")
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--phi", type=float, default=1.0)
    p.add_argument("--psi", type=float, default=1.0)
    p.add_argument("--max-iters", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-5, help="primal and dual tolerance")
    p.add_argument("--mu", type=float, default=1.0, help="Weber ADMM step")
    p.add_argument("--eta", type=float, default=1.0, help="Weber zero-sum multiplier step")
    p.add_argument("--center-response", action="store_true",
                   help="subtract the training mean of the response before fitting")


def build_parser():
    parser = argparse.ArgumentParser(prog="compnet", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    subs = {}

    p = sub.add_parser("fit", help="fit per-sample coefficients")
    _common(p)
    _data_flags(p)
    _graph_flags(p)
    _solver_flags(p)
    p.add_argument("--n-clusters", type=int, help="store complete-linkage cluster labels")
    p.add_argument("--tau", type=float, help="store threshold cluster labels")
    p.add_argument("--out", help="output JSON (stdout if omitted)")
    subs["fit"] = p

    p = sub.add_parser("predict", help="predict responses for new samples")
    _common(p)
    _data_flags(p)
    p.add_argument("--model", help="JSON written by `fit`")
    p.add_argument("--neighbors", help="CSV of weights, new samples x training samples")
    p.add_argument("--distance", choices=["gower", "logratio"])
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--train", help="training CSV (needed with --distance)")
    p.add_argument("--mu", type=float, default=1.0)
    p.add_argument("--eta", type=float, default=1.0)
    p.add_argument("--out", help="CSV id,predicted_response (stdout if omitted)")
    p.add_argument("--coef-out", help="optional CSV of per-sample coefficient vectors")
    subs["predict"] = p

    p = sub.add_parser("cv", help="choose penalties by cross-validation")
    _common(p)
    _data_flags(p)
    _graph_flags(p)
    _solver_flags(p)
    p.add_argument("--k", type=int, default=5, help="number of folds")
    p.add_argument("--loocv", action="store_true")
    p.add_argument("--grid-l1", help="comma-separated lambda1 values")
    p.add_argument("--grid-l2", help="comma-separated lambda2 values")
    p.add_argument("--emit-scatter", help="CSV observed,predicted at the best cell")
    p.add_argument("--out", help="report JSON (stdout if omitted)")
    subs["cv"] = p

    p = sub.add_parser("simulate", help="synthetic three-cluster benchmark")
    _common(p)
    p.add_argument("--p", type=int, default=30)
    p.add_argument("--pr", type=float, default=0.99, help="edge keep probability")
    p.add_argument("--replicates", type=int, default=10)
    p.add_argument("--methods", default="proposed,snl,cl")
    p.add_argument("--k", type=int, default=5, help="CV folds")
    p.add_argument("--grid-l1")
    p.add_argument("--grid-l2")
    p.add_argument("--max-iters", type=int, default=2000, help="ADMM iteration cap per fit")
    p.add_argument("--records", help="optional per-replicate CSV")
    p.add_argument("--out", help="summary CSV (stdout if omitted)")
    subs["simulate"] = p

    p = sub.add_parser("graph", help="build a k-NN similarity graph")
    _common(p)
    _data_flags(p)
    p.add_argument("--distance", choices=["gower", "logratio"], default="logratio")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--graph-format", choices=["dense", "triplet"], default="dense")
    p.add_argument("--out", help="graph file (stdout if omitted)")
    subs["graph"] = p

    p = sub.add_parser("report", help="thresholded coefficient summary")
    _common(p)
    p.add_argument("--model", help="JSON written by `fit`")
    p.add_argument("--threshold", type=float, default=0.05)
    p.add_argument("--n-clusters", type=int)
    p.add_argument("--coefficients", choices=["b", "w"], default="b")
    p.add_argument("--table", help="optional CSV of the thresholded coefficients")
    p.add_argument("--out", help="report JSON (stdout if omitted)")
    subs["report"] = p
    return parser, subs


def load_config(path) -> dict:
    text = Path(path).read_bytes()
    if str(path).endswith(".json"):
        cfg = json.loads(text)
    else:
        cfg = tomllib.loads(text.decode("utf-8"))
    if not isinstance(cfg, dict):
        raise ValueError("config file must hold a table of flag values")
    return {k.replace("-", "_"): v for k, v in cfg.items()}


def parse_args(argv):
    parser, subs = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        with stage("config"):
            cfg = load_config(args.config)
            sub = subs[args.command]
            known = {a.dest for a in sub._actions} - {"help", "config"}
            if "lambda" in cfg:
                cfg["lam"] = cfg.pop("lambda")
            unknown = sorted(set(cfg) - known)
            if unknown:
                raise ValueError(f"unknown config keys for {args.command}: {unknown}")
            for key, val in cfg.items():
                if isinstance(val, list):
                    cfg[key] = ",".join(str(v) for v in val)
            sub.set_defaults(**cfg)
            args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------- helpers


def _need(args, *names):
    missing = [f"--{n.replace('_', '-')}" for n in names if getattr(args, n, None) is None]
    if missing:
        raise ValueError(f"{args.command} requires {', '.join(missing)}")


def _resolve_seed(args) -> int:
    if args.seed is None:
        args.seed = int(np.random.SeedSequence().entropy % (2**31))
        print(f"seed: {args.seed}", file=sys.stderr)
    return args.seed


def _read_data(args, path=None, response="default"):
    path = path or args.data
    if response == "default":
        response = getattr(args, "response", None)
        if response is not None and response not in pd.read_csv(path, nrows=0).columns:
            response = None
    counts = {"auto": None, "counts": True, "proportions": False}[args.input_kind]
    return read_dataset(path, response, _names(args.features), _names(args.covariates),
                        args.id_column, counts, args.zero_replacement, _names(args.categorical))


def _solver_config(args) -> SolverConfig:
    return SolverConfig(lambda1=args.lambda1, lambda2=args.lambda2, rho=args.rho, phi=args.phi,
                        psi=args.psi, max_iters=args.max_iters, tol_primal=args.tol,
                        tol_dual=args.tol, zero_sum=(args.mode == "proposed"),
                        trace_objective=True)


def _emit_json(obj, path):
    text = json.dumps(obj, indent=2, allow_nan=True) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _emit_csv(df: pd.DataFrame, path):
    if path:
        df.to_csv(path, index=False, float_format=CSV_FLOAT)
    else:
        df.to_csv(sys.stdout, index=False, float_format=CSV_FLOAT)


def _load_graph(args, n):
    if args.mode == "cl":
        return np.zeros((n, n))
    if args.graph is None:
        raise ValueError(f"--graph is required for mode {args.mode}")
    r = graphs.read_graph(args.graph, args.graph_format, n)
    if r.shape != (n, n):
        raise ValueError(f"graph is {r.shape[0]}x{r.shape[1]} but the data has {n} samples")
    return r


# ---------------------------------------------------------------- subcommands


def cmd_fit(args):
    with stage("config"):
        _need(args, "data")
        config = _solver_config(args)
        if args.n_clusters is not None and args.tau is not None:
            raise ValueError("give at most one of --n-clusters and --tau")
    with stage("read"):
        data = _read_data(args)
        if not np.all(np.isfinite(data.y)):
            raise ValueError(f"response column {args.response!r} missing or not finite")
        r = _load_graph(args, data.n)
    with stage("solve"):
        z = log_transform(data)
        shift = float(data.y.mean()) if args.center_response else 0.0
        y = data.y - shift
        if args.mode == "cl":
            lam = args.lambda2 if args.lam is None else args.lam
            model = fit_cl(z, y, lam, config)
        else:
            model = fit_arrays(z, y, r, config)
            if args.n_clusters is not None:
                model.cluster_labels = extract_clusters(model.w, n_clusters=args.n_clusters)
            elif args.tau is not None:
                model.cluster_labels = extract_clusters(model.w, tau=args.tau)
    out = model.to_json()
    out.update(feature_names=list(data.feature_names), sample_ids=list(data.sample_ids),
               response_center=shift, weber={"mu": args.mu, "eta": args.eta})
    if not out["converged"]:
        log.warning("solver stopped at max_iters without meeting the tolerance")
    with stage("write"):
        _emit_json(out, args.out)
    return EXIT_OK


def _load_model(path) -> dict:
    model = json.loads(Path(path).read_text(encoding="utf-8"))
    for key in ("w", "mode", "feature_names"):
        if key not in model:
            raise ValueError(f"model file lacks {key!r}")
    return model


def cmd_predict(args):
    with stage("config"):
        _need(args, "model", "data")
        if (args.neighbors is None) == (args.distance is None) and not _is_shared(args):
            raise ValueError("give exactly one of --neighbors or --distance")
        if args.distance is not None:
            _need(args, "train")
    with stage("read"):
        model = _load_model(args.model)
        feats = ",".join(model["feature_names"])
        args.features = feats
        new = _read_data(args)
        anchors = np.asarray(model["w"], dtype=float)
        mode = model["mode"]
        if mode != "cl":
            if args.neighbors is not None:
                weights = np.loadtxt(args.neighbors, delimiter=",", ndmin=2)
            else:
                train = _read_data(args, path=args.train)
                weights = _neighbor_rows(args, new, train)
            if weights.shape != (new.n, anchors.shape[0]):
                raise ValueError(f"neighbor weights must be {new.n}x{anchors.shape[0]}")
            if np.any(weights < 0) or not np.all(np.isfinite(weights)):
                raise ValueError("neighbor weights must be finite and nonnegative")
        else:
            weights = None
    with stage("solve"):
        z = log_transform(new)
        if mode == "cl":
            fit = ClFit(anchors[0], np.asarray(model["b"][0]), 0, True, [], 0.0)
            y_hat, coefs, isolated = predict_new(fit, mode, z, None)
        else:
            cfg = WeberConfig(mu=args.mu, eta=args.eta, zero_sum=(mode == "proposed"))
            y_hat, coefs, isolated = predict_new(
                _AnchorModel(anchors), mode, z, weights, cfg)
        y_hat = y_hat + float(model.get("response_center", 0.0))
    for q in np.flatnonzero(isolated):
        log.warning("sample %s has no neighbours; used the mean coefficient row",
                    new.sample_ids[q])
    with stage("write"):
        _emit_csv(pd.DataFrame({"id": new.sample_ids, "predicted_response": y_hat}), args.out)
        if args.coef_out:
            table = pd.DataFrame(coefs, columns=model["feature_names"])
            table.insert(0, "id", new.sample_ids)
            _emit_csv(table, args.coef_out)
    return EXIT_OK


def _is_shared(args):
    try:
        return json.loads(Path(args.model).read_text(encoding="utf-8")).get("shared", False)
    except (OSError, ValueError):
        return False


class _AnchorModel:
    """Duck-typed stand-in for a fitted multi-task model (only ``w`` is read)."""

    def __init__(self, w):
        self.w = w


def _neighbor_rows(args, new, train):
    if args.distance == "logratio":
        d = graphs.aitchison_cross(new, train)
    else:
        if train.covariates is None:
            raise ValueError("--distance gower needs --covariates")
        ranges = graphs.numeric_ranges(train.covariates)
        d = graphs.gower_cross(new.covariates, train.covariates, ranges)
    return graphs.knn_rows(d, args.k)


def cmd_cv(args):
    with stage("config"):
        _need(args, "data")
        base = replace(_solver_config(args), trace_objective=False)
        grid = CvGrid(tuple(_floats(args.grid_l1)) if args.grid_l1 else CvGrid.default().lambda1_values,
                      tuple(_floats(args.grid_l2)) if args.grid_l2 else CvGrid.default().lambda2_values)
        weber = WeberConfig(mu=args.mu, eta=args.eta)
        if args.threads < 1:
            raise ValueError("--threads must be positive")
        seed = None if args.loocv else _resolve_seed(args)
    with stage("read"):
        data = _read_data(args)
        if not np.all(np.isfinite(data.y)):
            raise ValueError(f"response column {args.response!r} missing or not finite")
        r = _load_graph(args, data.n)
    with stage("solve"):
        if args.loocv:
            report, preds = loocv(data, r, grid, args.mode, base, weber, args.threads,
                                  args.center_response)
        else:
            report = kfold_cv(data, r, grid, args.k, args.mode, seed, base, weber,
                              n_jobs=args.threads, center_response=args.center_response)
            preds = report.best_predictions
    out = report.to_json()
    out["r_squared"] = _safe_r2(data.y, preds)
    out["mse"] = float(np.mean((data.y - preds) ** 2))
    with stage("write"):
        _emit_json(out, args.out)
        if args.emit_scatter:
            _emit_csv(pd.DataFrame({"observed": data.y, "predicted": preds}), args.emit_scatter)
    return EXIT_OK


def _safe_r2(y, pred):
    try:
        return r_squared(y, pred)
    except ValueError:
        return None


def cmd_simulate(args):
    with stage("config"):
        seed = _resolve_seed(args)
        methods = _names(args.methods)
        bad = [m for m in methods if m not in MODES]
        if bad or not methods:
            raise ValueError(f"unknown methods {bad}; choose from {list(MODES)}")
        spec = SimSpec(p=args.p, p_keep=args.pr, replicates=args.replicates, seed=seed)
        grid = None
        if args.grid_l1 or args.grid_l2:
            default = CvGrid.default()
            grid = CvGrid(tuple(_floats(args.grid_l1)) if args.grid_l1 else default.lambda1_values,
                          tuple(_floats(args.grid_l2)) if args.grid_l2 else default.lambda2_values)
        if args.threads < 1:
            raise ValueError("--threads must be positive")
        solver = SolverConfig(max_iters=args.max_iters, trace_objective=False)
    with stage("solve"):
        rows, records = run_benchmark(spec, grid, methods, cv_folds=args.k, n_jobs=args.threads,
                                      solver_defaults=solver)
    with stage("write"):
        _emit_csv(pd.DataFrame(rows, columns=["method", "p", "p_keep", "mse_mean", "mse_sd",
                                              "replicates"]), args.out)
        if args.records:
            flat = [{"replicate": r["replicate"], "method": r["method"], "mse": r["mse"],
                     "lambda1": r.get("best", (np.nan, np.nan))[0],
                     "lambda2": r.get("best", (np.nan, np.nan))[1],
                     "error": r.get("error", "")} for r in records]
            _emit_csv(pd.DataFrame(flat), args.records)
    return EXIT_OK


def cmd_graph(args):
    with stage("config"):
        _need(args, "data")
        if args.distance == "gower" and not args.covariates:
            raise ValueError("--distance gower needs --covariates")
    with stage("read"):
        data = _read_data(args)
    with stage("solve"):
        if args.distance == "gower":
            d = graphs.gower_distance(data.covariates)
        else:
            d = graphs.aitchison_distance(data)
        r = graphs.knn_graph(d, args.k)
    with stage("write"):
        if args.out:
            graphs.write_graph(args.out, r, args.graph_format)
        else:
            graphs.write_graph(sys.stdout, r, args.graph_format)
    return EXIT_OK


def cmd_report(args):
    with stage("config"):
        _need(args, "model")
        if args.threshold < 0:
            raise ValueError("--threshold must be nonnegative")
    with stage("read"):
        model = _load_model(args.model)
        coefs = np.asarray(model[args.coefficients], dtype=float)
        labels = model.get("clusters")
    with stage("solve"):
        bundle = build_report(coefs, args.threshold, args.n_clusters, model["feature_names"],
                            labels)
    out = bundle.to_json()
    ids = model.get("sample_ids") or [str(i + 1) for i in range(coefs.shape[0])]
    out["sample_order"] = [ids[i] for i in bundle.order] if not model.get("shared") else ids[:1]
    with stage("write"):
        _emit_json(out, args.out)
        if args.table:
            table = pd.DataFrame(bundle.thresholded[bundle.order], columns=model["feature_names"])
            table.insert(0, "id", out["sample_order"])
            _emit_csv(table, args.table)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv, "simulate": cmd_simulate,
            "graph": cmd_graph, "report": cmd_report}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        return COMMANDS[args.command](args)
    except CliError as exc:
        sys.stderr.write(json.dumps(exc.payload(), default=float) + "\n")
        return exc.code
    except SystemExit as exc:  # argparse
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    except Exception as exc:  # last resort, still machine-readable
        sys.stderr.write(json.dumps({"stage": "internal", "message": repr(exc),
                                     "exit_code": EXIT_INTERNAL}) + "\n")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
