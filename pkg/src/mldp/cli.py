"""Command-line entry point: ``mldp {fit,predict,evaluate,simulate,experiment,synth}``.

Exit codes: 0 success, 1 runtime or numeric failure, 2 configuration or
input error. Error messages go to standard error and name the failing stage.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np
import pandas as pd

from . import __version__
from .components import BasePrior
from .config import RunConfig
from .data import Preprocessor, Schema, infer_levels, load_csv, split
from .errors import InputError, IngestionError, MLDPError, StateError
from .gibbs import Trace, run
from .kernels import BACKEND
from .metrics import METRICS, EvalReport, format_table
from .multiindex import FactorConfig, enumerate_bases, enumerate_groups
from .predict import predict_many
from .prior import moment_check, sample_latent_factors, weight_matrix

log = logging.getLogger("mldp")


class StageError(Exception):
    """Wraps a library error with the pipeline stage it came from."""

    def __init__(self, stage: str, exc: BaseException):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


class _Stage:
    def __init__(self, name):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, (StageError, KeyboardInterrupt, SystemExit)):
            raise StageError(self.name, ev) from ev
        return False


def _clean(o):
    """JSON-safe copy: non-finite floats become null, numpy scalars become Python ones."""
    if isinstance(o, dict):
        return {k: _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, np.ndarray):
        return _clean(o.tolist())
    if isinstance(o, (np.floating, float)):
        return float(o) if math.isfinite(o) else None
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.bool_):
        return bool(o)
    return o


def write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_clean(obj), fh, indent=2, sort_keys=True)
        fh.write("\n")


# --------------------------------------------------------------------------
# library-level pipeline (the commands below are thin wrappers)


def make_preprocessor(cfg: RunConfig, table: pd.DataFrame, levels=None) -> Preprocessor:
    schema = cfg.data.schema()
    levels = levels or cfg.data.levels or infer_levels(table, schema.factors)
    bases = cfg.model.bases_per_group or [2] * len(schema.factors)
    pp = cfg.preprocess
    return Preprocessor(schema, {k: [str(v) for v in vs] for k, vs in levels.items()}, list(bases),
                        pp.pca_k, pp.scale, pp.log1p_response, pp.coding, pp.center_response)


def fit_table(cfg: RunConfig, table: pd.DataFrame, levels=None, bases_per_group=None):
    """Preprocess ``table`` and run the sampler; returns (trace, preprocessor)."""
    with _Stage("preprocess"):
        pre = make_preprocessor(cfg, table, levels)
        if bases_per_group is not None:
            pre.bases_per_group = list(bases_per_group)
        pre.fit(table)
        ds = pre.transform(table)
        flat = ds.flatten()
        if len(flat) == 0:
            raise InputError("no training rows")
        prior = BasePrior.from_data(flat.X, **cfg.model.prior)
    with _Stage("sample"):
        trace = run(ds, ds.cfg, cfg.sampler, cfg.model.hyper(), prior)
    return trace, pre


def predict_table(trace: Trace, pre: Preprocessor, table: pd.DataFrame, prior_mass: bool = True) -> np.ndarray:
    """Back-transformed predictions for every row of ``table``, in row order."""
    with _Stage("predict"):
        ds = pre.transform(table)
        flat = ds.flatten()
        out = np.empty(len(table))
        if len(table):
            mean, _ = predict_many(trace, flat.X, flat.group, prior_mass)
            out[ds.row_order()] = mean
        return pre.inverse_response(out)


def model_document(trace: Trace, pre: Preprocessor) -> dict:
    s = pre.schema
    return {"version": __version__,
            "schema": {"factors": s.factors, "response": s.response, "features": s.features,
                       "categorical": s.categorical},
            "preprocessor": pre.to_json(), "trace": trace.meta()}


def load_model(trace_path, model_path=None):
    model_path = model_path or os.path.join(os.path.dirname(os.path.abspath(trace_path)), "model.json")
    for p in (trace_path, model_path):
        if not os.path.exists(p):
            raise IngestionError(f"file not found: {p}")
    with open(model_path) as fh:
        try:
            doc = json.load(fh)
        except ValueError as exc:
            raise IngestionError(f"{model_path}: not valid JSON ({exc})") from exc
    schema = Schema(**doc["schema"])
    pre = Preprocessor.from_json(schema, doc["preprocessor"])
    trace = Trace.read(trace_path, doc["trace"])
    if not trace.snapshots:
        raise StateError(f"{trace_path}: trace has no snapshots")
    return trace, pre


def run_repetition(cfg: RunConfig, table: pd.DataFrame, levels, r: int) -> dict:
    """One split of the repeated-split protocol: fit on the train part, score the test part."""
    seed = cfg.seed + r
    rcfg = cfg.with_seed(seed)
    metric = METRICS[cfg.experiment.metric]
    with _Stage("split"):
        train, test = split(table, cfg.experiment.fraction, seed)
    y_true = test[cfg.data.response].to_numpy(dtype=float)
    out = {"rep": r, "seed": seed, "n_train": len(train), "n_test": len(test)}
    models = [("mldp", None)]
    if cfg.experiment.baseline:
        models.append(("dp", [1] * len(cfg.data.factors)))
    for name, bases in models:
        trace, pre = fit_table(rcfg, train, levels, bases)
        pred = predict_table(trace, pre, test)
        with _Stage("evaluate"):
            out[name] = metric(y_true, pred)
    return out


def run_experiment(cfg: RunConfig, table: pd.DataFrame) -> dict:
    levels = cfg.data.levels or infer_levels(table, cfg.data.factors)
    reps = range(cfg.experiment.repetitions)
    if cfg.experiment.jobs > 1:
        with ProcessPoolExecutor(cfg.experiment.jobs) as ex:
            rows = list(ex.map(run_repetition, *zip(*[(cfg, table, levels, r) for r in reps])))
    else:
        rows = [run_repetition(cfg, table, levels, r) for r in reps]
    reports = {name: EvalReport(cfg.experiment.metric, [row[name] for row in rows], name)
               for name in ("mldp", "dp") if name in rows[0]}
    return {"metric": cfg.experiment.metric, "fraction": cfg.experiment.fraction, "seed": cfg.seed,
            "repetitions": rows, "reports": {k: v.to_json() for k, v in reports.items()}}


def simulate(cfg: RunConfig, n_sims=None):
    """Prior simulation: U from its prior, the group weight matrix and the moment summary."""
    sc = cfg.simulate
    fc = FactorConfig(sc.factors_per_group, sc.bases_per_group)
    h = cfg.model.hyper()
    rng_u, rng_g = (np.random.default_rng(s) for s in np.random.SeedSequence(cfg.seed).spawn(2))
    U = sample_latent_factors(h, fc, rng_u)
    W = weight_matrix(U)
    summary = moment_check(U, h, fc, sc.truncation, n_sims or sc.n_sims, rng_g, sc.threshold)
    summary["factors_per_group"] = list(fc.factors_per_group)
    summary["bases_per_group"] = list(fc.bases_per_group)
    summary["seed"] = cfg.seed
    return fc, U, W, summary


# --------------------------------------------------------------------------
# commands


def _load_config(args) -> RunConfig:
    with _Stage("config"):
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.seed is not None:
            cfg = cfg.with_seed(args.seed)
        # applied together so e.g. a shorter run with a shorter burn-in validates
        over = {k: getattr(args, k) for k in ("iterations", "burn_in", "thin") if getattr(args, k, None) is not None}
        if over:
            cfg = dataclasses.replace(cfg, sampler=dataclasses.replace(cfg.sampler, **over))
        return cfg


def cmd_fit(args) -> int:
    cfg = _load_config(args)
    with _Stage("ingest"):
        table = load_csv(args.data or cfg.data_path(), cfg.data.schema())
    trace, pre = fit_table(cfg, table)
    with _Stage("write"):
        os.makedirs(args.out, exist_ok=True)
        trace.write_ndjson(os.path.join(args.out, "trace.ndjson"))
        trace.write_diagnostics(os.path.join(args.out, "diagnostics.csv"))
        write_json(os.path.join(args.out, "model.json"), model_document(trace, pre))
        report = {"n_samples": len(table), "n_snapshots": len(trace.snapshots),
                  "iterations": cfg.sampler.iterations, "seed": cfg.seed,
                  "u_acceptance": trace.u_acceptance,
                  "final_live_clusters": int(trace.n_live[-1]),
                  "final_log_joint": float(trace.log_joint[-1]),
                  "invariant_checks": trace.invariant_checks}
        write_json(os.path.join(args.out, "fit_report.json"), report)
    print(f"wrote {len(trace.snapshots)} snapshots to {os.path.join(args.out, 'trace.ndjson')}")
    return 0


def cmd_predict(args) -> int:
    with _Stage("load model"):
        trace, pre = load_model(args.trace, args.model)
    with _Stage("ingest"):
        table = load_csv(args.input, pre.schema, require_response=False)
        raw = pd.read_csv(args.input, dtype=str, keep_default_na=False)
    pred = predict_table(trace, pre, table, not args.no_prior_mass)
    with _Stage("write"):
        raw[args.column] = [repr(float(v)) for v in pred]
        raw.to_csv(args.output, index=False)
    return 0


def cmd_evaluate(args) -> int:
    with _Stage("ingest"):
        if not os.path.exists(args.predictions):
            raise IngestionError(f"file not found: {args.predictions}")
        df = pd.read_csv(args.predictions, float_precision="round_trip")
        for c in (args.truth_column, args.pred_column):
            if c not in df.columns:
                raise IngestionError(f"{args.predictions}: missing column {c!r}")
    with _Stage("evaluate"):
        value = METRICS[args.metric](df[args.truth_column].to_numpy(float), df[args.pred_column].to_numpy(float))
    rep = EvalReport(args.metric, [value], "model")
    print(json.dumps(_clean(rep.to_json()), sort_keys=True))
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    with _Stage("simulate"):
        fc, U, W, summary = simulate(cfg, args.n_sims)
    with _Stage("write"):
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "weights.csv"), "w") as fh:
            fh.write("group_flat_index,group,basis_flat_index,basis,weight\n")
            for gi, g in enumerate(enumerate_groups(fc)):
                for bi, b in enumerate(enumerate_bases(fc)):
                    gs = "-".join(map(str, g.indices))
                    bs = "-".join(map(str, b.indices))
                    fh.write(f"{gi},{gs},{bi},{bs},{float(W[gi, bi])!r}\n")
        write_json(os.path.join(args.out, "summary.json"), summary)
    print(f"moment checks {'passed' if summary['all_ok'] else 'FAILED'} for {fc.n_sets} groups")
    return 0


def cmd_experiment(args) -> int:
    cfg = _load_config(args)
    if args.baseline:
        cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, baseline=True))
    if args.jobs:
        cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, jobs=args.jobs))
    if args.repetitions:
        cfg = dataclasses.replace(cfg, experiment=dataclasses.replace(cfg.experiment, repetitions=args.repetitions))
    with _Stage("ingest"):
        table = load_csv(args.data or cfg.data_path(), cfg.data.schema())
    result = run_experiment(cfg, table)
    with _Stage("write"):
        os.makedirs(args.out, exist_ok=True)
        write_json(os.path.join(args.out, "report.json"), result)
    reports = [EvalReport(r["metric"], r["reps"], r["model"]) for r in result["reports"].values()]
    print(format_table(reports))
    return 0


def cmd_synth(args) -> int:
    from . import testkit

    with _Stage("synthesize"):
        if args.fixture == "single":
            spec = testkit.single_component(args.samples_per_group, args.seed or 0)
        else:
            spec = testkit.grid2x2(args.fixture == "grid2x2", args.samples_per_group, args.seed or 0)
        sd = testkit.generate_synthetic(spec)
    with _Stage("write"):
        sd.to_csv(args.out)
        if args.truth:
            pd.DataFrame({"basis": sd.basis, "component": sd.component}).to_csv(args.truth, index=False)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mldp", description="Factor-dependent Dirichlet process mixtures of regressions")
    p.add_argument("--version", action="version", version=f"mldp {__version__} ({BACKEND} kernels)")
    p.add_argument("--seed", type=int, default=None, help="global seed (overrides the config)")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def sampler_flags(sp):
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--burn-in", type=int)
        sp.add_argument("--thin", type=int)

    f = sub.add_parser("fit", help="run the sampler and write a trace")
    f.add_argument("--config", required=True)
    f.add_argument("--data", help="CSV path (overrides data.path)")
    f.add_argument("--out", required=True, help="output directory")
    sampler_flags(f)
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="append posterior-predictive means to a CSV")
    pr.add_argument("--trace", required=True)
    pr.add_argument("--model", help="model.json (default: next to the trace)")
    pr.add_argument("--input", required=True)
    pr.add_argument("--output", required=True)
    pr.add_argument("--column", default="y_hat")
    pr.add_argument("--no-prior-mass", action="store_true",
                    help="drop the new-cluster candidates from the responsibilities")
    pr.set_defaults(func=cmd_predict)

    ev = sub.add_parser("evaluate", help="score a predictions CSV")
    ev.add_argument("--predictions", required=True)
    ev.add_argument("--truth-column", default="y")
    ev.add_argument("--pred-column", default="y_hat")
    ev.add_argument("--metric", choices=sorted(METRICS), default="rmse")
    ev.set_defaults(func=cmd_evaluate)

    si = sub.add_parser("simulate", help="simulate the prior: group weights and moment checks")
    si.add_argument("--config")
    si.add_argument("--out", required=True)
    si.add_argument("--n-sims", type=int)
    si.set_defaults(func=cmd_simulate)

    ex = sub.add_parser("experiment", help="repeated random-split evaluation")
    ex.add_argument("--config", required=True)
    ex.add_argument("--data")
    ex.add_argument("--out", required=True)
    ex.add_argument("--baseline", action="store_true", help="also fit the one-basis DP model")
    ex.add_argument("--repetitions", type=int)
    ex.add_argument("--jobs", type=int)
    sampler_flags(ex)
    ex.set_defaults(func=cmd_experiment)

    sy = sub.add_parser("synth", help="write a synthetic fixture as CSV")
    sy.add_argument("--fixture", choices=["grid2x2", "grid2x2-shared", "single"], default="grid2x2")
    sy.add_argument("--samples-per-group", type=int, default=40)
    sy.add_argument("--out", required=True)
    sy.add_argument("--truth", help="optional CSV of true basis and component labels")
    sy.set_defaults(func=cmd_synth)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except StageError as e:
        code = 2 if isinstance(e.exc, (InputError, OSError)) else 1
        kind = type(e.exc).__name__
        print(f"mldp {args.command}: {e.stage} failed ({kind}): {e.exc}", file=sys.stderr)
        return code
    except MLDPError as e:
        print(f"mldp {args.command}: {e}", file=sys.stderr)
        return 2 if isinstance(e, InputError) else 1


if __name__ == "__main__":
    sys.exit(main())
