"""Command-line interface.

Every command writes its outputs plus a ``<output>.manifest.json`` recording
the command line, seed, inputs, outputs and library version. Exit codes: 0
on success, 1 on a numerical failure, 2 on invalid input. The default seed
is read from ``TAILPROJ_SEED`` (0 when unset).
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import json
import logging
import os
import sys
import warnings

import numpy as np
import pandas as pd

from . import __version__
from .gam.design import GamFormula
from .gam.fit import ConvergenceError
from .margins import (empirical_pit, fit_station_margins, read_station_csv,
                      stations_to_frame, to_scale)
from .likelihoods import DependenceFit, fit_dependence, get_regime
from .projection import (DegenerateSampleError, as_direction, max_projection,
                         min_projection, min_projection_inverted)
from .simulators import ScenarioError, load_scenario, simulate_scenario
from .theory import grid_theta_rho

log = logging.getLogger("tailproj")

EXIT_OK, EXIT_NUMERIC, EXIT_INPUT = 0, 1, 2
SEED_ENV = "TAILPROJ_SEED"


class InputError(ValueError):
    pass


def default_seed():
    v = os.environ.get(SEED_ENV)
    try:
        return int(v) if v not in (None, "") else 0
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {v!r}") from None


def write_manifest(out_path, command, argv, seed=None, inputs=(), outputs=(),
                   config=None):
    man = {"command": command, "argv": list(argv), "config": config,
           "seed": seed, "inputs": [str(p) for p in inputs],
           "outputs": [str(p) for p in outputs], "version": __version__,
           "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat()}
    path = f"{out_path}.manifest.json"
    with open(path, "w") as fh:
        json.dump(man, fh, indent=2)
    return path


def _write_csv(df, path):
    df.to_csv(path, index=False, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n",
              encoding="utf-8")


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InputError(f"expected comma-separated numbers, got {text!r}") from None


def _int_range(text):
    if ".." in text:
        a, b = text.split("..")
        return list(range(int(a), int(b) + 1))
    return [int(v) for v in text.split(",")]


def _read_formula(path):
    if path is None:
        return GamFormula([])
    with open(path) as fh:
        try:
            return GamFormula.from_dict(json.load(fh))
        except (json.JSONDecodeError, TypeError) as exc:
            raise InputError(f"bad formula file: {exc}") from None


def _value_columns(df, columns):
    if columns:
        cols = columns.split(",")
    else:
        cols = [c for c in df.columns if c.startswith("x") and c[1:].isdigit()]
    missing = [c for c in cols if c not in df.columns]
    if missing:
        raise InputError(f"data lacks value column(s) {missing}")
    if len(cols) < 2:
        raise InputError("need at least two value columns")
    return cols


def _prepare(df, cols, scale, regime):
    x = df[cols].to_numpy(float)
    if scale == "raw":
        reg = get_regime(regime)
        u = np.column_stack([empirical_pit(x[:, j]) for j in range(x.shape[1])])
        return to_scale(u, reg.scale), None
    return x, scale


def _prediction_grid(formula, cov, size=50):
    names = formula.covariate_names
    if not names:
        return None
    factors = {t.covariate for t in formula.terms if t.type == "factor"}
    factors |= {t.by for t in formula.terms if t.by}
    numeric = [c for c in names if c not in factors]
    grid = pd.DataFrame({"_": [0]})
    for i, c in enumerate(numeric):
        v = np.asarray(cov[c], float)
        vals = np.linspace(v.min(), v.max(), size) if i == 0 else [float(np.median(v))]
        grid = grid.merge(pd.DataFrame({c: vals}), how="cross")
    for c in sorted(factors):
        grid = grid.merge(pd.DataFrame({c: sorted({str(x) for x in cov[c]})}),
                          how="cross")
    return grid.drop(columns="_")


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args):
    spec = load_scenario(args.scenario)
    seed = args.seed if args.seed is not None else spec.get("seed", default_seed())
    df = simulate_scenario(spec, n=args.n, seed=seed)
    _write_csv(df, args.out)
    return dict(seed=seed, inputs=[args.scenario], outputs=[args.out],
                config=args.scenario)


def _fit_from_args(args, df):
    cols = _value_columns(df, args.columns)
    formula = _read_formula(args.formula)
    for c in formula.covariate_names:
        if c not in df.columns:
            raise InputError(f"data lacks covariate column {c!r}")
    cov = {c: df[c].to_numpy() for c in formula.covariate_names}
    x, scale = _prepare(df, cols, args.scale, args.regime)
    omega = _floats(args.direction) if args.direction else None
    fit = fit_dependence(x, omega=omega, regime=args.regime,
                         quantile_level=args.quantile, formula=formula,
                         covariates=cov, link=args.link, scale=scale)
    return fit, cov, x, formula


def cmd_fit_dep(args):
    df = pd.read_csv(args.data)
    fit, cov, _, formula = _fit_from_args(args, df)
    fit.meta = {"data": os.path.abspath(args.data), "columns": args.columns,
                "scale": args.scale, "formula_path": args.formula,
                "direction": args.direction}
    grid = _prediction_grid(formula, cov)
    pred = fit.predict(None if grid is None else {c: grid[c].to_numpy() for c in grid},
                       n=1 if grid is None else len(grid))
    json_path, csv_path = f"{args.out}.json", f"{args.out}.csv"
    with open(json_path, "w") as fh:
        fh.write(fit.to_json(indent=1))
    _write_csv(pred, csv_path)
    summ = fit.regime.summary
    if summ in pred and grid is None:
        print(f"{summ} = {pred[summ].iloc[0]:.6f}")
    if fit.boundary:
        print("warning: boundary fit", file=sys.stderr)
    return dict(inputs=[args.data] + ([args.formula] if args.formula else []),
                outputs=[json_path, csv_path], config=args.formula)


def cmd_bootstrap(args):
    from .harness.bootstrap import bootstrap_dependence
    with open(args.fit) as fh:
        fit = DependenceFit.from_json(fh.read())
    meta = fit.meta
    if "data" not in meta:
        raise InputError("fit file carries no data provenance; refit with fit-dep")
    df = pd.read_csv(meta["data"])
    cols = _value_columns(df, meta.get("columns"))
    formula = fit.formula
    cov = {c: df[c].to_numpy() for c in formula.covariate_names}
    x, scale = _prepare(df, cols, meta.get("scale", fit.regime.scale), fit.regime)
    keys = None
    if args.block_cols:
        bc = args.block_cols.split(",")
        missing = [c for c in bc if c not in df.columns]
        if missing:
            raise InputError(f"data lacks block column(s) {missing}")
        keys = df[bc].astype(str).agg("|".join, axis=1).to_numpy()
    grid = _prediction_grid(formula, cov)
    newdata = None if grid is None else {c: grid[c].to_numpy() for c in grid}
    seed = args.seed if args.seed is not None else default_seed()
    tab, res = bootstrap_dependence(
        x, covariates=cov or None, newdata=newdata, B=args.B, block_keys=keys,
        seed=seed, jobs=args.jobs, omega=fit.omega, regime=fit.regime,
        quantile_level=fit.quantile_level, formula=formula,
        link=fit.link.name, scale=scale)
    _write_csv(tab, args.out)
    print(f"{res.redraws} resamples redrawn", file=sys.stderr)
    return dict(seed=seed, inputs=[args.fit, meta["data"]], outputs=[args.out])


def cmd_study(args):
    from .harness.study import StudyConfig, dummy_factor_study, rmse_study
    with open(args.config) as fh:
        try:
            cfg = StudyConfig.from_dict(json.load(fh))
        except (TypeError, json.JSONDecodeError) as exc:
            raise InputError(f"bad study config: {exc}") from None
    if args.seed is not None:
        cfg.seed = args.seed
    if args.repetitions:
        cfg.repetitions = args.repetitions
    if args.paper_scale:
        # full replication count; n follows from the exceedances per cell
        cfg.repetitions = 500
        cfg.n = None
    if args.dummy_factor:
        rep = dummy_factor_study(cfg)
        _write_csv(rep.curves, args.out)
        print(f"offset {rep.offset:.4f} (se {rep.offset_se:.4f}); coverage "
              f"{rep.coverage}; edf {rep.edf_with_factor:.2f} vs "
              f"{rep.edf_without_factor:.2f}")
    else:
        res = rmse_study(cfg, jobs=args.jobs)
        _write_csv(res.table, args.out)
        with open(f"{args.out}.log.json", "w") as fh:
            json.dump({"failures": {str(k): v for k, v in res.failures.items()},
                       "runs": res.run_log}, fh, indent=1)
        means = res.table.groupby("threshold", sort=False)["rmse"].mean()
        for lv, v in means.items():
            print(f"threshold {lv}: mean RMSE {v:.5f}")
    return dict(seed=cfg.seed, inputs=[args.config], outputs=[args.out],
                config=args.config)


def cmd_pairs(args):
    from .harness.pairs import pipeline_bootstrap, station_pipeline
    stations = read_station_csv(args.stations)
    if len(stations) < 2:
        raise InputError("the pairwise pipeline needs at least 2 stations")
    res = station_pipeline(stations, regime=args.regime, model=args.model,
                           standardized=args.standardized,
                           resolution_km=args.resolution,
                           max_distance_km=args.max_distance,
                           same_type=args.same_type,
                           quantile_level=args.quantile, link=args.link)
    curves = res.curves
    seed = args.seed if args.seed is not None else default_seed()
    if args.bootstrap:
        curves, _ = pipeline_bootstrap(res, B=args.bootstrap, seed=seed,
                                       jobs=args.jobs)
    json_path, csv_path = f"{args.out}.json", f"{args.out}.csv"
    with open(json_path, "w") as fh:
        fh.write(res.fit.to_json(indent=1))
    _write_csv(curves, csv_path)
    return dict(seed=seed, inputs=[args.stations], outputs=[json_path, csv_path])


def cmd_theta_r(args):
    rho = _floats(args.rho_grid) if args.rho_grid else None
    tab = grid_theta_rho(_int_range(args.q), rho)
    _write_csv(tab, args.out)
    return dict(outputs=[args.out])


def cmd_project(args):
    omega = as_direction(_floats(args.direction))
    fn = {"min": min_projection, "max": max_projection,
          "min_inverted": min_projection_inverted}[args.kind]
    first = True
    n = 0
    with open(args.out, "w", newline="", encoding="utf-8") as out:
        for chunk in pd.read_csv(args.data, chunksize=args.chunksize):
            cols = _value_columns(chunk, args.columns)
            if len(cols) != omega.size:
                raise InputError(f"{len(cols)} value columns but a direction "
                                 f"of length {omega.size}")
            m = fn(chunk[cols].to_numpy(float), omega)
            ids = chunk["row_id"] if "row_id" in chunk else np.arange(n, n + len(chunk))
            pd.DataFrame({"row_id": ids, "m": m}).to_csv(
                out, index=False, header=first, lineterminator="\r\n")
            first = False
            n += len(chunk)
    return dict(inputs=[args.data], outputs=[args.out])


def cmd_margins(args):
    stations = read_station_csv(args.stations)
    fits, std = fit_station_margins(stations, target=args.target)
    _write_csv(stations_to_frame(std), args.out)
    fits_path = f"{args.out}.fits.json"
    with open(fits_path, "w") as fh:
        json.dump({k: f.to_dict() for k, f in fits.items()}, fh, indent=1)
    return dict(inputs=[args.stations], outputs=[args.out, fits_path])


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="tailproj", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a scenario to CSV")
    s.add_argument("scenario")
    s.add_argument("--n", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    regimes = ["asymptotic_dependence", "asymptotic_independence_general",
               "inverted_max_stable", "ad", "ai", "ims"]
    s = sub.add_parser("fit-dep", help="covariate-dependent dependence fit")
    s.add_argument("data")
    s.add_argument("formula", nargs="?")
    s.add_argument("--regime", default="asymptotic_dependence", choices=regimes)
    s.add_argument("--direction", help="comma-separated weights")
    s.add_argument("--quantile", type=float)
    s.add_argument("--link", default="restricted_logit",
                   choices=["restricted_logit", "log"])
    s.add_argument("--columns", help="value columns (default x1, x2, ...)")
    s.add_argument("--scale", default=None,
                   choices=["frechet", "exponential", "uniform", "pareto", "raw"],
                   help="scale of the value columns (default: the regime's)")
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_fit_dep)

    s = sub.add_parser("bootstrap", help="percentile bootstrap of a fit")
    s.add_argument("fit")
    s.add_argument("--B", type=int, default=300)
    s.add_argument("--block-cols", help="columns defining resampling blocks")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_bootstrap)

    s = sub.add_parser("study", help="Monte-Carlo RMSE study")
    s.add_argument("config")
    s.add_argument("--seed", type=int)
    s.add_argument("--repetitions", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--paper-scale", action="store_true",
                   help="500 repetitions, sample size from the exceedances per cell")
    s.add_argument("--dummy-factor", action="store_true")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_study)

    s = sub.add_parser("pairs", help="pairwise station pipeline")
    s.add_argument("stations")
    s.add_argument("--regime", default="asymptotic_dependence", choices=regimes)
    s.add_argument("--model", default="distance_only",
                   choices=["distance_only", "full_t_d_type"])
    s.add_argument("--standardized", action="store_true",
                   help="values already on unit Frechet margins")
    s.add_argument("--resolution", type=float, default=10.0)
    s.add_argument("--max-distance", type=float)
    s.add_argument("--same-type", action="store_true")
    s.add_argument("--quantile", type=float)
    s.add_argument("--link", default="log", choices=["restricted_logit", "log"])
    s.add_argument("--bootstrap", type=int, default=0, metavar="B")
    s.add_argument("--seed", type=int)
    s.add_argument("--jobs", type=int, default=1)
    s.add_argument("--out", required=True, help="output prefix")
    s.set_defaults(func=cmd_pairs)

    s = sub.add_parser("theta-r", help="sub-asymptotic theta(r) grid")
    s.add_argument("--rho-grid", help="comma-separated correlations")
    s.add_argument("--q", default="1..10", help="levels, e.g. 1..10 or 1,2,5")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_theta_r)

    s = sub.add_parser("project", help="stream min/max projections of a CSV")
    s.add_argument("data")
    s.add_argument("--direction", required=True)
    s.add_argument("--kind", default="min", choices=["min", "max", "min_inverted"])
    s.add_argument("--columns")
    s.add_argument("--chunksize", type=int, default=100_000)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_project)

    s = sub.add_parser("margins", help="GEV GAM margins per station")
    s.add_argument("stations")
    s.add_argument("--target", default="frechet",
                   choices=["frechet", "exponential", "uniform", "pareto"])
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_margins)
    return p


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    previous = warnings.formatwarning
    warnings.formatwarning = lambda msg, cat, *a, **k: f"warning: {msg}\n"
    try:
        info = args.func(args)
    except (ConvergenceError, FloatingPointError, np.linalg.LinAlgError,
            RuntimeError) as exc:
        print(f"error: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (InputError, ScenarioError, DegenerateSampleError, ValueError,
            KeyError, FileNotFoundError, pd.errors.ParserError,
            pd.errors.EmptyDataError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return EXIT_INPUT
    finally:
        warnings.formatwarning = previous
    out = getattr(args, "out", None)
    if out:
        write_manifest(out, args.command, argv, seed=info.get("seed"),
                       inputs=info.get("inputs", ()),
                       outputs=info.get("outputs", ()), config=info.get("config"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
