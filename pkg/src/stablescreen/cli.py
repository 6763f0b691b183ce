"""Command-line entry point: ``gen``, ``solve``, ``sweep`` and ``plotdata``.

Exit codes: 0 success, 2 configuration error, 3 at least one run hit the
iteration cap.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import bench
from .bench import ConfigError, ExperimentConfig

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NOT_CONVERGED = 3


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _add_config_flags(p):
    p.add_argument("--config", help="JSON file with flat key/value settings; flags override it")
    p.add_argument("--n", type=int, help="signal dimension N")
    p.add_argument("--k", type=int, help="number of atoms K")
    p.add_argument("--scenario", choices=["easy", "moderate", "hard"])
    p.add_argument("--lambda-ratio", type=float, help="single lambda / lambda_max")
    p.add_argument("--lambda-grid", help="comma-separated ratios, or an integer count of log-spaced points")
    p.add_argument("--tol", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--solver", choices=["ista", "fista"])
    p.add_argument("--rule", help="static, dynamic or gap (stable-* accepted)")
    p.add_argument("--ranks", type=_ints, help="comma-separated Kronecker term counts")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--screen-interval", type=int)
    p.add_argument("--precompute-aty", action="store_true", default=None)
    p.add_argument("--max-iter", type=int)
    p.add_argument("--jobs", type=int)
    p.add_argument("--factor-shape", type=_ints, help="n1,k1 when N or K is not a perfect square")


def _grid(text):
    text = text.strip()
    if "," not in text and text.isdigit():
        return bench.log_grid(int(text))
    return tuple(_floats(text))


def config_from_args(args):
    values = {
        "n": args.n,
        "k": args.k,
        "scenario": args.scenario,
        "tol": args.tol,
        "gamma": args.gamma,
        "solver": args.solver,
        "rule": args.rule,
        "ranks": args.ranks,
        "trials": args.trials,
        "seed": args.seed,
        "out": args.out,
        "screen_interval": args.screen_interval,
        "precompute_aty": args.precompute_aty,
        "max_iter": args.max_iter,
        "jobs": args.jobs,
        "factor_shape": args.factor_shape,
    }
    if args.lambda_grid is not None:
        values["lambda_ratios"] = _grid(args.lambda_grid)
    if args.lambda_ratio is not None:
        values["lambda_ratios"] = (args.lambda_ratio,)
    if args.config:
        return ExperimentConfig.from_file(args.config, values)
    return ExperimentConfig.from_mapping(values)


def cmd_gen(config, args):
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    A, y, x_true = bench.generate_problem(config, args.trial)
    A.to_blob(out / "dictionary.bin")
    np.savetxt(out / "y.csv", y, fmt="%.17g")
    np.savetxt(out / "x_true.csv", x_true, fmt="%.17g")
    print(f"wrote {out}/dictionary.bin ({A.n_rows}x{A.n_atoms}), y.csv, x_true.csv")
    return EXIT_OK


def cmd_solve(config, args):
    A, y, _ = bench.generate_problem(config, args.trial)
    sequence = None
    if "fastl1" in args.variants:
        sequence, build_ms = bench.build_approximations(config, A)
        print(f"approximations built in {build_ms:.0f} ms")
    ratio = config.lambda_ratios[0]
    run_id = bench.run_id_for(config, 0, args.trial)
    runs = bench.run_single(config, A, sequence, y, ratio, args.trial, run_id, args.variants)
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    traces = [r for v in args.variants for r in runs[v][0].trace]
    bench.write_traces(traces, out / "traces.csv")
    capped = False
    for v in args.variants:
        result, hit_cap = runs[v]
        capped |= hit_cap
        flag = " (iteration cap)" if hit_cap else ""
        print(f"{v:9s} iters={result.n_iter:6d} flops={result.flops:.4e} gap={result.gap:.3e} "
              f"time={result.wall_ms:.1f}ms{flag}")
    return EXIT_NOT_CONVERGED if capped else EXIT_OK


def cmd_sweep(config, args):
    result = bench.run_sweep(config)
    for row in result.aggregate:
        print(f"lambda/lambda_max={row['lambda_ratio']:.4g}  F_A/F_N={row['FA_FN_median']:.3f}  "
              f"F_T/F_N={row['FT_FN_median']:.3f}  T_T/T_N={row['TT_TN_median']:.3f}")
    print(f"wrote {', '.join(str(p) for p in result.paths.values())}")
    return EXIT_NOT_CONVERGED if result.any_capped else EXIT_OK


def cmd_plotdata(args):
    paths = bench.emit_plot_data(args.traces, args.out)
    print("wrote " + ", ".join(str(p) for p in paths.values()))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="stablescreen", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="write one synthetic problem to disk")
    _add_config_flags(p)
    p.add_argument("--trial", type=int, default=0)

    p = sub.add_parser("solve", help="solve one (lambda, trial) point")
    _add_config_flags(p)
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--variants", type=lambda s: [v for v in s.split(",") if v], default=list(bench.VARIANTS),
                   help="comma-separated subset of plain,screened,fastl1")

    p = sub.add_parser("sweep", help="run the full lambda x trial grid")
    _add_config_flags(p)

    p = sub.add_parser("plotdata", help="turn a traces CSV into plot-ready tables")
    p.add_argument("traces", help="traces.csv written by solve or sweep")
    p.add_argument("--out", default="plotdata")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "plotdata":
            return cmd_plotdata(args)
        config = config_from_args(args)
        if args.command == "solve":
            unknown = set(args.variants) - set(bench.VARIANTS)
            if unknown:
                raise ConfigError(f"unknown variants {sorted(unknown)}")
        return {"gen": cmd_gen, "solve": cmd_solve, "sweep": cmd_sweep}[args.command](config, args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
