"""``bench`` command line: attitude, sweep, timing and bimodal experiments.

Each subcommand writes CSV files plus ``manifest.json`` into ``--out``.
Monte Carlo runs are spread over ``$FPFLIE_THREADS`` worker processes
(default 1); results do not depend on the worker count.
"""

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench

log = logging.getLogger("fpflie")


def _floats(text):
    return [float(v) for v in text.split(",") if v.strip()]


def _ints(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _filters(text):
    names = tuple(v.strip() for v in text.split(",") if v.strip())
    unknown = set(names) - set(bench.ALL_FILTERS)
    if unknown:
        raise argparse.ArgumentTypeError(f"unknown filters: {', '.join(sorted(unknown))}")
    return names


PARAM_ALIASES = {"sigma_b": "sigma_B", "sigma_w": "sigma_W", "n": "N"}


def _add_common(p, runs, n):
    p.add_argument("--case", choices=("a", "b"), default="a")
    p.add_argument("--filters", type=_filters, default=bench.ALL_FILTERS)
    p.add_argument("--n", type=int, default=n, help="particles per FPF")
    p.add_argument("--runs", type=int, default=runs, help="Monte Carlo runs M")
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--T", type=float, default=3.0, help="horizon (s)")
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--sigma-b", type=float, default=0.2)
    p.add_argument("--sigma-w", type=float, default=0.05236)
    p.add_argument("--tf", type=float, default=0.2, help="sub-stepping horizon T_f (s)")
    p.add_argument("--nf", type=int, default=100, help="sub-steps N_f per step before T_f")
    p.add_argument("--epsilon", type=float, default=1.0, help="kernel bandwidth")
    p.add_argument("--out", type=Path, default=Path("results"))


def _spec(args):
    scenario = bench.attitude_scenario(args.case, T=args.T, dt=args.dt, sigma_B=args.sigma_b,
                                       sigma_W=args.sigma_w, seed=args.seed)
    return bench.ExperimentSpec(scenario=scenario, filters=args.filters, M=args.runs, N=args.n,
                                T_f=min(args.tf, args.T), N_f=args.nf, epsilon=args.epsilon)


def cmd_attitude(args):
    spec = _spec(args)
    tab = bench.run_experiment(spec)
    tag = f"attitude_{args.case}"
    tab.write_curves(args.out / f"{tag}.csv")
    tab.write_summary(args.out / f"{tag}_summary.csv")
    bench.write_manifest(args.out / "manifest.json", spec, {
        "experiment": tag,
        "failures": tab.failures,
        "step_time_s": tab.step_time,
    })
    for f in tab.filters:
        log.info("%-12s ta_error %.4f rad  std %.4f  failures %d", f, tab.ta_error(f), tab.ta_std(f),
                 tab.failures[f])


def cmd_sweep(args):
    param = PARAM_ALIASES.get(args.param.lower(), args.param)
    if param not in bench.SWEEP_PARAMS:
        raise SystemExit(f"--param must be one of sigma_b, sigma_w, n (got {args.param})")
    values = args.values or list(bench.SWEEP_VALUES[param])
    if param == "N":
        values = [int(v) for v in values]
    spec = _spec(args)
    tables = bench.sweep(param, values, spec)
    bench.write_sweep(tables, args.out / f"sweep_{param}.csv")
    bench.write_manifest(args.out / "manifest.json", spec, {
        "experiment": f"sweep_{param}",
        "values": values,
        "failures": {str(v): t.failures for v, t in tables.items()},
    })
    for v, tab in tables.items():
        log.info("%s=%s  %s", param, v,
                 "  ".join(f"{f}:{tab.ta_error(f):.4f}" for f in tab.filters))


def cmd_timing(args):
    args.filters = tuple(f for f in args.filters if f in bench.FPF_BACKENDS) or ("fpf-g", "fpf-k", "fpf-c")
    spec = _spec(args)
    table = bench.timing_study(spec, args.n_values, args.filters)
    table.write(args.out / "timing.csv")
    slopes = {f: table.slope(f) for f in table.step_time}
    bench.write_manifest(args.out / "manifest.json", spec, {
        "experiment": "timing",
        "N_values": table.N,
        "slopes": slopes,
    })
    for f, s in slopes.items():
        log.info("%-6s log-log slope %.3f", f, s)


def cmd_bimodal(args):
    spec = bench.BimodalSpec(N=args.n, epsilon=args.epsilon, sigma_W=args.sigma_w, T=args.T,
                             dt=args.dt, T_f=min(args.tf, args.T), N_f=args.nf, seed=args.seed,
                             backend=args.backend)
    res = bench.bimodal_experiment(spec)
    res.write(args.out / "bimodal.csv")
    l1 = res.l1()
    bench.write_manifest(args.out / "manifest.json", spec, {"experiment": "bimodal", "l1": l1})
    log.info("final L1(particles, posterior) = %.4f", l1[-1])


def build_parser():
    parser = argparse.ArgumentParser(prog="bench", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("attitude", help="SO(3) attitude experiment, case a or b")
    _add_common(p, runs=100, n=100)
    p.set_defaults(func=cmd_attitude)

    p = sub.add_parser("sweep", help="sweep sigma_b, sigma_w or n (case b by default)")
    _add_common(p, runs=100, n=100)
    p.set_defaults(case="b")
    p.add_argument("--param", required=True)
    p.add_argument("--values", type=_floats, default=None)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("timing", help="per-step wall time against N")
    _add_common(p, runs=3, n=100)
    p.add_argument("--n-values", type=_ints, default=list(bench.TIMING_N))
    p.set_defaults(func=cmd_timing)

    p = sub.add_parser("bimodal", help="static SO(2) model with a bimodal prior")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--T", type=float, default=0.2)
    p.add_argument("--dt", type=float, default=0.01)
    p.add_argument("--sigma-w", type=float, default=0.12)
    p.add_argument("--epsilon", type=float, default=0.2)
    p.add_argument("--tf", type=float, default=0.2)
    p.add_argument("--nf", type=int, default=100)
    p.add_argument("--backend", choices=("kernel", "galerkin"), default="kernel")
    p.add_argument("--out", type=Path, default=Path("results"))
    p.set_defaults(func=cmd_bimodal)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    args.out.mkdir(parents=True, exist_ok=True)
    np.seterr(over="ignore", under="ignore")
    args.func(args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
