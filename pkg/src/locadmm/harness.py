"""Command-line front end.

Subcommands: ``generate`` (write a network file), ``run`` (solve and export
a trace plus estimates), ``sweep`` (penalty/seed grids), ``oracle-check``
(closed-form versus dense battery on a toy instance), and ``compare``
(recompute the position error of an estimates file). ``LOCADMM_SEED``
overrides ``--seed`` everywhere. All files are UTF-8; traces are CSV with a
``.`` decimal separator.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import dataclass
from typing import Optional

from . import diagnostics, network, oracle
from .errors import InvalidParameter, LocadmmError, NonFiniteValue
from .solver_full import InitSpec, run_full
from .solver_lite import run_lite
from .structured_ops import PenaltyParams

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_DIVERGED = 2


@dataclass
class RunConfig:
    """Everything a solver run depends on besides the network file itself."""

    algo: str = "full"
    c: float = 0.1
    rho: Optional[float] = None  # None means "auto" from the parameter bounds
    rho_scale: float = 1.0
    iters: int = 100
    init: str = "zeros"
    init_lo: float = -1.0
    init_hi: float = 1.0
    u0: str = "zeros"
    seed: int = 0
    metrics: tuple = diagnostics.DEFAULT_METRICS
    threads: int = 1

    def __post_init__(self):
        if self.algo not in ("full", "lite"):
            raise InvalidParameter(f"algo must be full or lite, got {self.algo!r}")
        if self.iters < 1:
            raise InvalidParameter("iterations must be >= 1")
        if not (self.c > 0.0):
            raise InvalidParameter("c must be > 0")
        if self.rho is not None and not (self.rho > 0.0):
            raise InvalidParameter("rho must be > 0")


def execute_run(graph, truth, measurements, config: RunConfig, record_wall=False):
    """Run one solver configuration and return ``(result, recorder, bounds)``."""
    bounds = None
    rho = config.rho
    if rho is None:
        bounds = diagnostics.parameter_bounds(graph, measurements, config.c)
        rho = bounds.rho_min * config.rho_scale
    params = PenaltyParams(c=config.c, rho=rho)

    metrics = list(config.metrics)
    if truth is None and "rmse" in metrics:
        metrics.remove("rmse")
    if record_wall and "wall" not in metrics:
        metrics.append("wall")
    if config.algo == "lite" and "potential" in metrics:
        metrics.remove("potential")

    positions = truth.positions if truth is not None else None
    if config.init == "truth" and positions is None:
        raise InvalidParameter("init 'truth' needs a network file with positions")
    init = _init_spec(config, positions)

    potential_coeffs = None
    if "potential" in metrics:
        if bounds is None:
            bounds = diagnostics.parameter_bounds(graph, measurements, config.c)
        potential_coeffs = (bounds.kappa1_min, bounds.kappa2_min)

    recorder = diagnostics.TraceRecorder(
        graph,
        measurements,
        params,
        truth=truth,
        metrics=metrics,
        potential_coeffs=potential_coeffs,
        metadata={
            "algorithm": config.algo,
            "c": repr(params.c),
            "rho": repr(params.rho),
            "kappa1": "" if bounds is None else repr(bounds.kappa1_min),
            "kappa2": "" if bounds is None else repr(bounds.kappa2_min),
            "seed": config.seed,
            "iters": config.iters,
            "init": config.init,
            "u0": config.u0,
        },
    )
    runner = run_full if config.algo == "full" else run_lite
    result = runner(
        graph,
        measurements,
        params,
        init,
        config.iters,
        seed=config.seed,
        hook=recorder,
        threads=config.threads,
    )
    result.trace = recorder.trace
    return result, recorder, bounds


def _init_spec(config: RunConfig, positions) -> InitSpec:
    if config.init == "zeros":
        return InitSpec(kind="zeros", u_init=config.u0)
    if config.init == "uniform":
        return InitSpec(
            kind="uniform", lo=config.init_lo, hi=config.init_hi, u_init=config.u0
        )
    if config.init == "truth":
        return InitSpec(kind="from_positions", positions=positions, u_init=config.u0)
    raise InvalidParameter(f"unknown init {config.init!r}")


def _seed(args) -> int:
    env = os.environ.get("LOCADMM_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise InvalidParameter(f"LOCADMM_SEED must be an integer, got {env!r}") from exc
    return args.seed


def _cmd_generate(args) -> int:
    seed = _seed(args)
    graph, truth = network.generate_rgg(
        args.nodes, args.anchors, args.range, args.side, args.dim, seed
    )
    kind = "additive-white" if args.noise == "awgn" else "range-dependent"
    model = network.NoiseModel(kind=kind, sigma_add=args.sigma)
    measurements = network.measure(truth, graph, model, seed)
    network.save_network(args.out, graph, truth, measurements)
    print(
        f"wrote {args.out}: N={graph.num_nodes} m={graph.num_anchors} "
        f"D_avg={graph.avg_degree:.4f} N_max={graph.max_degree} "
        f"d_max={measurements.max_range:.6f}"
    )
    return EXIT_OK


def _cmd_run(args) -> int:
    graph, truth, measurements = network.load_network(args.net)
    if measurements is None:
        raise InvalidParameter(f"{args.net} carries no measurements")
    rho = None if args.rho == "auto" else float(args.rho)
    metrics = _parse_metrics(args.metrics)
    config = RunConfig(
        algo=args.algo,
        c=args.c,
        rho=rho,
        rho_scale=args.rho_scale,
        iters=args.iters,
        init=args.init,
        init_lo=args.init_lo,
        init_hi=args.init_hi,
        u0=args.u0,
        seed=_seed(args),
        metrics=metrics,
        threads=args.threads,
    )
    try:
        result, recorder, _ = execute_run(
            graph, truth, measurements, config, record_wall=args.wall
        )
    except NonFiniteValue as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    if args.trace:
        recorder.trace.to_csv(args.trace)
    if args.est:
        est_truth = network.GroundTruth(result.estimates)
        network.save_network(args.est, graph, est_truth, measurements)
    final = recorder.trace.rows[-1]
    summary = f"done: iters={config.iters}"
    if final.rmse is not None:
        summary += f" rmse={final.rmse!r}"
    print(summary)
    return EXIT_OK


def _parse_metrics(spec: str) -> tuple:
    if spec == "none":
        return ()
    if spec == "all":
        return ("rmse", "S", "U", "P", "F", "L", "potential")
    return tuple(s for s in spec.split(",") if s)


def _cmd_sweep(args) -> int:
    graph, truth, measurements = network.load_network(args.net)
    if measurements is None:
        raise InvalidParameter(f"{args.net} carries no measurements")
    c_values = [float(x) for x in args.c_list.split(",")]
    rho_values = [float(x) for x in args.rho_list.split(",")]
    seeds = [int(x) for x in args.seeds.split(",")] if args.seeds else [_seed(args)]

    lines = ["c,rho,seed,final_rmse,min_F,diverged"]
    for c in c_values:
        for rho in rho_values:
            for seed in seeds:
                config = RunConfig(
                    algo=args.algo,
                    c=c,
                    rho=rho,
                    iters=args.iters,
                    init=args.init,
                    init_lo=args.init_lo,
                    init_hi=args.init_hi,
                    u0=args.u0,
                    seed=seed,
                    metrics=("rmse", "F") if truth is not None else ("F",),
                    threads=args.threads,
                )
                try:
                    _, recorder, _ = execute_run(graph, truth, measurements, config)
                    rows = recorder.trace.rows
                    final_rmse = rows[-1].rmse
                    gaps = [r.F for r in rows if r.F is not None]
                    min_gap = min(gaps) if gaps else None
                    lines.append(
                        f"{c!r},{rho!r},{seed},"
                        f"{'' if final_rmse is None else repr(final_rmse)},"
                        f"{'' if min_gap is None else repr(min_gap)},0"
                    )
                except NonFiniteValue:
                    lines.append(f"{c!r},{rho!r},{seed},,,1")
    text = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def _cmd_oracle_check(args) -> int:
    graph, _, measurements = network.load_network(args.net)
    if measurements is None:
        raise InvalidParameter(f"{args.net} carries no measurements")
    report = oracle.oracle_check(
        graph, measurements, c=args.c, seed=_seed(args), trials=args.trials
    )
    print(
        f"operators: {report.max_operator_error:.3e} (tol {report.OPERATOR_TOL:.0e})\n"
        f"combine:   {report.max_combine_error:.3e} (tol {report.COMBINE_TOL:.0e})\n"
        f"projection:{report.max_projection_error:.3e} (tol {report.PROJECTION_TOL:.0e})\n"
        f"{'PASS' if report.passed else 'FAIL'} over {report.trials} trials"
    )
    return EXIT_OK if report.passed else EXIT_ERROR


def _cmd_compare(args) -> int:
    graph, truth, _ = network.load_network(args.net)
    if truth is None:
        raise InvalidParameter(f"{args.net} carries no positions to compare against")
    _, estimates, _ = network.load_network(args.est)
    if estimates is None:
        raise InvalidParameter(f"{args.est} carries no positions")
    value = network.rmse(estimates.positions, truth, graph)
    print(f"rmse={value!r}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="locadmm",
        description="Distributed range-based localization solvers and diagnostics.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("generate", help="generate a random network file")
    gen.add_argument("--nodes", type=int, required=True)
    gen.add_argument("--anchors", type=int, required=True)
    gen.add_argument("--range", type=float, required=True)
    gen.add_argument("--side", type=float, default=1.0)
    gen.add_argument("--dim", type=int, default=2)
    gen.add_argument("--sigma", type=float, default=0.0)
    gen.add_argument("--noise", choices=("awgn", "range"), default="awgn")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--out", required=True)
    gen.set_defaults(func=_cmd_generate)

    run = sub.add_parser("run", help="run a solver and export trace/estimates")
    run.add_argument("--net", required=True)
    run.add_argument("--algo", choices=("full", "lite"), default="full")
    run.add_argument("--c", type=float, required=True)
    run.add_argument("--rho", default="auto", help="proximal penalty, or 'auto'")
    run.add_argument("--rho-scale", type=float, default=1.0,
                     help="multiplier on the auto bound (explore below it)")
    run.add_argument("--iters", type=int, required=True)
    run.add_argument("--init", choices=("zeros", "uniform", "truth"), default="zeros")
    run.add_argument("--init-lo", type=float, default=-1.0)
    run.add_argument("--init-hi", type=float, default=1.0)
    run.add_argument("--u0", choices=("zeros", "half", "directions"), default="zeros")
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--metrics", default=",".join(diagnostics.DEFAULT_METRICS),
                     help="comma list, or 'all'/'none'")
    run.add_argument("--wall", action="store_true",
                     help="record wall time (breaks byte reproducibility)")
    run.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    run.add_argument("--trace")
    run.add_argument("--est")
    run.set_defaults(func=_cmd_run)

    sweep = sub.add_parser("sweep", help="grid over penalties and seeds")
    sweep.add_argument("--net", required=True)
    sweep.add_argument("--algo", choices=("full", "lite"), default="lite")
    sweep.add_argument("--c-list", required=True)
    sweep.add_argument("--rho-list", required=True)
    sweep.add_argument("--seeds", default="")
    sweep.add_argument("--iters", type=int, required=True)
    sweep.add_argument("--init", choices=("zeros", "uniform", "truth"), default="zeros")
    sweep.add_argument("--init-lo", type=float, default=-1.0)
    sweep.add_argument("--init-hi", type=float, default=1.0)
    sweep.add_argument("--u0", choices=("zeros", "half", "directions"), default="zeros")
    sweep.add_argument("--seed", type=int, default=0)
    sweep.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    sweep.add_argument("--out")
    sweep.set_defaults(func=_cmd_sweep)

    check = sub.add_parser("oracle-check", help="dense-versus-closed-form battery")
    check.add_argument("--net", required=True)
    check.add_argument("--c", type=float, default=1.0)
    check.add_argument("--trials", type=int, default=20)
    check.add_argument("--seed", type=int, default=0)
    check.set_defaults(func=_cmd_oracle_check)

    cmp_ = sub.add_parser("compare", help="recompute rmse of an estimates file")
    cmp_.add_argument("--net", required=True)
    cmp_.add_argument("--est", required=True)
    cmp_.set_defaults(func=_cmd_compare)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LocadmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
