#!/usr/bin/env python3
# Copyright 2024 Canonical Ltd.
# See LICENSE file for licensing details.

"""Command-line surface: compute, compare, sweep and emit cluster statistics.

    cfp exact --kernel constant --a 1 --n 3 --out pi.csv
    cfp sweep --kernel constant --n 5 --a 0.05,0.5,5 --quantity mean-counts
    cfp compare --kernel bounded --m 4 --n 9 --a 1e-5 --sim-t 1e6 --seed 7
"""
import argparse
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction
from functools import partial
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Tuple

from constants import (
    COMPARE_FLOOR,
    DEFAULT_SIGMA,
    EXIT_NUMERIC,
    EXIT_OK,
    EXIT_TOLERANCE,
    EXIT_USAGE,
    RNG_ALGORITHM,
)
from errors import CfpError, InvalidArgumentError
from exact import (
    METHODS,
    ClusterCountDistribution,
    compute_cnk,
    configuration_distribution,
    marginal_moments,
    nucleation_limit,
    p2_exact,
    rate_schedule,
    steady_state_pi,
    transient_pi,
)
from hypergeom import (
    GN_METHODS,
    g_asymptotic,
    g_n,
    mean_counts_constant,
    mu_n,
    p2_constant,
    pi_constant,
    variance_constant,
)
from kernels import kernel_from_options, load_kernel_spec
from models import GridPoint, RunManifest
from numeric import NumericMode, as_float, format_number
from pairtimes import pair_times
from reports import render_template, write_csv, write_events, write_json
from simulate import Estimate, estimate_pair_times, flux_balance, make_config, run_ssa
from utils import load_defaults, parse_int_list, parse_number_list

logger = logging.getLogger(__name__)

KERNEL_CHOICES = ["constant", "bounded", "linear", "spec-file"]
QUANTITIES = {
    "analytic": ["g1", "gn", "mu", "variance", "pi", "mean-counts", "p2"],
    "sweep": ["mean-counts", "pi-k", "p2", "mu1"],
    "emit": ["g1-error", "mean-counts", "pi-k", "p2-vs-a"],
}
LOG_LEVELS = ["DEBUG", "INFO", "WARNING", "ERROR"]

BUILTIN_DEFAULTS = {
    "numeric": "rational",
    "sim-t-scale": 1e5,
    "burn-in-fraction": 0.1,
    "replicas": 16,
    "seed": 0,
    "sigma": DEFAULT_SIGMA,
    "compare-floor": COMPARE_FLOOR,
    "workers": 1,
    "log-level": "INFO",
}

# Arguments that do not change the content of the outputs.
_UNHASHED = {"log_level", "workers", "out", "events", "sim_workers"}


class PointResult(NamedTuple):
    """Output of one grid point."""

    rows: List[Dict[str, Any]]
    detail: Dict[str, Any]
    misses: Tuple[Dict[str, Any], ...] = ()
    events: Any = None


class CfpArgumentParser(argparse.ArgumentParser):
    """Argument parser exiting with the usage error code."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _mode(args) -> NumericMode:
    return NumericMode.parse(args.numeric)


def _kernel(args, point: GridPoint):
    return kernel_from_options(args.kernel, point.a, point.m, args.kernel_file)


def _columns(point: GridPoint) -> Dict[str, Any]:
    columns: Dict[str, Any] = {"n": point.n, "a": point.a}
    if point.m is not None:
        columns["m"] = point.m
    return columns


def _numbers(name: str, value) -> Dict[str, Any]:
    """A float column, plus the rational value next to it in exact mode."""
    if isinstance(value, Fraction):
        return {name: float(value), f"{name}_exact": format_number(value)}
    return {name: as_float(value)}


def _is_limit(args, point: GridPoint) -> bool:
    if not getattr(args, "nucleation_limit", False) or Fraction(point.a) != 0:
        return False
    if args.kernel != "bounded":
        raise InvalidArgumentError("--nucleation-limit needs the bounded kernel")
    return True


def _exact_state(args, point: GridPoint, mode: Optional[NumericMode] = None):
    """Kernel, C table and cluster-count law of a grid point."""
    if _is_limit(args, point):
        limit = nucleation_limit(point.m, point.n)
        return limit.kernel, limit.table, limit.pi
    kernel = _kernel(args, point)
    table = compute_cnk(
        kernel, point.n, method=getattr(args, "method", "recurrence"), mode=mode or _mode(args)
    )
    rates = rate_schedule(kernel, table)
    transient = getattr(args, "transient", None)
    if transient is not None:
        start = [0.0] * (point.n - 1) + [1.0]
        p0 = ClusterCountDistribution(point.n, start, NumericMode.FLOATING)
        return kernel, table, transient_pi(rates, p0, transient, dt=args.dt)
    return kernel, table, steady_state_pi(rates)


def _exact_point(args, point: GridPoint) -> PointResult:
    kernel, table, pi = _exact_state(args, point)
    columns = _columns(point)
    rows = [{**columns, "K": k, **_numbers("pi", value)} for k, value in pi.rows()]
    detail: Dict[str, Any] = {
        **columns,
        "kernel": kernel.spec.to_dict(),
        "kernel_digest": kernel.spec.digest(),
        "pi": [format_number(value) for value in pi.pi],
        "mean_clusters": format_number(pi.mean()),
        "moments": marginal_moments(table, pi).to_dict(),
        "cnk": table.to_dict(),
    }
    if point.n >= 2:
        detail["p2"] = format_number(p2_exact(table, pi))
    if _is_limit(args, point):
        detail["configurations"] = [
            {"config": config.to_sparse(), "probability": format_number(probability)}
            for config, probability in configuration_distribution(table, pi).items()
        ]
    return PointResult(rows, detail)


def _analytic_point(args, point: GridPoint) -> PointResult:
    if args.kernel != "constant":
        raise InvalidArgumentError("analytic quantities exist for the constant kernel only")
    mode = _mode(args)
    n, a = point.n, point.a
    base = {**_columns(point), "quantity": args.quantity}
    if args.quantity in ("g1", "gn"):
        order = 1 if args.quantity == "g1" else args.order
        value = g_n(order, a, n, method=args.method, mode=mode)
        rows = [{**base, "order": order, "method": args.method, **_numbers("value", value.value)}]
    elif args.quantity == "mu":
        rows = [{**base, "order": args.order, **_numbers("value", mu_n(args.order, a, n, mode))}]
    elif args.quantity == "variance":
        rows = [{**base, **_numbers("value", variance_constant(a, n, mode))}]
    elif args.quantity == "pi":
        pi = pi_constant(n, a, mode)
        rows = [{**base, "K": k, **_numbers("value", value)} for k, value in pi.rows()]
    elif args.quantity == "mean-counts":
        rows = [
            {**base, "i": i, **_numbers("value", mean_counts_constant(i, a, n, mode))}
            for i in range(1, n + 1)
        ]
    else:
        asymptotic = args.method == "asymptotic"
        value = p2_constant(a, n, asymptotic=asymptotic, mode=mode)
        rows = [{**base, "method": args.method, **_numbers("value", value)}]
    return PointResult(rows, {**_columns(point), "rows": rows})


def _pairtimes_point(args, point: GridPoint) -> PointResult:
    report = pair_times(_kernel(args, point), point.n)
    row = {**_columns(point), **report.to_dict()}
    return PointResult([row], row)


def _horizon(args, point: GridPoint):
    if args.sim_t is not None:
        t_end = args.sim_t
    else:
        a = float(Fraction(point.a))
        if a <= 0:
            raise InvalidArgumentError("a = 0 needs an explicit --sim-t")
        t_end = args.sim_t_scale / a
    burn_in = args.burn_in if args.burn_in is not None else args.burn_in_fraction * t_end
    return t_end, burn_in


def _simulation(args, point: GridPoint, track_pair: bool):
    kernel = _kernel(args, point)
    t_end, burn_in = _horizon(args, point)
    initial = args.initial
    if initial not in ("all-singletons", "single-cluster"):
        initial = parse_int_list(initial)
    config = make_config(
        n=point.n,
        t_end=t_end,
        burn_in=burn_in,
        seed=args.seed,
        replicas=args.replicas,
        track_pair=track_pair,
        initial=initial,
        record_events=bool(getattr(args, "events", None)),
    )
    return kernel, run_ssa(kernel, config, workers=args.sim_workers)


def _simulate_point(args, point: GridPoint) -> PointResult:
    _, stats = _simulation(args, point, args.track_pair)
    columns = _columns(point)
    rows = [
        {**columns, "quantity": "pi", "key": k, **estimate.to_dict()}
        for k, estimate in enumerate(stats.pi_k, start=1)
    ]
    rows += [
        {**columns, "quantity": "mean-count", "key": i, **estimate.to_dict()}
        for i, estimate in enumerate(stats.mean_counts, start=1)
    ]
    clusters = stats.mean_clusters.to_dict()
    rows.append({**columns, "quantity": "mean-clusters", "key": "", **clusters})
    detail = {**columns, **stats.to_dict()}
    if args.track_pair:
        estimate = estimate_pair_times(stats)
        rows += [
            {**columns, "quantity": "p2", "key": "", **estimate.p2.to_dict()},
            {**columns, "quantity": "t_s", "key": "", **estimate.t_s.to_dict()},
            {**columns, "quantity": "t_r", "key": "", **estimate.t_r.to_dict()},
        ]
        detail["pair_times"] = estimate.to_dict()
    return PointResult(rows, detail, events=stats.events)


def _check(rows, misses, columns, quantity, key, expected, estimate, args) -> None:
    ok = estimate.within(float(expected), args.sigma, args.compare_floor)
    row = {
        **columns,
        "quantity": quantity,
        "key": key,
        "exact": float(expected),
        "simulated": estimate.mean,
        "se": estimate.se if math.isfinite(estimate.se) else None,
        "ok": ok,
    }
    rows.append(row)
    if not ok:
        misses.append(row)


def _compare_point(args, point: GridPoint) -> PointResult:
    if args.replicas < 2:
        raise InvalidArgumentError("compare needs at least two replicas for standard errors")
    kernel, table, pi = _exact_state(args, point)
    _, stats = _simulation(args, point, args.track_pair)
    columns = _columns(point)
    rows: List[Dict[str, Any]] = []
    misses: List[Dict[str, Any]] = []
    for k, estimate in enumerate(stats.pi_k, start=1):
        _check(rows, misses, columns, "pi", k, pi[k], estimate, args)
    means = marginal_moments(table, pi)
    for i, estimate in enumerate(stats.mean_counts, start=1):
        _check(rows, misses, columns, "mean-count", i, means.mean(i), estimate, args)
    exact_configs = configuration_distribution(table, pi)
    zero = Estimate([0.0] * args.replicas)
    for config in sorted(set(exact_configs) | set(stats.config_fractions), reverse=True):
        expected = exact_configs.get(config, 0)
        estimate = stats.config_fractions.get(config, zero)
        key = " ".join(str(size) for size in config.sizes())
        _check(rows, misses, columns, "config", key, expected, estimate, args)
    if args.track_pair:
        report = pair_times(kernel, point.n)
        times = estimate_pair_times(stats)
        _check(rows, misses, columns, "p2", "", report.p2_exact, times.p2, args)
        _check(rows, misses, columns, "t_s", "", report.t_s, times.t_s, args)
        _check(rows, misses, columns, "t_r", "", report.t_r, times.t_r, args)
    for flux in flux_balance(stats, args.sigma):
        row = {
            **columns,
            "quantity": "flux",
            "key": f"{flux['i']}+{flux['j']}",
            "exact": flux["coagulations"],
            "simulated": flux["fragmentations"],
            "se": math.sqrt(max(1, flux["coagulations"] + flux["fragmentations"])),
            "ok": flux["ok"],
        }
        rows.append(row)
        if not flux["ok"]:
            misses.append(row)
    return PointResult(rows, {**columns, "checks": rows}, tuple(misses))


def _quantity_rows(args, point: GridPoint, quantity: str) -> List[Dict[str, Any]]:
    """Rows of the exact quantities shared by sweep and emit."""
    columns = _columns(point)
    if quantity == "g1-error":
        if args.kernel != "constant":
            raise InvalidArgumentError("g1-error is defined for the constant kernel")
        exact = float(g_n(1, point.a, point.n, mode=NumericMode.FLOATING).value)
        approximation = g_asymptotic(1, float(Fraction(point.a)), point.n)
        error = exact - approximation
        return [
            {
                **columns,
                "g1": exact,
                "g1_asymptotic": approximation,
                "error": error,
                "relative_error": error / exact,
            }
        ]
    _, table, pi = _exact_state(args, point)
    if quantity == "mean-counts":
        report = marginal_moments(table, pi)
        return [
            {**columns, "i": i, **_numbers("mean_count", report.mean(i))}
            for i in range(1, point.n + 1)
        ]
    if quantity == "pi-k":
        return [{**columns, "K": k, **_numbers("pi", value)} for k, value in pi.rows()]
    if quantity in ("p2", "p2-vs-a"):
        return [{**columns, **_numbers("p2", p2_exact(table, pi))}]
    return [{**columns, **_numbers("mu1", pi.mean())}]


def _sweep_point(args, point: GridPoint) -> PointResult:
    rows = _quantity_rows(args, point, args.quantity)
    return PointResult(rows, {**_columns(point), "rows": rows})


_HANDLERS: Dict[str, Callable[[Any, GridPoint], PointResult]] = {
    "exact": _exact_point,
    "analytic": _analytic_point,
    "pairtimes": _pairtimes_point,
    "simulate": _simulate_point,
    "compare": _compare_point,
    "sweep": _sweep_point,
    "emit": _sweep_point,
}


def build_manifest(args) -> RunManifest:
    """Collect the arguments that determine the outputs into a manifest."""
    kernel: Dict[str, Any] = {"family": args.kernel}
    if args.kernel == "spec-file":
        if not args.kernel_file:
            raise InvalidArgumentError("--kernel spec-file requires --kernel-file")
        kernel["digest"] = load_kernel_spec(args.kernel_file).digest()
    m_axis: List[Optional[int]] = [None]
    if args.m:
        if args.kernel == "bounded":
            m_axis = list(args.m)
        else:
            logger.warning(f"--m is ignored for the {args.kernel} kernel")
    shared = {"subcommand", "kernel", "kernel_file", "n", "a", "m", "numeric", "seed"}
    options = {
        key: value
        for key, value in sorted(vars(args).items())
        if key not in shared and key not in _UNHASHED
    }
    try:
        return RunManifest(
            subcommand=args.subcommand,
            kernel=kernel,
            n=args.n,
            a=args.a,
            m=m_axis,
            numeric=_mode(args).value,
            outputs=[path for path in (args.out, getattr(args, "events", None)) if path],
            seed=args.seed,
            options=options,
        )
    except ValueError as e:
        raise InvalidArgumentError(f"Invalid run: {e}")


def run_grid(args, points: List[GridPoint]) -> List[PointResult]:
    """Evaluate every grid point, in a process pool when --workers > 1, in grid order."""
    handler = partial(_HANDLERS[args.subcommand], args)
    if args.workers > 1 and len(points) > 1:
        args.sim_workers = 1
        with ProcessPoolExecutor(max_workers=args.workers) as executor:
            return list(executor.map(handler, points))
    args.sim_workers = args.workers
    return [handler(point) for point in points]


def _metadata(args, manifest: RunManifest) -> Dict[str, Any]:
    metadata = {
        "manifest": manifest.digest(),
        "subcommand": args.subcommand,
        "kernel": args.kernel,
        "numeric": manifest.numeric,
    }
    if "digest" in manifest.kernel:
        metadata["kernel_digest"] = manifest.kernel["digest"]
    if args.subcommand in ("simulate", "compare"):
        metadata["seed"] = args.seed
        metadata["rng"] = RNG_ALGORITHM
    return metadata


def run(args) -> int:
    """Execute a parsed command line and return the exit code."""
    manifest = build_manifest(args)
    points = manifest.grid()
    if getattr(args, "events", None) and len(points) > 1:
        raise InvalidArgumentError("--events needs a single grid point")
    logger.info(f"Running {args.subcommand} over {len(points)} grid point(s)")
    results = run_grid(args, points)
    metadata = _metadata(args, manifest)
    if args.format == "json":
        payload = {
            "manifest": manifest.dict(exclude={"outputs"}),
            "points": [result.detail for result in results],
        }
        write_json(args.out, payload, metadata)
    else:
        write_csv(args.out, [row for result in results for row in result.rows], metadata)
    if getattr(args, "events", None) and results[0].events is not None:
        write_events(args.events, results[0].events, metadata)
    if args.subcommand != "compare":
        return EXIT_OK

    misses = [miss for result in results for miss in result.misses]
    summary = render_template(
        "compare.txt.j2",
        kernel=args.kernel,
        manifest=metadata["manifest"],
        sigma=args.sigma,
        floor=args.compare_floor,
        points=[
            {**point._asdict(), "checked": len(result.rows), "misses": result.misses}
            for point, result in zip(points, results)
        ],
        passed=not misses,
    )
    (sys.stderr if args.out in (None, "-") else sys.stdout).write(summary)
    if misses:
        logger.error(f"{len(misses)} compared value(s) outside tolerance")
        return EXIT_TOLERANCE
    return EXIT_OK


def build_parser(defaults: Dict[str, Any]) -> argparse.ArgumentParser:
    """Command-line grammar, with defaults from config.yaml."""
    common = CfpArgumentParser(add_help=False)
    common.add_argument("--kernel", choices=KERNEL_CHOICES, default="constant")
    common.add_argument("--kernel-file", help="kernel specification JSON for spec-file")
    common.add_argument(
        "--a", type=parse_number_list, default=["1"], help="comma separated a grid"
    )
    common.add_argument("--m", type=parse_int_list, help="comma separated size bounds M")
    common.add_argument("--n", type=parse_int_list, required=True, help="comma separated N grid")
    common.add_argument(
        "--numeric", choices=["rational", "float"], default=_cli_mode(defaults["numeric"])
    )
    common.add_argument("--out", default="-", help="output file, stdout by default")
    common.add_argument("--seed", type=int, default=defaults["seed"])
    output = common.add_mutually_exclusive_group()
    output.add_argument("--json", dest="format", action="store_const", const="json")
    output.add_argument("--csv", dest="format", action="store_const", const="csv")
    common.add_argument("--workers", type=int, default=defaults["workers"])
    common.add_argument("--log-level", choices=LOG_LEVELS, default=defaults["log-level"])
    common.set_defaults(format="csv")

    simulation = CfpArgumentParser(add_help=False)
    simulation.add_argument("--sim-t", type=float, help="simulated time horizon")
    simulation.add_argument("--sim-t-scale", type=float, default=defaults["sim-t-scale"])
    simulation.add_argument("--burn-in", type=float)
    simulation.add_argument(
        "--burn-in-fraction", type=float, default=defaults["burn-in-fraction"]
    )
    simulation.add_argument("--replicas", type=int, default=defaults["replicas"])
    simulation.add_argument("--track-pair", action="store_true")
    simulation.add_argument(
        "--initial",
        default="all-singletons",
        help="all-singletons, single-cluster or comma separated cluster sizes",
    )

    parser = CfpArgumentParser(prog="cfp", description=__doc__.splitlines()[0])
    subparsers = parser.add_subparsers(dest="subcommand", required=True)

    exact = subparsers.add_parser("exact", parents=[common], help="exact cluster-count law")
    exact.add_argument("--method", choices=METHODS, default="recurrence")
    exact.add_argument("--nucleation-limit", action="store_true")
    exact.add_argument("--transient", type=float, help="integrate from all-singletons to t")
    exact.add_argument("--dt", type=float)

    analytic = subparsers.add_parser(
        "analytic", parents=[common], help="closed forms of the constant kernel"
    )
    analytic.add_argument("--quantity", choices=QUANTITIES["analytic"], required=True)
    analytic.add_argument("--order", type=int, default=1)
    analytic.add_argument("--method", choices=GN_METHODS, default="exact")

    subparsers.add_parser("pairtimes", parents=[common], help="mean times together and apart")

    simulate = subparsers.add_parser(
        "simulate", parents=[common, simulation], help="stochastic simulation"
    )
    simulate.add_argument("--events", help="CSV file receiving the events of replica 0")

    compare = subparsers.add_parser(
        "compare", parents=[common, simulation], help="exact values against simulation"
    )
    compare.add_argument("--sigma", type=float, default=defaults["sigma"])
    compare.add_argument("--compare-floor", type=float, default=defaults["compare-floor"])

    for name in ("sweep", "emit"):
        command = subparsers.add_parser(name, parents=[common], help=f"{name} a quantity")
        command.add_argument("--quantity", choices=QUANTITIES[name], required=True)
        command.add_argument("--nucleation-limit", action="store_true")
    return parser


def _cli_mode(value: str) -> str:
    return "rational" if NumericMode.parse(value).is_exact else "float"


def main(argv: Optional[List[str]] = None) -> int:
    """Parse the command line, run it and map failures to exit codes."""
    try:
        defaults = {**BUILTIN_DEFAULTS, **load_defaults()}
        parser = build_parser(defaults)
    except CfpError as e:
        sys.stderr.write(f"cfp: error: {e}\n")
        return EXIT_USAGE
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=args.log_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.workers < 1:
            raise InvalidArgumentError(f"--workers must be positive, got {args.workers}")
        return run(args)
    except InvalidArgumentError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (CfpError, OSError) as e:
        logger.error(str(e))
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
