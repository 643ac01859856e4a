"""heavytail command line."""

import argparse
import logging
import math
import os
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd
from pydantic import ValidationError

from heavytail.dsgd import __version__, export
from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import (
    ConfigError,
    HeavyTailError,
    NoRootError,
    PreconditionError,
    exit_code_for,
)
from heavytail.dsgd.logs import init_logging
from heavytail.dsgd.pipeline import run_scenario
from heavytail.dsgd.recursion import Mode, RunConfig, run_coupled
from heavytail.dsgd.scenario import PRESETS, Scenario, full_scale, load_scenario
from heavytail.dsgd.synthdata import ProblemSpec
from heavytail.dsgd.tailest import calibrate
from heavytail.dsgd.theory.bounds import wasserstein_rate
from heavytail.dsgd.theory.contour import Engine, contour_grid
from heavytail.dsgd.theory.moments import moment_function
from heavytail.dsgd.theory.report import theory_report
from heavytail.dsgd.theory.thresholds import DEFAULT_ETA_RANGE, thresholds
from heavytail.dsgd.topology import (
    GraphKind,
    build_graph,
    graph_mixing,
    laplacian,
    max_delta,
    mixing_matrix,
)

logger = logging.getLogger(__name__)

SUMMARY_COLUMNS = [
    "mode",
    "eta",
    "b",
    "delta",
    "seed",
    "alpha_hat_empirical",
    "alpha_hat_theory",
    "rho_hat",
    "divergence_fraction",
]


def _common() -> argparse.ArgumentParser:
    """Flags shared by every subcommand."""
    parser = argparse.ArgumentParser(add_help=False)
    parser.add_argument("--seed", type=int, default=None, help="master seed")
    parser.add_argument("--jobs", type=int, default=None, help="worker processes")
    parser.add_argument("--out", type=Path, default=None, help="output directory")
    parser.add_argument(
        "--paper-scale",
        "--full-scale",
        dest="full_scale",
        action="store_true",
        help="R=1600 runs of K=5000 steps after K0=500 burn-in",
    )
    parser.add_argument("--n-mc", type=int, default=None, help="Monte-Carlo draws")
    parser.add_argument("--tol", type=float, default=None, help="root bracket width")
    parser.add_argument("--debug", action="store_true")
    return parser


def _add_spec(parser: argparse.ArgumentParser, eta: Optional[float] = 0.5):
    parser.add_argument("--d", type=int, default=1, help="dimension")
    parser.add_argument("--n", type=int, default=1, help="number of nodes")
    parser.add_argument("--b", type=int, default=1, help="batch size per node")
    parser.add_argument("--eta", type=float, default=eta, help="step size")
    parser.add_argument("--sigma", type=float, default=1.0, help="feature std")
    parser.add_argument("--sigma-y", type=float, default=1.0, help="noise std")


def _add_network(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--graph", type=GraphKind, choices=list(GraphKind), default=GraphKind.complete
    )
    parser.add_argument("--delta", type=float, default=0.0)
    parser.add_argument("--mode", type=Mode, choices=list(Mode), default=Mode.DE)


def _spec(args: argparse.Namespace, eta: Optional[float] = None) -> ProblemSpec:
    return ProblemSpec(
        d=args.d,
        n_nodes=args.n,
        batch_sizes=args.b,
        eta=args.eta if eta is None else eta,
        sigma=args.sigma,
        sigma_y=args.sigma_y,
    )


def _run_config(args: argparse.Namespace, K: int = 2000, K0: int = 400) -> RunConfig:
    spec = _spec(args)
    mixing = None
    if args.mode is Mode.DE:
        mixing = graph_mixing(args.graph, spec.n_nodes, args.delta)
    return RunConfig(
        spec=spec,
        mixing=mixing,
        mode=args.mode,
        K=K,
        K0=K0,
        R=getattr(args, "R", 400),
        master_seed=_seed(args),
    )


def _seed(args: argparse.Namespace) -> int:
    return 0 if args.seed is None else args.seed


def _out(args: argparse.Namespace, default: Optional[Path] = None) -> Path:
    if args.out is not None:
        return args.out
    return default if default is not None else get_settings().output_dir


def _print(frame: pd.DataFrame):
    sys.stdout.write(frame.to_string(index=False) + "\n")


def _apply_overrides(args: argparse.Namespace):
    """Route global flags into Settings so worker processes see them too."""
    overrides = {
        "HEAVYTAIL_JOBS": args.jobs,
        "HEAVYTAIL_N_MC": args.n_mc,
        "HEAVYTAIL_ROOT_TOL": args.tol,
    }
    for key, value in overrides.items():
        if value is not None:
            os.environ[key] = str(value)
    if args.debug:
        os.environ["HEAVYTAIL_DEBUG"] = "true"
    get_settings.cache_clear()


def cmd_topology(args: argparse.Namespace) -> int:
    lap = laplacian(build_graph(args.kind, args.n))
    mixing = mixing_matrix(lap, args.delta)
    labels = [str(i) for i in range(mixing.n_nodes)]
    bound = "none" if mixing.n_nodes == 1 else f"{max_delta(lap):.6g}"
    _print(pd.DataFrame(mixing.matrix, columns=labels))
    sys.stdout.write(
        f"eigenvalues: {' '.join(f'{v:.6g}' for v in mixing.eigenvalues)}\n"
        f"max_delta: {bound}\n"
        f"spectral_gap: {mixing.spectral_gap:.6g}\n"
    )
    path = _out(args) / f"mixing-{args.kind.value}-{args.n}.csv"
    export.write_matrix(path, mixing.matrix)
    logger.info(f"mixing matrix written to {path}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    scenario = load_scenario(args.scenario)
    if args.full_scale:
        scenario = full_scale(scenario)
    if args.seed is not None:
        scenario = scenario.model_copy(update={"seeds": [args.seed]})
    rows = run_scenario(
        scenario, _out(args, scenario.outputs), jobs=args.jobs, n_mc=args.n_mc
    )
    _print(export.rows_frame(rows)[SUMMARY_COLUMNS])
    return 0


def _contour_source(args: argparse.Namespace) -> Scenario:
    if args.scenario is not None:
        scenario = load_scenario(args.scenario)
        if scenario.contour is None:
            raise ConfigError(f"{args.scenario} has no contour section")
        return scenario
    if args.n_values is None:
        raise ConfigError("give a scenario or --n-values")
    return Scenario.model_validate(
        {
            "name": "contour",
            "spec": _spec(args, eta=1.0),
            "contour": {
                "eta_min": args.eta_min,
                "eta_max": args.eta_max,
                "eta_points": args.eta_points,
                "eta_scale": args.eta_scale,
                "n_values": args.n_values,
            },
        }
    )


def cmd_contour(args: argparse.Namespace) -> int:
    scenario = _contour_source(args)
    contour = scenario.contour
    assert contour is not None
    grid = contour_grid(
        contour.etas,
        contour.n_values,
        spec=scenario.spec,
        engine=args.engine,
        n_mc=args.n_mc if args.n_mc is not None else contour.n_mc,
        seed=_seed(args),
        jobs=args.jobs,
    )
    out_dir = _out(args, scenario.outputs if args.scenario else None)
    export.write_frame(out_dir / f"{scenario.name}.csv", grid.to_frame())
    svg = export.render_contour(grid, title=scenario.name)
    export.atomic_write(out_dir / f"{scenario.name}.svg", svg)
    sys.stdout.write(
        f"{grid.values.size} cells, {len(grid.zero_curve)} zero-curve points, "
        f"{len(grid.instability_curve)} instability-curve points\n"
    )
    logger.info(f"contour written to {out_dir}")
    return 0


def cmd_thresholds(args: argparse.Namespace) -> int:
    spec = _spec(args, eta=args.eta if args.eta is not None else 1.0)
    report = thresholds(
        spec,
        eta_range=tuple(args.eta_range),
        n_mc=args.n_mc,
        seed=_seed(args),
        eta=args.eta,
    )
    values = report.model_dump(exclude={"methods", "notes", "scopes"}, mode="json")
    _print(
        pd.DataFrame(
            {
                "quantity": list(values),
                "value": list(values.values()),
                "scope": [report.scopes.get(key, "") for key in values],
            }
        )
    )
    for key, note in report.notes.items():
        sys.stdout.write(f"note {key}: {note}\n")
    export.write_json(_out(args) / "thresholds.json", report)
    return 0


def cmd_theory(args: argparse.Namespace) -> int:
    config = _run_config(args)
    report = theory_report(
        config,
        n_mc=args.n_mc,
        seed=_seed(args),
        s_values=args.s,
        with_thresholds=False,
    )
    _print(
        pd.DataFrame(
            [
                {"quantity": name, **quantity.model_dump(mode="json")}
                for name, quantity in report.quantities.items()
            ]
        )
    )
    if report.expansion is not None:
        expansion = report.expansion
        sys.stdout.write(
            f"expansion: alpha_dis={expansion.alpha_dis:.6g} "
            f"correction={expansion.correction:.6g} regime={expansion.regime.value}\n"
        )
    export.write_json(_out(args) / f"theory-{config.digest()}.json", report)
    return 0


def cmd_couple(args: argparse.Namespace) -> int:
    config = _run_config(args, K=args.K, K0=0)
    trace = run_coupled(config, args.p, jobs=args.jobs)
    mf = moment_function(
        config.effective_spec, config.effective_mixing, args.n_mc, _seed(args)
    )
    h_p, h_err = mf.h(args.p)
    k = np.arange(trace.mean.shape[0])
    frame = pd.DataFrame(
        {
            "k": k,
            "moment": trace.mean,
            "stderr": trace.stderr,
            "bound": trace.mean[0] * h_p ** k.astype(float),
        }
    )
    export.write_frame(_out(args) / "couple.csv", frame)

    positive = trace.mean > 0
    rate = math.nan
    if positive.sum() > 1:
        slope = np.polyfit(k[positive], np.log(trace.mean[positive]), 1)[0]
        rate = float(np.exp(slope))
    try:
        w_rate = f"{wasserstein_rate(mf, args.p):.6g}"
    except (PreconditionError, NoRootError) as exc:
        w_rate = f"n/a ({exc})"
    sys.stdout.write(
        f"h_hat({args.p:g}) = {h_p:.6g} +- {h_err:.2g}\n"
        f"empirical per-step contraction = {rate:.6g}\n"
        f"W_p rate h_hat(p)^(1/p) = {w_rate}\n"
    )
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    table = calibrate(args.alphas, args.K, seed=_seed(args))
    _print(table)
    export.write_frame(_out(args) / "calibration.csv", table)
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(
        prog="heavytail",
        description="Heavy tails of decentralized SGD on synthetic least squares.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    commands = parser.add_subparsers(dest="command", required=True)

    topology = commands.add_parser(
        "topology", parents=[common], help="mixing matrix of a graph"
    )
    topology.add_argument("kind", type=GraphKind, choices=list(GraphKind))
    topology.add_argument("--n", type=int, required=True)
    topology.add_argument("--delta", type=float, default=0.0)
    topology.set_defaults(handler=cmd_topology)

    run = commands.add_parser("run", parents=[common], help="run a scenario")
    run.add_argument("scenario", help=f"YAML file or preset ({', '.join(PRESETS)})")
    run.set_defaults(handler=cmd_run)

    contour = commands.add_parser(
        "contour", parents=[common], help="sign of the network correction"
    )
    contour.add_argument("scenario", nargs="?", default=None)
    _add_spec(contour)
    contour.add_argument("--eta-min", type=float, default=0.1)
    contour.add_argument("--eta-max", type=float, default=10.0)
    contour.add_argument("--eta-points", type=int, default=40)
    contour.add_argument("--eta-scale", choices=["log", "linear"], default="log")
    contour.add_argument("--n-values", type=int, nargs="+", default=None)
    contour.add_argument("--engine", type=Engine, choices=list(Engine), default=None)
    contour.set_defaults(handler=cmd_contour)

    thresholds_cmd = commands.add_parser(
        "thresholds", parents=[common], help="tau, eta_crit, eta_max and the case"
    )
    _add_spec(thresholds_cmd, eta=None)
    thresholds_cmd.add_argument(
        "--eta-range", type=float, nargs=2, default=list(DEFAULT_ETA_RANGE)
    )
    thresholds_cmd.set_defaults(handler=cmd_thresholds)

    theory = commands.add_parser(
        "theory", parents=[common], help="rho_hat, h_hat(s) and alpha_hat"
    )
    _add_spec(theory)
    _add_network(theory)
    theory.add_argument("--s", type=float, nargs="+", default=[1.0, 2.0])
    theory.set_defaults(handler=cmd_theory)

    couple = commands.add_parser(
        "couple", parents=[common], help="synchronously coupled chains"
    )
    _add_spec(couple)
    _add_network(couple)
    couple.add_argument("--p", type=float, default=1.0)
    couple.add_argument("--K", type=int, default=200)
    couple.add_argument("--R", type=int, default=200)
    couple.set_defaults(handler=cmd_couple)

    calibrate_cmd = commands.add_parser(
        "calibrate", parents=[common], help="estimator on stable samples"
    )
    calibrate_cmd.add_argument(
        "--alphas", type=float, nargs="+", default=[0.5, 1.0, 1.5, 1.8, 2.0]
    )
    calibrate_cmd.add_argument("--K", type=int, default=10_000)
    calibrate_cmd.set_defaults(handler=cmd_calibrate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    _apply_overrides(args)
    init_logging(debug=get_settings().debug)
    try:
        return args.handler(args)
    except HeavyTailError as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return exit_code_for(exc)
    except ValidationError as exc:
        logger.error(f"invalid input: {exc}")
        return 2

