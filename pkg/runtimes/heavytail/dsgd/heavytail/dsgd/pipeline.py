"""Scenario execution: ensembles, estimates and theory per sweep point."""

import logging
import time
from collections import defaultdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple

from heavytail.dsgd import export
from heavytail.dsgd.errors import NoRootError, NumericalError, PreconditionError
from heavytail.dsgd.models import ResultRow
from heavytail.dsgd.recursion import Mode, RunConfig, run_ensemble
from heavytail.dsgd.scenario import Scenario
from heavytail.dsgd.synthdata import ProblemSpec
from heavytail.dsgd.tailest import estimate_ensemble
from heavytail.dsgd.theory.moments import (
    affordable_n_mc,
    alpha_hat_root,
    moment_function,
)
from heavytail.dsgd.theory.report import theory_report
from heavytail.dsgd.topology import graph_mixing

logger = logging.getLogger(__name__)


def _batch_label(spec: ProblemSpec) -> str:
    return ",".join(str(b) for b in spec.batch_sizes)


def build_config(
    scenario: Scenario, spec: ProblemSpec, delta: float, mode: Mode, seed: int
) -> RunConfig:
    mixing = None
    if mode is Mode.DE:
        mixing = graph_mixing(scenario.topology.kind, spec.n_nodes, delta)
    return RunConfig(
        spec=spec,
        mixing=mixing,
        mode=mode,
        K=scenario.estimation.K,
        K0=scenario.estimation.K0,
        R=scenario.estimation.R,
        master_seed=seed,
    )


def _theory_alpha(
    config: RunConfig, n_mc: Optional[int], seed: int
) -> Tuple[Optional[float], Optional[float], str]:
    spec, mixing = config.effective_spec, config.effective_mixing
    samples = affordable_n_mc(spec, mixing) if n_mc is None else n_mc
    mf = moment_function(spec, mixing, samples, seed)
    rho, _ = mf.rho()
    try:
        return alpha_hat_root(mf), rho, "ok"
    except NoRootError as exc:
        return None, rho, f"no-root:{exc.reason.value}"


def run_point(
    scenario: Scenario,
    spec: ProblemSpec,
    delta: float,
    mode: Mode,
    seed: int,
    jobs: Optional[int] = None,
    n_mc: Optional[int] = None,
    ensemble_path: Optional[Path] = None,
) -> ResultRow:
    """One (sweep point, mode, seed) row; the ensemble goes to `ensemble_path`."""
    started = time.perf_counter()
    config = build_config(scenario, spec, delta, mode, seed)
    ensemble = run_ensemble(config, jobs)
    if ensemble_path is not None:
        export.write_ensemble(ensemble_path, ensemble)

    alpha_emp, alpha_raw, empirical_status = None, None, "ok"
    try:
        estimate = estimate_ensemble(
            ensemble, scenario.estimation.K1, scenario.estimation.K2
        )
        alpha_emp, alpha_raw = estimate.alpha_hat, estimate.alpha_raw
    except (NumericalError, PreconditionError) as exc:
        empirical_status = type(exc).__name__
        logger.warning(f"no empirical estimate ({mode.value}, eta={spec.eta}): {exc}")

    alpha_theory, rho, theory_status = None, None, "off"
    if scenario.theory:
        alpha_theory, rho, theory_status = _theory_alpha(config, n_mc, seed)

    return ResultRow(
        scenario=scenario.name,
        mode=mode.value,
        topology=scenario.topology.kind.value if mode is Mode.DE else mode.value,
        N=config.effective_spec.n_nodes,
        d=spec.d,
        b=_batch_label(config.effective_spec),
        eta=spec.eta,
        delta=delta if mode is Mode.DE else 0.0,
        seed=seed,
        alpha_hat_empirical=alpha_emp,
        alpha_raw_empirical=alpha_raw,
        empirical_status=empirical_status,
        alpha_hat_theory=alpha_theory,
        theory_status=theory_status,
        rho_hat=rho,
        divergence_fraction=ensemble.divergence_fraction,
        runtime_ms=1000.0 * (time.perf_counter() - started),
    )


def alpha_series(
    points: List[Tuple[float, ResultRow]]
) -> Dict[str, List[Tuple[float, Optional[float]]]]:
    """Seed-averaged alpha per mode along the swept values."""
    grouped: Dict[Tuple[str, float], List[ResultRow]] = defaultdict(list)
    for x, row in points:
        grouped[(row.mode, x)].append(row)

    series: Dict[str, List[Tuple[float, Optional[float]]]] = defaultdict(list)
    for (mode, x), group in sorted(grouped.items(), key=lambda item: item[0][1]):
        for label in ("empirical", "theory"):
            values = [
                getattr(r, f"alpha_hat_{label}")
                for r in group
                if getattr(r, f"alpha_hat_{label}") is not None
            ]
            mean = sum(values) / len(values) if values else None
            series[f"{mode} {label}"].append((x, mean))
    return dict(series)


def run_scenario(
    scenario: Scenario,
    out_dir: Optional[Path] = None,
    jobs: Optional[int] = None,
    n_mc: Optional[int] = None,
) -> List[ResultRow]:
    """Every sweep point, seed and mode.

    Writes results.csv, estimates.csv, alpha.svg for sweeps, one theory JSON
    per point and, unless disabled, one ensemble CSV per row under ensembles/.
    """
    out_dir = Path(scenario.outputs if out_dir is None else out_dir)
    rows: List[ResultRow] = []
    swept: List[Tuple[float, ResultRow]] = []
    for index, (value, spec, delta) in enumerate(scenario.points()):
        logger.info(f"{scenario.name}: point {index} ({scenario.sweep.field}={value})")
        for seed in scenario.seeds:
            for mode in scenario.modes:
                path = None
                if scenario.export_ensembles:
                    name = f"ensemble-{index:03d}-{mode.value}-{seed}.csv"
                    path = out_dir / "ensembles" / name
                row = run_point(scenario, spec, delta, mode, seed, jobs, n_mc, path)
                rows.append(row)
                if value is not None:
                    swept.append((value, row))

        if scenario.theory:
            mode = Mode.DE if Mode.DE in scenario.modes else scenario.modes[0]
            config = build_config(scenario, spec, delta, mode, scenario.seeds[0])
            samples = (
                affordable_n_mc(config.effective_spec, config.effective_mixing)
                if n_mc is None
                else n_mc
            )
            try:
                report = theory_report(config, samples, scenario.seeds[0])
                export.write_json(out_dir / f"theory-{index:03d}.json", report)
            except (NumericalError, PreconditionError) as exc:
                logger.warning(f"theory report for point {index} failed: {exc}")

    export.write_rows(out_dir / "results.csv", rows)
    export.write_estimates(out_dir / "estimates.csv", rows)
    if scenario.sweep.field != "none":
        svg = export.render_lines(
            alpha_series(swept),
            x_label=scenario.sweep.field,
            title=scenario.name,
        )
        export.atomic_write(out_dir / "alpha.svg", svg)
    logger.info(f"{scenario.name}: {len(rows)} rows written to {out_dir}")
    return rows
