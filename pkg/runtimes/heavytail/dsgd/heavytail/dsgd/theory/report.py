"""Theory side of one configuration, collected into a TheoryReport."""

import logging
from typing import Dict, Optional, Sequence

import numpy as np

from heavytail.dsgd.errors import NoRootError, NumericalError, PreconditionError
from heavytail.dsgd.models import ExpansionReport, Method, Quantity, TheoryReport
from heavytail.dsgd.recursion import Mode, RunConfig
from heavytail.dsgd.streams import Stream, derive_rng
from heavytail.dsgd.synthdata import ProblemSpec, sample_curvatures
from heavytail.dsgd.theory.bounds import (
    gclt_scaling,
    initial_moment,
    moment_bound,
    perturbation_check,
    q_moment,
    wasserstein_rate,
)
from heavytail.dsgd.theory.dislaw import DisLaw, alpha_hat_dis, rho_hat_dis
from heavytail.dsgd.theory.expansion import (
    expansion_general_b,
    expansion_general_d_mc,
    expansion_heterogeneous,
    node_kits,
)
from heavytail.dsgd.theory.moments import (
    MomentFunction,
    alpha_hat_root,
    alpha_uncertainty,
    h_finite_k_mc,
    lyapunov_mc,
    moment_function,
)
from heavytail.dsgd.theory.thresholds import thresholds

logger = logging.getLogger(__name__)

# stacked dimension above which k-step products are skipped
PRODUCT_MAX_DIM = 64
BOUND_N_MC = 2_000
LYAPUNOV_STEPS = 200


def _status(exc: Exception) -> str:
    if isinstance(exc, NoRootError):
        return f"no-root:{exc.reason.value}"
    return type(exc).__name__


def _dis_quantities(spec: ProblemSpec, n_mc: Optional[int], seed: int, prefix: str):
    """rho_hat and alpha_hat of the disconnected system for `spec`."""
    out: Dict[str, Quantity] = {}
    if spec.d == 1 and spec.eta > 0:
        law = DisLaw(eta=spec.eta, kits=node_kits(spec))
        rho = rho_hat_dis(law)
        out[f"rho_hat_{prefix}"] = Quantity(value=rho, method=Method.quadrature)
        try:
            alpha = alpha_hat_dis(law, rho)
            out[f"alpha_hat_{prefix}"] = Quantity(value=alpha, method=Method.quadrature)
        except NoRootError as exc:
            out[f"alpha_hat_{prefix}"] = Quantity(
                method=Method.quadrature, status=_status(exc)
            )
        return out

    mf = moment_function(spec, None, n_mc, seed)
    rho, rho_err = mf.rho()
    out[f"rho_hat_{prefix}"] = Quantity(value=rho, stderr=rho_err, method=Method.mc)
    try:
        alpha = alpha_hat_root(mf)
        out[f"alpha_hat_{prefix}"] = Quantity(value=alpha, method=Method.mc)
    except NoRootError as exc:
        out[f"alpha_hat_{prefix}"] = Quantity(method=Method.mc, status=_status(exc))
    return out


def config_expansion(
    config: RunConfig, n_mc: Optional[int] = None, seed: int = 0
) -> Optional[ExpansionReport]:
    """Expansion around delta = 0 for the graph behind a DE configuration."""
    mixing = config.mixing
    if config.mode is not Mode.DE or mixing is None or mixing.laplacian is None:
        return None
    spec = config.spec
    diag = mixing.laplacian.diag
    if spec.d == 1:
        if spec.homogeneous:
            return expansion_general_b(
                spec.eta, spec.b, diag, sigma=float(spec.node_sigmas[0])
            )
        return expansion_heterogeneous(spec.eta, diag, node_kits(spec))
    return expansion_general_d_mc(spec, diag, n_mc=n_mc, seed=seed)


def _bound_quantities(
    config: RunConfig, mf: MomentFunction, alpha: float, seed: int
) -> Dict[str, Quantity]:
    """Bounds and rates that follow from alpha_hat, each with its own status."""
    spec, mixing = config.effective_spec, config.effective_mixing
    out: Dict[str, Quantity] = {}

    if spec.dim <= PRODUCT_MAX_DIM:
        try:
            value, stderr = h_finite_k_mc(spec, 1.0, 2, mixing, BOUND_N_MC, seed)
            out["h_hat_k2(1)"] = Quantity(value=value, stderr=stderr, method=Method.mc)
            value, stderr = lyapunov_mc(spec, mixing, k=LYAPUNOV_STEPS, seed=seed)
            out["lyapunov"] = Quantity(value=value, stderr=stderr, method=Method.mc)
        except (NumericalError, PreconditionError) as exc:
            out["lyapunov"] = Quantity(method=Method.mc, status=_status(exc))
    else:
        status = f"skipped:dim>{PRODUCT_MAX_DIM}"
        out["lyapunov"] = Quantity(method=Method.mc, status=status)

    p = min(1.0, 0.9 * alpha)
    try:
        initial, _ = initial_moment(spec.dim, p, n=BOUND_N_MC, seed=seed)
        q_p, _ = q_moment(spec, p, n=BOUND_N_MC, seed=seed)
        bound = moment_bound(mf, p, [config.K], initial, q_p, alpha_hat=alpha)
        out["moment_bound_limit"] = Quantity(value=bound.limit, method=Method.mc)
    except (NumericalError, PreconditionError) as exc:
        out["moment_bound_limit"] = Quantity(method=Method.mc, status=_status(exc))

    if alpha > 1:
        try:
            out["wasserstein_rate(1)"] = Quantity(
                value=wasserstein_rate(mf, 1.0, alpha_hat=alpha), method=Method.mc
            )
        except PreconditionError as exc:
            out["wasserstein_rate(1)"] = Quantity(method=Method.mc, status=_status(exc))

    try:
        a_k, _ = gclt_scaling(alpha, config.K - config.K0, np.zeros(spec.dim))
        out["gclt_a_K"] = Quantity(value=a_k, method=Method.closed_form)
    except PreconditionError as exc:
        out["gclt_a_K"] = Quantity(method=Method.closed_form, status=_status(exc))

    laplacian = None if config.mixing is None else config.mixing.laplacian
    if config.mode is Mode.DE and laplacian is not None:
        rng = derive_rng(seed, Stream.perturbation)
        try:
            check = perturbation_check(
                sample_curvatures(spec, 1, rng)[0], laplacian.matrix, spec.eta
            )
            out["perturbation_ratio"] = Quantity(
                value=check.ratios[-1], method=Method.closed_form
            )
        except (NumericalError, PreconditionError) as exc:
            out["perturbation_ratio"] = Quantity(
                method=Method.closed_form, status=_status(exc)
            )
    return out


def theory_report(
    config: RunConfig,
    n_mc: Optional[int] = None,
    seed: int = 0,
    s_values: Sequence[float] = (1.0, 2.0),
    with_thresholds: bool = True,
    with_bounds: bool = True,
) -> TheoryReport:
    """Moment function, tail index, bounds, Dis/C references, expansion and
    thresholds.

    Failures of a single quantity are recorded as its status; the rest of the
    report is still filled in.
    """
    spec = config.effective_spec
    report = TheoryReport(config_digest=config.digest())
    quantities = report.quantities

    mf = moment_function(spec, config.effective_mixing, n_mc, seed)
    rho, rho_err = mf.rho()
    quantities["rho_hat"] = Quantity(value=rho, stderr=rho_err, method=Method.mc)
    for s in s_values:
        value, stderr = mf.h(s)
        quantities[f"h_hat({s:g})"] = Quantity(
            value=value, stderr=stderr, method=Method.mc
        )
    alpha = None
    try:
        alpha = alpha_hat_root(mf)
        quantities["alpha_hat"] = Quantity(value=alpha, method=Method.mc)
        lower, upper = alpha_uncertainty(mf)
        quantities["alpha_hat_lower"] = Quantity(value=lower, method=Method.mc)
        quantities["alpha_hat_upper"] = Quantity(value=upper, method=Method.mc)
    except NoRootError as exc:
        quantities["alpha_hat"] = Quantity(method=Method.mc, status=_status(exc))
    if with_bounds and alpha is not None:
        quantities.update(_bound_quantities(config, mf, alpha, seed))

    try:
        quantities.update(_dis_quantities(config.spec, n_mc, seed, "dis"))
        if config.spec.n_nodes > 1:
            central = config.spec.centralized()
            quantities.update(_dis_quantities(central, n_mc, seed, "C"))
    except (NumericalError, PreconditionError) as exc:
        logger.warning(f"reference quantities failed: {exc}")
        quantities["alpha_hat_dis"] = Quantity(method=Method.mc, status=_status(exc))

    try:
        report.expansion = config_expansion(config, n_mc, seed)
    except (NumericalError, PreconditionError) as exc:
        logger.warning(f"expansion skipped: {exc}")
        quantities["expansion"] = Quantity(
            method=Method.quadrature, status=_status(exc)
        )

    if with_thresholds and config.spec.homogeneous:
        try:
            report.thresholds = thresholds(
                config.spec,
                n_mc=n_mc,
                seed=seed,
                eta=config.spec.eta or None,
                network=config.spec.d == 1,
            )
        except (NumericalError, PreconditionError) as exc:
            logger.warning(f"thresholds skipped: {exc}")
    return report
