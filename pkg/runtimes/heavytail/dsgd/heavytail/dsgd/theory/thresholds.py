"""Step-size thresholds and the ordering case they define.

tau         largest eta with P(min_i X_i + max_i X_i < 2 / eta) >= 1/2 at N nodes
eta_crit    per-node step size where the tail index crosses 2
eta_max     per-node step size where the Lyapunov exponent crosses 0

Case I is tau < eta_crit < eta_max, II is eta_crit < tau < eta_max and
III is eta_crit < eta_max < tau.
"""

import logging
from typing import Callable, Optional, Tuple

from scipy import optimize, special

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import PreconditionError
from heavytail.dsgd.models import Case, Method, ThresholdReport
from heavytail.dsgd.synthdata import ProblemSpec
from heavytail.dsgd.theory.dislaw import DisLaw, rho_hat_dis
from heavytail.dsgd.theory.expansion import spectral_sample
from heavytail.dsgd.theory.kits import batch_mean_kit
from heavytail.dsgd.theory.moments import node_projection

logger = logging.getLogger(__name__)

DEFAULT_ETA_RANGE = (1e-3, 20.0)


def tau_threshold(n_nodes: int, b: int = 1, sigma: float = 1.0) -> float:
    """2 / F^-1(2^(-1/N)) for the law of the batch-mean curvature."""
    return 2.0 / float(batch_mean_kit(b, sigma).ppf(2.0 ** (-1.0 / n_nodes)))


def sigma2_threshold(eta: float, n_nodes: int) -> float:
    """Feature variance at which tau(N) equals eta for scalar Gaussian features."""
    if not eta > 0:
        raise PreconditionError(f"eta must be > 0, got {eta}")
    return 1.0 / (eta * special.erfinv(2.0 ** (-1.0 / n_nodes)) ** 2)


def eta_crit_closed_form(d: int, b: int, sigma: float = 1.0) -> float:
    """Nonzero root of E||(I - eta H) e_1||^2 = 1.

    The second moment is 1 - 2 eta sigma^2 + eta^2 sigma^4 (d + b + 1) / b.
    """
    return 2.0 * b / (sigma**2 * (d + b + 1))


def _bracketed_root(
    fn: Callable[[float], float], eta_range: Tuple[float, float]
) -> Optional[float]:
    low, high = eta_range
    if not fn(low) < 0 < fn(high):
        return None
    return float(optimize.bisect(fn, low, high, xtol=get_settings().root_tol * low))


def classify_case(tau: float, eta_crit: float, eta_max: float) -> Optional[Case]:
    if tau < eta_crit < eta_max:
        return Case.I
    if eta_crit < tau < eta_max:
        return Case.II
    if eta_crit < eta_max < tau:
        return Case.III
    return None


def thresholds(
    spec: ProblemSpec,
    eta_range: Tuple[float, float] = DEFAULT_ETA_RANGE,
    n_mc: Optional[int] = None,
    seed: int = 0,
    eta: Optional[float] = None,
    network: bool = True,
) -> ThresholdReport:
    """tau, eta_crit, eta_max and the case for a homogeneous problem.

    The step size of `spec` is ignored; `eta` only feeds sigma2_threshold.
    """
    if not spec.homogeneous:
        raise PreconditionError("thresholds need homogeneous nodes")
    low, high = eta_range
    if not 0 < low < high:
        raise PreconditionError(f"bad eta range {eta_range}")
    settings = get_settings()
    b, d, sigma, n_nodes = spec.b, spec.d, float(spec.node_sigmas[0]), spec.n_nodes
    kit = batch_mean_kit(b, sigma)
    notes, methods = {}, {}

    tau = tau_threshold(n_nodes, b, sigma)
    methods["tau"] = Method.closed_form
    eta_crit = eta_crit_closed_form(d, b, sigma)
    methods["eta_crit"] = Method.closed_form

    if d == 1:

        def node_rho(step: float) -> float:
            return rho_hat_dis(DisLaw.homogeneous(step, 1, kit))

        methods["eta_max"] = Method.quadrature
    else:
        n_proj = settings.n_mc if n_mc is None else int(n_mc)
        projection = node_projection(d, b, sigma, n_proj, seed)

        def node_rho(step: float) -> float:
            return float(projection.log_norms(step).mean())

        methods["eta_max"] = Method.mc
    eta_max = _bracketed_root(node_rho, eta_range)
    if eta_max is None:
        notes["eta_max"] = f"no sign change of rho in {eta_range}"

    eta_max_network = None
    if network and n_nodes > 1 and b < d:
        notes["eta_max_network"] = "b < d: every H_i is singular, rho_dis >= 0"
    elif network and n_nodes > 1:
        if d == 1:

            def network_rho(step: float) -> float:
                return rho_hat_dis(DisLaw.homogeneous(step, n_nodes, kit))

            methods["eta_max_network"] = Method.quadrature
        else:
            sample = spectral_sample(spec, n_mc, seed)

            def network_rho(step: float) -> float:
                return float(sample.dis_log_norms(step).mean())

            methods["eta_max_network"] = Method.mc
        eta_max_network = _bracketed_root(network_rho, eta_range)
        if eta_max_network is None:
            notes["eta_max_network"] = f"no sign change of rho_dis in {eta_range}"

    case = None
    if eta_max is not None:
        case = classify_case(tau, eta_crit, eta_max)
        if case is None:
            notes["case"] = "thresholds are not strictly ordered"

    report = ThresholdReport(
        N=n_nodes,
        d=d,
        b=b,
        sigma=sigma,
        tau=tau,
        eta_crit=eta_crit,
        eta_max=eta_max,
        eta_max_network=eta_max_network,
        case=case,
        eta=eta,
        sigma2_threshold=None if eta is None else sigma2_threshold(eta, n_nodes),
        methods=methods,
        notes=notes,
    )
    logger.info(
        f"thresholds N={n_nodes} d={d} b={b}: tau={tau:.4g}, "
        f"eta_crit={eta_crit:.4g}, eta_max={eta_max}, case={case}"
    )
    return report
