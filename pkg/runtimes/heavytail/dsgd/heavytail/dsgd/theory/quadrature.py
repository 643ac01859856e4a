"""scipy.integrate.quad with the package tolerances."""

import logging
import math
from typing import Callable, Optional, Sequence

from scipy import integrate as _integrate

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import QuadratureError

logger = logging.getLogger(__name__)


def integrate(
    fn: Callable[[float], float],
    lower: float,
    upper: float,
    points: Optional[Sequence[float]] = None,
    limit: int = 200,
) -> float:
    """Adaptive Gauss-Kronrod integral; raises QuadratureError on a miss."""
    if lower == upper:
        return 0.0
    settings = get_settings()
    epsabs, epsrel = settings.quad_epsabs, settings.quad_epsrel
    finite = math.isfinite(lower) and math.isfinite(upper)
    result = _integrate.quad(
        fn,
        lower,
        upper,
        epsabs=epsabs,
        epsrel=epsrel,
        limit=limit,
        points=points if finite else None,
        full_output=1,
    )
    value, abserr = result[0], result[1]
    if len(result) > 3:
        tolerance = 10.0 * max(epsabs, epsrel * abs(value))
        if not math.isfinite(value) or abserr > tolerance:
            raise QuadratureError(
                f"quadrature on [{lower}, {upper}] missed tolerance "
                f"(value={value:.6g}, abserr={abserr:.3g}): {result[3]}"
            )
        logger.debug(f"quadrature warning accepted (abserr={abserr:.3g})")
    return float(value)


def integrate_unit_log(fn: Callable[[float], float]) -> float:
    """Integral of fn over (0, 1) through z = exp(-u).

    Suited to integrands with a log(z) singularity at 0. Where exp(-u)
    underflows the integrand is taken as 0.
    """

    def mapped(u: float) -> float:
        z = math.exp(-u)
        return fn(z) * z if z > 0 else 0.0

    return integrate(mapped, 0.0, math.inf)
