"""Law of Z = max_i |1 - eta X_i| over independent scalar nodes.

Z is the norm of the disconnected step operator when d = 1; X_i is the
curvature of node i. Every Dis-SGD quantity for d = 1 is an expectation
under this law.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np
from scipy import optimize

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import NoRootError, NoRootReason, PreconditionError
from heavytail.dsgd.theory.kits import DistributionKit
from heavytail.dsgd.theory.quadrature import integrate, integrate_unit_log

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DisLaw:
    eta: float
    kits: Tuple[DistributionKit, ...]

    def __post_init__(self):
        if not self.eta > 0:
            raise PreconditionError(f"eta must be > 0, got {self.eta}")
        if not self.kits:
            raise PreconditionError("at least one node is required")

    @classmethod
    def homogeneous(cls, eta: float, n_nodes: int, kit: DistributionKit) -> "DisLaw":
        return cls(eta=float(eta), kits=(kit,) * int(n_nodes))

    @property
    def n_nodes(self) -> int:
        return len(self.kits)

    @property
    def is_homogeneous(self) -> bool:
        return len(set(self.kits)) == 1

    def _node_terms(self, z: float):
        upper = (1.0 + z) / self.eta
        lower = (1.0 - z) / self.eta
        if self.is_homogeneous:
            kit = self.kits[0]
            mass = float(kit.cdf(upper) - kit.cdf(lower))
            density = float(kit.pdf(upper) + kit.pdf(lower)) / self.eta
            return [mass], [density]
        masses = [float(k.cdf(upper) - k.cdf(lower)) for k in self.kits]
        densities = [float(k.pdf(upper) + k.pdf(lower)) / self.eta for k in self.kits]
        return masses, densities

    def cdf(self, z: float) -> float:
        if z < 0:
            return 0.0
        masses, _ = self._node_terms(z)
        if self.is_homogeneous:
            return masses[0] ** self.n_nodes
        return float(np.prod(masses))

    def pdf(self, z: float) -> float:
        if z <= 0:
            return 0.0
        masses, densities = self._node_terms(z)
        if self.is_homogeneous:
            n = self.n_nodes
            rest = masses[0] ** (n - 1) if n > 1 else 1.0
            return n * densities[0] * rest
        total = 0.0
        for i, density in enumerate(densities):
            others = masses[:i] + masses[i + 1 :]
            total += density * float(np.prod(others))
        return total

    def expect(self, fn: Callable[[float], float]) -> float:
        """E[fn(Z)], split at z = 1 where the node densities are singular."""
        head = integrate_unit_log(lambda z: fn(z) * self.pdf(z))
        tail = integrate(lambda z: fn(z) * self.pdf(z), 1.0, math.inf)
        return head + tail


def _power(z: float, s: float) -> float:
    try:
        return z**s
    except (OverflowError, ZeroDivisionError):
        return math.inf


def h_hat_dis(law: DisLaw, s: float) -> float:
    """E[Z^s]; exactly 1 at s = 0."""
    if s == 0:
        return 1.0
    return law.expect(lambda z: _power(z, s))


def rho_hat_dis(law: DisLaw) -> float:
    """E[log Z]."""
    return law.expect(math.log)


def log_moment(law: DisLaw, s: float) -> float:
    """E[Z^s log Z], the s-derivative of h_hat_dis."""
    return law.expect(lambda z: math.log(z) * _power(z, s))


def alpha_hat_dis(law: DisLaw, rho: Optional[float] = None) -> float:
    """Positive root of E[Z^s] = 1 by bracketed bisection."""
    settings = get_settings()
    rho = rho_hat_dis(law) if rho is None else rho
    if rho >= 0:
        raise NoRootError(NoRootReason.unstable, f"rho_hat = {rho:.4g} >= 0")

    def excess(s: float) -> float:
        value = h_hat_dis(law, s) - 1.0
        return value if math.isfinite(value) else 1.0

    low, high = 0.0, 1.0
    if excess(high) < 0:
        while excess(high) < 0:
            low = high
            high *= 2.0
            if high > settings.s_max:
                if excess(settings.s_max) < 0:
                    raise NoRootError(
                        NoRootReason.light, f"h_hat < 1 up to s = {settings.s_max}"
                    )
                high = settings.s_max
                break
    else:
        # root below 1: walk the lower end down until h_hat < 1
        low = 0.5
        while excess(low) >= 0:
            high = low
            low *= 0.5
            if low < settings.root_tol:
                return low
    root = optimize.bisect(excess, low, high, xtol=settings.root_tol)
    logger.debug(f"alpha_hat_dis = {root:.5f} for eta={law.eta}, N={law.n_nodes}")
    return float(root)


def tail_mass(kit: DistributionKit, threshold: float, lower: float) -> float:
    """P(lower < X <= threshold) for one node, zero for an empty interval."""
    if threshold <= lower:
        return 0.0
    return float(kit.cdf(threshold) - kit.cdf(lower))


def sign_integrals(law: DisLaw, s: float = 1.0) -> Tuple[List[float], List[float]]:
    """Per-node E[Z^(s-1); node i attains Z with 1 - eta X_i > 0 (resp. < 0)].

    Node i attains Z at X_i = x with positive sign when every other node lies
    in [x, c - x], c = 2 / eta; negative sign when they lie in [c - x, x].
    s = 1 gives the probabilities of those events.
    """
    c = 2.0 / law.eta
    n = law.n_nodes
    nodes = [0] if law.is_homogeneous else range(n)
    plus, minus = [], []
    for i in nodes:
        kit = law.kits[i]
        others = law.kits[:i] + law.kits[i + 1 :]

        def rest(upper, lower, others=others):
            if law.is_homogeneous:
                return tail_mass(others[0], upper, lower) ** (n - 1) if others else 1.0
            return float(np.prod([tail_mass(k, upper, lower) for k in others]))

        def positive(x, kit=kit, rest=rest):
            weight = _power(1.0 - law.eta * x, s - 1.0)
            return float(kit.pdf(x)) * rest(c - x, x) * weight

        def negative(x, kit=kit, rest=rest):
            weight = _power(law.eta * x - 1.0, s - 1.0)
            return float(kit.pdf(x)) * rest(x, c - x) * weight

        plus.append(integrate(positive, 0.0, c / 2.0))
        minus.append(integrate(negative, c / 2.0, math.inf))
    if law.is_homogeneous:
        return plus * n, minus * n
    return plus, minus
