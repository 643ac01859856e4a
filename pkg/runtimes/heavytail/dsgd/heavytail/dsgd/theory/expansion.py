"""First-order change of the tail index when a small mixing step is switched on.

For W = I - delta L the index moves as

    alpha_hat(delta) = alpha_dis - correction * delta + o(delta)

and the sign of the correction decides whether connecting the nodes makes the
iterates lighter or heavier tailed. The closed-form coefficient uses the sign
term e; the weighted coefficient keeps the ||I - eta H||^(s-1) factor of the
exact derivative.
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import (
    DimensionMismatchError,
    PreconditionError,
    UnstableBaseError,
)
from heavytail.dsgd.models import ExpansionReport, Method, Regime
from heavytail.dsgd.streams import Stream, derive_rng
from heavytail.dsgd.synthdata import ProblemSpec, iter_curvature_chunks, node_spectra
from heavytail.dsgd.theory.dislaw import (
    DisLaw,
    alpha_hat_dis,
    log_moment,
    rho_hat_dis,
    sign_integrals,
)
from heavytail.dsgd.theory.kits import (
    DistributionKit,
    a_squared_kit,
    batch_mean_kit,
    batch_sum_kit,
)
from heavytail.dsgd.theory.moments import MomentFunction, alpha_hat_root
from heavytail.dsgd.theory.quadrature import integrate

logger = logging.getLogger(__name__)

BOUNDARY_ATOL = 1e-9


def min_max_probability(threshold: float, n_nodes: int, kit: DistributionKit) -> float:
    """P(min_i X_i + max_i X_i < threshold) for n i.i.d. nodes with law kit."""
    if n_nodes < 1:
        raise PreconditionError(f"N must be >= 1, got {n_nodes}")
    c = float(threshold)
    head = float(kit.cdf(c)) ** n_nodes

    def overshoot(y: float) -> float:
        spread = float(kit.cdf(y) - kit.cdf(c - y))
        return n_nodes * spread ** (n_nodes - 1) * float(kit.pdf(y))

    return head - integrate(overshoot, c / 2.0, c)


def e_term(
    eta: float,
    n_nodes: int,
    kit: Optional[DistributionKit] = None,
    threshold: Optional[float] = None,
) -> float:
    """Sign term 1 - 2 P(min + max < 2 / eta), in [-1, 1]."""
    if not eta > 0:
        raise PreconditionError(f"eta must be > 0, got {eta}")
    kit = a_squared_kit() if kit is None else kit
    threshold = 2.0 / eta if threshold is None else threshold
    return 1.0 - 2.0 * min_max_probability(threshold, n_nodes, kit)


def classify_regime(value: float, atol: float = BOUNDARY_ATOL) -> Regime:
    if abs(value) <= atol:
        return Regime.Boundary
    return Regime.NetworkHeaviens if value > 0 else Regime.NetworkLightens


def _laplacian_diag(L_diag: Sequence[float], n_nodes: int) -> np.ndarray:
    diag = np.asarray(L_diag, dtype=float).reshape(-1)
    if diag.shape[0] != n_nodes:
        raise DimensionMismatchError(
            f"Laplacian diagonal has {diag.shape[0]} entries for {n_nodes} nodes"
        )
    return diag


def _checked_log_moment(law: DisLaw, s: float, alpha_dis: float) -> float:
    value = log_moment(law, s)
    if not value > 0:
        raise PreconditionError(
            f"E[Z^s log Z] = {value:.4g} <= 0, alpha_dis={alpha_dis} is not a root"
        )
    return value


def denominator_expectation(
    eta: float,
    n_nodes: int,
    alpha_dis: float,
    kit: Optional[DistributionKit] = None,
) -> float:
    """E[log Z Z^alpha_dis] for Z = max_i |1 - eta X_i|, X_i ~ kit.

    Positive at the root of a stable base; a nonpositive value means
    `alpha_dis` is not that root.
    """
    kit = a_squared_kit() if kit is None else kit
    law = DisLaw.homogeneous(eta, n_nodes, kit)
    rho = rho_hat_dis(law)
    if rho >= 0:
        raise UnstableBaseError(f"rho_hat_dis = {rho:.4g} >= 0 at eta={eta}")
    return _checked_log_moment(law, float(alpha_dis), float(alpha_dis))


def _report_from_law(
    law: DisLaw,
    diag: np.ndarray,
    alpha_dis: Optional[float],
    s: Optional[float],
    numerator_prob: float,
    e_value: float,
    weighted_sign: float,
) -> ExpansionReport:
    rho = rho_hat_dis(law)
    if rho >= 0:
        raise UnstableBaseError(f"rho_hat_dis = {rho:.4g} >= 0 at eta={law.eta}")
    alpha_dis = alpha_hat_dis(law, rho) if alpha_dis is None else float(alpha_dis)
    s = alpha_dis if s is None else float(s)

    denominator = _checked_log_moment(law, s, alpha_dis)

    plus, minus = sign_integrals(law, s)
    exact_sign = float(np.dot(diag, np.subtract(minus, plus)))
    correction = s * weighted_sign / denominator
    correction_weighted = s * exact_sign / denominator
    return ExpansionReport(
        alpha_dis=alpha_dis,
        s=s,
        correction=correction,
        numerator_prob=numerator_prob,
        e_value=e_value,
        weighted_sign=weighted_sign,
        denominator_expectation=denominator,
        mean_degree=float(diag.mean()),
        regime=classify_regime(e_value),
        correction_weighted=correction_weighted,
        regime_weighted=classify_regime(correction_weighted),
        rho_dis=rho,
        method=Method.quadrature,
    )


def expansion_general_b(
    eta: float,
    b: int,
    L_diag: Sequence[float],
    alpha_dis: Optional[float] = None,
    s: Optional[float] = None,
    sigma: float = 1.0,
) -> ExpansionReport:
    """d = 1, homogeneous nodes with batch b.

    The sign term compares batch sums with 2b / eta; the moments use the law
    of the batch mean.
    """
    diag = np.asarray(L_diag, dtype=float).reshape(-1)
    n_nodes = diag.shape[0]
    numerator_prob = min_max_probability(
        2.0 * b / eta, n_nodes, batch_sum_kit(b, sigma)
    )
    e_value = 1.0 - 2.0 * numerator_prob
    law = DisLaw.homogeneous(eta, n_nodes, batch_mean_kit(b, sigma))
    report = _report_from_law(
        law,
        diag,
        alpha_dis,
        s,
        numerator_prob=numerator_prob,
        e_value=e_value,
        weighted_sign=float(diag.mean()) * e_value,
    )
    logger.info(
        f"expansion eta={eta} N={n_nodes} b={b}: e={e_value:.4f}, "
        f"correction={report.correction:.4f} ({report.regime.value})"
    )
    return report


def expansion_d1(
    eta: float,
    L_diag: Sequence[float],
    alpha_dis: Optional[float] = None,
    s: Optional[float] = None,
    sigma: float = 1.0,
) -> ExpansionReport:
    """d = 1, b = 1."""
    return expansion_general_b(eta, 1, L_diag, alpha_dis, s, sigma)


def expansion_heterogeneous(
    eta: float,
    L_diag: Sequence[float],
    kits: Sequence[DistributionKit],
    alpha_dis: Optional[float] = None,
    s: Optional[float] = None,
) -> ExpansionReport:
    """d = 1 with a curvature law per node (batch sizes or feature scales differ).

    Node i contributes L_ii (P-_i - P+_i), where P+_i (P-_i) is the chance
    that node i attains max |1 - eta X| with a positive (negative) sign.
    """
    diag = _laplacian_diag(L_diag, len(kits))
    law = DisLaw(eta=float(eta), kits=tuple(kits))
    plus, minus = sign_integrals(law, 1.0)
    weighted_sign = float(np.dot(diag, np.subtract(minus, plus)))
    mean_degree = float(diag.mean())
    if mean_degree > 0:
        e_value = weighted_sign / mean_degree
    else:
        e_value = float(np.sum(minus) - np.sum(plus))
    return _report_from_law(
        law,
        diag,
        alpha_dis,
        s,
        numerator_prob=float(np.sum(plus)),
        e_value=e_value,
        weighted_sign=weighted_sign,
    )


def node_kits(spec: ProblemSpec) -> Tuple[DistributionKit, ...]:
    """Law of the scalar curvature of each node."""
    if spec.d != 1:
        raise PreconditionError(f"scalar node laws need d = 1, got d={spec.d}")
    return tuple(
        batch_mean_kit(int(b), float(sigma))
        for b, sigma in zip(spec.batches, spec.node_sigmas)
    )


@dataclass(frozen=True)
class SpectralSample:
    """Eigenvalues of every node's curvature for n draws, shape (n, N, d)."""

    eigenvalues: np.ndarray

    @property
    def n_mc(self) -> int:
        return int(self.eigenvalues.shape[0])

    @property
    def n_nodes(self) -> int:
        return int(self.eigenvalues.shape[1])

    def nodes(self, n_nodes: int) -> np.ndarray:
        if not 1 <= n_nodes <= self.n_nodes:
            raise DimensionMismatchError(
                f"sample holds {self.n_nodes} nodes, asked for {n_nodes}"
            )
        return self.eigenvalues[:, :n_nodes]

    def dis_log_norms(self, eta: float, n_nodes: Optional[int] = None) -> np.ndarray:
        """log max_i ||I - eta H_i|| over the first n_nodes nodes."""
        lam = self.nodes(self.n_nodes if n_nodes is None else n_nodes)
        return np.log(np.abs(1.0 - eta * lam).max(axis=(1, 2)))

    def plus_probability(self, eta: float, n_nodes: Optional[int] = None) -> float:
        """Share of draws whose maximizing eigenvalue has 1 - eta lambda > 0."""
        lam = self.nodes(self.n_nodes if n_nodes is None else n_nodes)
        flat = lam.reshape(lam.shape[0], -1)
        star = np.abs(1.0 - eta * flat).argmax(axis=1)
        chosen = flat[np.arange(flat.shape[0]), star]
        return float((eta * chosen < 1.0).mean())


def spectral_sample(
    spec: ProblemSpec, n_mc: Optional[int] = None, seed: int = 0
) -> SpectralSample:
    n_mc = get_settings().n_mc_spectral if n_mc is None else int(n_mc)
    rng = derive_rng(seed, Stream.spectra)
    parts = [node_spectra(H) for H in iter_curvature_chunks(spec, n_mc, rng)]
    eigenvalues = np.concatenate(parts)
    if eigenvalues.ndim == 2:
        eigenvalues = eigenvalues[..., None]
    return SpectralSample(eigenvalues=eigenvalues)


def _mean_stderr(values: np.ndarray) -> Tuple[float, float]:
    n = values.shape[0]
    stderr = float(values.std(ddof=1)) / math.sqrt(n) if n > 1 else 0.0
    return float(values.mean()), stderr


def expansion_from_spectra(
    sample: SpectralSample,
    eta: float,
    L_diag: Sequence[float],
    alpha_dis: Optional[float] = None,
) -> ExpansionReport:
    """Monte-Carlo expansion from per-node eigenvalues.

    Ties for the maximizing node resolve to the lowest index.
    """
    diag = _laplacian_diag(L_diag, sample.n_nodes)
    lam = sample.eigenvalues
    n = sample.n_mc
    rows = np.arange(n)

    deviation = np.abs(1.0 - eta * lam)  # (n, N, d)
    j_star = deviation.argmax(axis=2)
    node_max = np.take_along_axis(deviation, j_star[..., None], axis=2)[..., 0]
    i_star = node_max.argmax(axis=1)
    Z = node_max[rows, i_star]
    lam_star = lam[rows, i_star, j_star[rows, i_star]]
    sign = np.where(eta * lam_star < 1.0, 1.0, -1.0)
    log_z = np.log(Z)

    rho, rho_err = _mean_stderr(log_z)
    if rho >= 0:
        raise UnstableBaseError(f"rho_hat_dis = {rho:.4g} >= 0 at eta={eta}")
    if alpha_dis is None:
        alpha_dis = alpha_hat_root(MomentFunction(log_norms=log_z))
    s = float(alpha_dis)

    denominator, denom_err = _mean_stderr(log_z * np.exp(s * log_z))
    if not denominator > 0:
        raise PreconditionError(
            f"E[Z^s log Z] = {denominator:.4g} <= 0, alpha_dis={s} is not a root"
        )

    L_star = diag[i_star]
    weighted_sign, sign_err = _mean_stderr(-sign * L_star)
    exact_sign, _ = _mean_stderr(-sign * L_star * np.exp((s - 1.0) * log_z))
    numerator_prob = float((sign > 0).mean())
    mean_degree = float(diag.mean())
    if mean_degree > 0:
        e_value = weighted_sign / mean_degree
    else:
        e_value = 1.0 - 2.0 * numerator_prob
    correction = s * weighted_sign / denominator
    correction_weighted = s * exact_sign / denominator
    return ExpansionReport(
        alpha_dis=s,
        s=s,
        correction=correction,
        numerator_prob=numerator_prob,
        e_value=e_value,
        weighted_sign=weighted_sign,
        denominator_expectation=denominator,
        mean_degree=mean_degree,
        regime=classify_regime(e_value),
        correction_weighted=correction_weighted,
        regime_weighted=classify_regime(correction_weighted),
        rho_dis=rho,
        method=Method.mc,
        stderr={
            "rho_dis": rho_err,
            "weighted_sign": sign_err,
            "denominator_expectation": denom_err,
        },
    )


def expansion_general_d_mc(
    spec: ProblemSpec,
    L_diag: Sequence[float],
    alpha_dis: Optional[float] = None,
    n_mc: Optional[int] = None,
    seed: int = 0,
) -> ExpansionReport:
    """General d; needs b_i >= d so each H_i is almost surely full rank."""
    if int(spec.batches.min()) < spec.d:
        raise PreconditionError(
            f"expansion needs b >= d, got b={spec.batch_sizes}, d={spec.d}"
        )
    if not spec.eta > 0:
        raise PreconditionError(f"eta must be > 0, got {spec.eta}")
    sample = spectral_sample(spec, n_mc, seed)
    report = expansion_from_spectra(sample, spec.eta, L_diag, alpha_dis)
    logger.info(
        f"expansion (mc, n={sample.n_mc}) eta={spec.eta} N={spec.n_nodes} "
        f"d={spec.d}: e={report.e_value:.4f} ({report.regime.value})"
    )
    return report
