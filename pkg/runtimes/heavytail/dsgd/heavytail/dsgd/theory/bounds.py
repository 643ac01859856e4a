"""Moment bounds, convergence rates and the first-order perturbation check."""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from heavytail.dsgd.errors import DegenerateInputError, PreconditionError
from heavytail.dsgd.models import MomentBound
from heavytail.dsgd.streams import Stream, derive_rng
from heavytail.dsgd.synthdata import ProblemSpec, draw_batches
from heavytail.dsgd.theory.moments import MomentFunction, alpha_hat_root

logger = logging.getLogger(__name__)

EPSILON_GRID = 20


def initial_moment(
    dim: int,
    p: float,
    low: float = -10.0,
    high: float = 10.0,
    n: int = 100_000,
    seed: int = 0,
) -> Tuple[float, float]:
    """E||x(0)||^p for x(0) uniform on [low, high]^dim."""
    rng = derive_rng(seed, Stream.moments, 0)
    norms = np.linalg.norm(rng.uniform(low, high, size=(n, dim)), axis=1) ** p
    return float(norms.mean()), float(norms.std(ddof=1)) / math.sqrt(n)


def q_moment(
    spec: ProblemSpec, p: float, n: int = 100_000, seed: int = 0
) -> Tuple[float, float]:
    """E||q||^p with q the stacked eta/b sum a y over all nodes."""
    rng = derive_rng(seed, Stream.moments, 1)
    features, responses = draw_batches(spec, rng, n)
    b = spec.batches.astype(float)
    q = spec.eta * np.einsum("knbi,knb->kni", features, responses) / b[:, None]
    norms = np.linalg.norm(q.reshape(n, -1), axis=1) ** p
    return float(norms.mean()), float(norms.std(ddof=1)) / math.sqrt(n)


def _geometric(ratio: float, k: np.ndarray) -> np.ndarray:
    """sum_{j<k} ratio^j."""
    if ratio == 1.0:
        return k.astype(float)
    return (1.0 - ratio**k) / (1.0 - ratio)


def moment_bound(
    mf: MomentFunction,
    p: float,
    ks: Sequence[int],
    initial: float,
    q_p: float,
    alpha_hat: Optional[float] = None,
) -> MomentBound:
    """Upper bound on E||x(k)||^p for 0 < p < alpha_hat.

    For p <= 1 the p-th power is subadditive and the bound is a geometric
    series in h_hat(p). For p > 1 the (1 + eps) splitting of ||Mx + q||^p is
    used, with eps minimized over a log grid for every k.
    """
    alpha = alpha_hat_root(mf) if alpha_hat is None else float(alpha_hat)
    if not 0 < p < alpha:
        raise PreconditionError(f"need 0 < p < alpha_hat = {alpha:.4g}, got p={p}")
    h_p, _ = mf.h(p)
    k = np.asarray(ks, dtype=int)

    if p <= 1:
        bound = h_p**k * initial + _geometric(h_p, k) * q_p
        limit = q_p / (1.0 - h_p) if h_p < 1 else math.inf
        return MomentBound(
            p=p,
            h_p=h_p,
            alpha_hat=alpha,
            case="i",
            k=k.tolist(),
            bound=bound.tolist(),
            limit=limit,
        )

    upper = 1.0 / h_p - 1.0
    if not upper > 0:
        raise PreconditionError(f"h_hat(p) = {h_p:.4g} must be < 1")
    epsilons = np.logspace(
        np.log10(upper * 1e-3), np.log10(upper * (1 - 1e-3)), EPSILON_GRID
    )
    best = np.full(k.shape, math.inf)
    best_limit, best_eps = math.inf, None
    for eps in epsilons:
        ratio = (1.0 + eps) * h_p
        constant = ((1.0 + eps) ** (p / (p - 1.0)) - (1.0 + eps)) / (
            (1.0 + eps) ** (1.0 / (p - 1.0)) - 1.0
        ) ** p
        bound = ratio**k * initial + _geometric(ratio, k) * constant * q_p
        best = np.minimum(best, bound)
        limit = constant * q_p / (1.0 - ratio)
        if limit < best_limit:
            best_limit, best_eps = limit, float(eps)
    return MomentBound(
        p=p,
        h_p=h_p,
        alpha_hat=alpha,
        case="ii",
        k=k.tolist(),
        bound=best.tolist(),
        limit=best_limit,
        epsilon=best_eps,
    )


def wasserstein_rate(
    mf: MomentFunction, p: float, alpha_hat: Optional[float] = None
) -> float:
    """Contraction rate h_hat(p)^(1/p) of W_p toward the stationary law."""
    alpha = alpha_hat_root(mf) if alpha_hat is None else float(alpha_hat)
    if not 1 <= p < alpha:
        raise PreconditionError(f"need 1 <= p < alpha_hat = {alpha:.4g}, got p={p}")
    h_p, _ = mf.h(p)
    return h_p ** (1.0 / p)


def gclt_scaling(alpha: float, K: int, x_bar: np.ndarray) -> Tuple[float, np.ndarray]:
    """(a_K, d_K) such that a_K (sum_k x(k) - d_K) has a nondegenerate limit.

    alpha in (0, 1): a_K = K^(-1/alpha), d_K = 0
    alpha in (1, 2): a_K = K^(-1/alpha), d_K = K^(1 - 1/alpha) x_bar
    alpha = 2:       a_K = (K log K)^(-1/2), d_K = K x_bar
    alpha > 2:       a_K = K^(-1/2), d_K = K x_bar
    """
    alpha = float(alpha)
    if not alpha > 0:
        raise PreconditionError(f"need alpha > 0, got {alpha}")
    if alpha == 1:
        raise PreconditionError("alpha = 1 has no centering formula here")
    if K < 2:
        raise PreconditionError(f"need K >= 2, got {K}")
    x_bar = np.asarray(x_bar, dtype=float)
    if alpha < 1:
        return K ** (-1.0 / alpha), np.zeros_like(x_bar)
    if alpha < 2:
        return K ** (-1.0 / alpha), K ** (1.0 - 1.0 / alpha) * x_bar
    if alpha == 2:
        return (K * math.log(K)) ** -0.5, K * x_bar
    return K**-0.5, K * x_bar


@dataclass(frozen=True)
class PerturbationCheck:
    deltas: List[float]
    residuals: List[float]
    ratios: List[float]
    sign: float
    node: int

    @property
    def decay_factors(self) -> List[float]:
        return [a / b for a, b in zip(self.ratios, self.ratios[1:]) if b > 0]

    def passed(self, factor: float = 3.0) -> bool:
        return all(f >= factor for f in self.decay_factors)


def perturbation_check(
    H_blocks: np.ndarray,
    laplacian: np.ndarray,
    eta: float,
    deltas: Sequence[float] = (1e-2, 1e-3, 1e-4),
    s: float = 1.0,
    min_gap: float = 1e-6,
) -> PerturbationCheck:
    """Residual of ||A - delta L (x) I||^s against its first-order expansion.

    A = I - eta blockdiag(H_i); the top |eigenvalue| of A sits on node i* with
    sign sigma, and the expansion is ||A||^s - s delta ||A||^(s-1) sigma L_i*i*.
    """
    H = np.asarray(H_blocks, dtype=float)
    L = np.asarray(laplacian, dtype=float)
    n_nodes, d = H.shape[0], H.shape[-1]
    if L.shape != (n_nodes, n_nodes):
        raise PreconditionError(f"Laplacian {L.shape} does not match {n_nodes} nodes")

    node_values = np.linalg.eigvalsh(np.eye(d) - eta * H)  # (N, d)
    flat = node_values.reshape(-1)
    order = np.argsort(-np.abs(flat))
    if flat.size > 1 and abs(flat[order[0]]) - abs(flat[order[1]]) < min_gap:
        raise DegenerateInputError("top two |eigenvalues| of A are tied")
    top = flat[order[0]]
    node = int(order[0] // d)
    sign = 1.0 if top > 0 else -1.0
    norm_a = abs(top)

    A = np.zeros((n_nodes * d, n_nodes * d))
    for i in range(n_nodes):
        block = slice(i * d, (i + 1) * d)
        A[block, block] = np.eye(d) - eta * H[i]
    lifted = np.kron(L, np.eye(d))

    residuals, ratios = [], []
    for delta in deltas:
        norm = float(np.abs(np.linalg.eigvalsh(A - delta * lifted)).max())
        predicted = norm_a**s - s * delta * norm_a ** (s - 1.0) * sign * L[node, node]
        residual = abs(norm**s - predicted)
        residuals.append(residual)
        ratios.append(residual / delta if delta > 0 else 0.0)
    logger.debug(f"perturbation residual ratios {ratios}")
    return PerturbationCheck(
        deltas=list(deltas), residuals=residuals, ratios=ratios, sign=sign, node=node
    )
