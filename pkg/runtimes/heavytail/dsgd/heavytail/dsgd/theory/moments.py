"""Monte-Carlo moments of the random step operator M = W - eta H.

h_hat(s) = E||M||^s and rho_hat = E log||M|| are estimated from one fixed
sample of log-norms, so every s (and every bisection step) sees the same
draws.
"""

import hashlib
import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Tuple

import numpy as np

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import NoRootError, NoRootReason, PreconditionError
from heavytail.dsgd.streams import Stream, derive_rng
from heavytail.dsgd.synthdata import (
    CHUNK_FLOATS,
    ProblemSpec,
    curvature_chunk_size,
    dense_step_matrices,
    iter_curvature_chunks,
    sample_curvatures,
    step_norms,
)
from heavytail.dsgd.topology import MixingMatrix, identity_mixing

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MomentFunction:
    log_norms: np.ndarray
    digest: str = ""

    @property
    def n_mc(self) -> int:
        return int(self.log_norms.shape[0])

    def h(self, s: float) -> Tuple[float, float]:
        """(E||M||^s, stderr); exactly (1, 0) at s = 0."""
        if s == 0:
            return 1.0, 0.0
        scaled = s * self.log_norms
        top = float(scaled.max())
        weights = np.exp(scaled - top)
        factor = math.exp(top) if top < 700 else math.inf
        value = float(weights.mean()) * factor
        if self.n_mc > 1:
            stderr = float(weights.std(ddof=1)) / math.sqrt(self.n_mc) * factor
        else:
            stderr = 0.0
        return value, stderr

    def rho(self) -> Tuple[float, float]:
        """(E log||M||, stderr)."""
        value = float(self.log_norms.mean())
        if self.n_mc > 1:
            return value, float(self.log_norms.std(ddof=1)) / math.sqrt(self.n_mc)
        return value, 0.0


def _digest(*parts) -> str:
    return hashlib.sha256(repr(parts).encode()).hexdigest()[:16]


def moment_function(
    spec: ProblemSpec,
    mixing: Optional[MixingMatrix] = None,
    n_mc: Optional[int] = None,
    seed: int = 0,
) -> MomentFunction:
    """log||W - eta H|| for n_mc fresh draws; identity mixing gives Dis-SGD."""
    mixing = identity_mixing(spec.n_nodes) if mixing is None else mixing
    n_mc = get_settings().n_mc if n_mc is None else int(n_mc)
    digest = _digest(spec.model_dump_json(), mixing.matrix.tobytes(), n_mc, seed)
    if spec.eta == 0:
        # ||W|| = 1 for a symmetric doubly-stochastic W
        return MomentFunction(log_norms=np.zeros(n_mc), digest=digest)

    rng = derive_rng(seed, Stream.norms)
    parts = [
        np.log(step_norms(mixing, H, spec.eta))
        for H in iter_curvature_chunks(spec, n_mc, rng)
    ]
    return MomentFunction(log_norms=np.concatenate(parts), digest=digest)


def rho_hat_mc(
    spec: ProblemSpec,
    mixing: Optional[MixingMatrix] = None,
    n_mc: Optional[int] = None,
    seed: int = 0,
) -> Tuple[float, float]:
    return moment_function(spec, mixing, n_mc, seed).rho()


def h_hat_mc(
    spec: ProblemSpec,
    s: float,
    mixing: Optional[MixingMatrix] = None,
    n_mc: Optional[int] = None,
    seed: int = 0,
) -> Tuple[float, float]:
    return moment_function(spec, mixing, n_mc, seed).h(s)


def _positive_root(
    excess: Callable[[float], float], s_max: float, tol: float
) -> Optional[float]:
    """Smallest bracketed s > 0 with excess(s) = 0, excess(0) < 0 assumed.

    None when excess stays negative up to s_max.
    """
    low, high = 0.0, 1.0
    while excess(high) < 0:
        low = high
        if high >= s_max:
            return None
        high = min(2.0 * high, s_max)
    while high - low > tol:
        mid = 0.5 * (low + high)
        if excess(mid) < 0:
            low = mid
        else:
            high = mid
    return 0.5 * (low + high)


def alpha_hat_root(
    mf: MomentFunction,
    tol: Optional[float] = None,
    s_max: Optional[float] = None,
    noise_aware: bool = True,
) -> float:
    """Positive root of h_hat(s) = 1.

    Bisection stops once the bracket is narrower than tol or, with
    noise_aware, once |h_hat - 1| is within three standard errors.
    """
    settings = get_settings()
    tol = settings.root_tol if tol is None else tol
    s_max = settings.s_max if s_max is None else s_max

    rho, _ = mf.rho()
    if rho >= 0:
        raise NoRootError(NoRootReason.unstable, f"rho_hat = {rho:.4g} >= 0")

    def excess(s: float) -> float:
        value, _ = mf.h(s)
        return value - 1.0 if math.isfinite(value) else 1.0

    low, high = 0.0, 1.0
    while excess(high) < 0:
        low = high
        if high >= s_max:
            raise NoRootError(NoRootReason.light, f"h_hat < 1 up to s = {s_max}")
        high = min(2.0 * high, s_max)

    while high - low > tol:
        mid = 0.5 * (low + high)
        value, stderr = mf.h(mid)
        if noise_aware and abs(value - 1.0) < 3.0 * stderr:
            logger.debug(f"root search stopped within noise at s={mid:.5f}")
            return mid
        if value < 1.0:
            low = mid
        else:
            high = mid
    return 0.5 * (low + high)


def alpha_uncertainty(
    mf: MomentFunction, tol: Optional[float] = None, s_max: Optional[float] = None
) -> Tuple[float, float]:
    """Roots of h_hat(s) +- stderr(s) = 1, bracketing alpha_hat."""
    settings = get_settings()
    tol = settings.root_tol if tol is None else tol
    s_max = settings.s_max if s_max is None else s_max

    def shifted(sign: float) -> Callable[[float], float]:
        def excess(s: float) -> float:
            value, stderr = mf.h(s)
            shifted_value = value + sign * stderr
            return shifted_value - 1.0 if math.isfinite(shifted_value) else 1.0

        return excess

    lower = _positive_root(shifted(+1.0), s_max, tol)
    upper = _positive_root(shifted(-1.0), s_max, tol)
    return (
        0.0 if lower is None else lower,
        math.inf if upper is None else upper,
    )


@dataclass(frozen=True)
class NodeProjection:
    """Draws of v = H e_1 for one node with isotropic features.

    ||(I - eta H) u|| has the same law for every unit u, so single-node
    Lyapunov exponents and tail indices follow from ||e_1 - eta v||.
    """

    v: np.ndarray  # (n, d)

    def log_norms(self, eta: float) -> np.ndarray:
        w = -eta * self.v
        w[:, 0] += 1.0
        return np.log(np.linalg.norm(w, axis=1))

    def moment_function(self, eta: float) -> MomentFunction:
        return MomentFunction(log_norms=self.log_norms(eta))


def node_projection(
    d: int, b: int, sigma: float = 1.0, n_mc: Optional[int] = None, seed: int = 0
) -> NodeProjection:
    n_mc = get_settings().n_mc if n_mc is None else int(n_mc)
    rng = derive_rng(seed, Stream.projection)
    chunk = max(1, CHUNK_FLOATS // (b * d))
    parts = []
    for start in range(0, n_mc, chunk):
        size = min(chunk, n_mc - start)
        a = rng.standard_normal((size, b, d))
        parts.append((sigma**2 / b) * np.einsum("mbi,mb->mi", a, a[:, :, 0]))
    return NodeProjection(v=np.concatenate(parts))


def node_moment_function(
    spec: ProblemSpec, n_mc: Optional[int] = None, seed: int = 0, node: int = 0
) -> MomentFunction:
    """Exact per-node moment function of the Dis-SGD iteration."""
    b = int(spec.batch_sizes[node])
    sigma = float(spec.node_sigmas[node])
    return node_projection(spec.d, b, sigma, n_mc, seed).moment_function(spec.eta)


def _log_product_norms(
    mixing: MixingMatrix, spec: ProblemSpec, k: int, size: int, rng
) -> np.ndarray:
    """log||M(k)...M(1)|| for `size` independent products, renormalized per step."""
    d = spec.d
    log_scale = np.zeros(size)
    product = None
    for _ in range(k):
        H = sample_curvatures(spec, size, rng)
        if mixing.is_identity:
            factor = np.eye(d) - spec.eta * H
            product = factor if product is None else factor @ product
        else:
            factor = dense_step_matrices(mixing, H, spec.eta)
            product = factor if product is None else factor @ product
        scale = np.abs(product).reshape(size, -1).max(axis=1)
        scale = np.where(scale > 0, scale, 1.0)
        product = product / scale.reshape((size,) + (1,) * (product.ndim - 1))
        log_scale += np.log(scale)

    norms = np.linalg.norm(product, ord=2, axis=(-2, -1))
    if mixing.is_identity:
        norms = norms.max(axis=1)
    with np.errstate(divide="ignore"):
        return log_scale + np.log(norms)


def h_finite_k_mc(
    spec: ProblemSpec,
    s: float,
    k: int,
    mixing: Optional[MixingMatrix] = None,
    n_mc: Optional[int] = None,
    seed: int = 0,
) -> Tuple[float, float]:
    """(E||M(k)...M(1)||^s)^(1/k) with a delta-method stderr.

    k = 1 reuses the draws of moment_function for the same seed.
    """
    if k < 1:
        raise PreconditionError(f"k must be >= 1, got {k}")
    mixing = identity_mixing(spec.n_nodes) if mixing is None else mixing
    n_mc = get_settings().n_mc if n_mc is None else int(n_mc)
    if k == 1:
        return moment_function(spec, mixing, n_mc, seed).h(s)

    rng = derive_rng(seed, Stream.products)
    chunk = max(1, min(curvature_chunk_size(spec), CHUNK_FLOATS // spec.dim**2))
    parts = []
    for start in range(0, n_mc, chunk):
        size = min(chunk, n_mc - start)
        parts.append(_log_product_norms(mixing, spec, k, size, rng))
    mean, stderr = MomentFunction(log_norms=np.concatenate(parts)).h(s)
    if mean <= 0 or not math.isfinite(mean):
        return mean, stderr
    value = mean ** (1.0 / k)
    return value, value * stderr / (k * mean)


def lyapunov_mc(
    spec: ProblemSpec,
    mixing: Optional[MixingMatrix] = None,
    k: int = 2000,
    n_mc: int = 200,
    seed: int = 0,
) -> Tuple[float, float]:
    """Top Lyapunov exponent from k renormalized vector steps per chain."""
    mixing = identity_mixing(spec.n_nodes) if mixing is None else mixing
    rng = derive_rng(seed, Stream.lyapunov)
    v = rng.standard_normal((n_mc, spec.n_nodes, spec.d))
    v /= np.linalg.norm(v.reshape(n_mc, -1), axis=1)[:, None, None]
    total = np.zeros(n_mc)
    for _ in range(k):
        H = sample_curvatures(spec, n_mc, rng)
        mixed = np.einsum("ij,njd->nid", mixing.matrix, v)
        w = mixed - spec.eta * np.einsum("nmij,nmj->nmi", H, v)
        norm = np.linalg.norm(w.reshape(n_mc, -1), axis=1)
        total += np.log(norm)
        v = w / norm[:, None, None]
    rates = total / k
    stderr = float(rates.std(ddof=1)) / math.sqrt(n_mc) if n_mc > 1 else 0.0
    return float(rates.mean()), stderr


def affordable_n_mc(
    spec: ProblemSpec,
    mixing: Optional[MixingMatrix] = None,
    n_mc: Optional[int] = None,
    budget: float = 2e10,
    floor: int = 500,
) -> int:
    """n_mc shrunk so that the norm evaluations stay within `budget` flops."""
    n_mc = get_settings().n_mc if n_mc is None else int(n_mc)
    mixing = identity_mixing(spec.n_nodes) if mixing is None else mixing
    if mixing.is_identity:
        per_draw = spec.n_nodes * spec.d**2 * (spec.d + int(spec.batches.max()))
    else:
        per_draw = spec.dim**3 + spec.n_nodes * spec.d**2 * int(spec.batches.max())
    affordable = max(floor, int(budget // per_draw))
    if affordable < n_mc:
        logger.info(f"n_mc reduced from {n_mc} to {affordable} for N*d={spec.dim}")
        return affordable
    return n_mc
