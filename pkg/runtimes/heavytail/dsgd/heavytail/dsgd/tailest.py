"""Tail-index estimation for (approximately) alpha-stable samples.

The estimator compares log-magnitudes of single samples with those of block
sums: if X is strictly alpha-stable, a sum of K1 copies is K1^(1/alpha) X in
law, so

    1/alpha = (mean_j log|Y_j| - mean_i log|X_i|) / log K1

with Y_j the K2 block sums of K1 consecutive samples.
"""

import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import (
    DegenerateInputError,
    InsufficientSamplesError,
    PreconditionError,
)
from heavytail.dsgd.models import TailIndexEstimate
from heavytail.dsgd.recursion import IterateEnsemble, node_view
from heavytail.dsgd.streams import derive_rng

logger = logging.getLogger(__name__)

ALPHA_CAP = 2.0


@dataclass(frozen=True)
class ScalarEstimate:
    alpha: float
    raw: float
    K1: int
    K2: int

    @property
    def clipped(self) -> bool:
        return self.raw > ALPHA_CAP

    def __float__(self) -> float:
        return self.alpha


def default_blocks(n: int) -> int:
    return int(math.isqrt(n))


def estimate_alpha_scalar(
    samples: Sequence[float], K1: Optional[int] = None, K2: Optional[int] = None
) -> ScalarEstimate:
    """alpha_hat in (0, 2] from K1*K2 samples; the raw value is kept.

    Exact zeros are dropped first; K1 * K2 may not exceed the number of
    finite nonzero samples.
    """
    x = np.asarray(samples, dtype=float).reshape(-1)
    x = x[np.isfinite(x)]
    if x.size and not x.any():
        raise DegenerateInputError("all samples are zero")
    zeros = int((x == 0.0).sum())
    if zeros:
        logger.warning(f"dropped {zeros} zero samples")
        x = x[x != 0.0]
    K1 = default_blocks(x.size) if K1 is None else int(K1)
    if K2 is None:
        K2 = x.size // K1 if K1 > 0 else 0
    K2 = int(K2)
    if K1 < 2 or K2 < 2:
        raise PreconditionError(f"need K1 >= 2 and K2 >= 2, got K1={K1}, K2={K2}")
    if K1 * K2 > x.size:
        raise PreconditionError(
            f"K1*K2 = {K1 * K2} exceeds {x.size} finite nonzero samples"
        )

    used = x[: K1 * K2]
    blocks = used.reshape(K2, K1).sum(axis=1)
    blocks = blocks[blocks != 0.0]
    if blocks.size == 0:
        raise DegenerateInputError("every block sum is zero")

    gap = np.log(np.abs(blocks)).mean() - np.log(np.abs(used)).mean()
    inverse = gap / np.log(K1)
    raw = 1.0 / inverse if inverse > 0 else math.inf
    return ScalarEstimate(alpha=min(raw, ALPHA_CAP), raw=raw, K1=K1, K2=K2)


def estimate_ensemble(
    ensemble: IterateEnsemble,
    K1: Optional[int] = None,
    K2: Optional[int] = None,
    min_samples: Optional[int] = None,
) -> TailIndexEstimate:
    """Median over nodes of the per-node tail-index."""
    min_samples = get_settings().min_samples if min_samples is None else min_samples
    kept = int((~ensemble.diverged).sum())
    if kept < min_samples:
        raise InsufficientSamplesError(
            f"{kept} non-diverged runs, need at least {min_samples}"
        )

    estimates: List[ScalarEstimate] = [
        estimate_alpha_scalar(node_view(ensemble, node).reshape(-1), K1, K2)
        for node in range(ensemble.n_nodes)
    ]
    alphas = [e.alpha for e in estimates]
    raws = [e.raw for e in estimates]
    median_raw = float(np.median(raws))
    return TailIndexEstimate(
        alpha_hat=float(np.median(alphas)),
        alpha_raw=median_raw,
        per_node_alphas=alphas,
        per_node_raw=raws,
        n_samples=kept * ensemble.d,
        K1=estimates[0].K1,
        K2=estimates[0].K2,
        clipped=median_raw > ALPHA_CAP,
        divergence_fraction=ensemble.divergence_fraction,
    )


def stable_samples(
    alpha: float,
    size,
    rng: np.random.Generator,
    beta: float = 0.0,
    scale: float = 1.0,
) -> np.ndarray:
    """Chambers-Mallows-Stuck alpha-stable variates (S1 parametrization)."""
    if not 0 < alpha <= 2:
        raise PreconditionError(f"alpha must be in (0, 2], got {alpha}")
    if abs(beta) > 1:
        raise PreconditionError(f"beta must be in [-1, 1], got {beta}")

    phi = (rng.uniform(size=size) - 0.5) * np.pi
    w = rng.exponential(size=size)
    if alpha == 2:
        return 2 * scale * np.sqrt(w) * np.sin(phi)
    if alpha == 1 and beta == 0:
        return scale * np.tan(phi)
    if beta == 0:
        return scale * (
            np.sin(alpha * phi)
            / np.cos(phi) ** (1.0 / alpha)
            * (np.cos((1 - alpha) * phi) / w) ** ((1 - alpha) / alpha)
        )

    cosphi = np.cos(phi)
    if abs(alpha - 1) > 1e-8:
        zeta = beta * np.tan(np.pi * alpha / 2)
        aphi = alpha * phi
        a1phi = (1 - alpha) * phi
        return scale * (
            (np.sin(aphi) + zeta * np.cos(aphi))
            / cosphi
            * (np.cos(a1phi) + zeta * np.sin(a1phi))
            / (w * cosphi) ** ((1 - alpha) / alpha)
        )
    bphi = np.pi / 2 + beta * phi
    return scale * (
        2 / np.pi * (bphi * np.tan(phi) - beta * np.log(np.pi / 2 * w * cosphi / bphi))
    )


def calibrate(alphas: Sequence[float], K: int, seed: int = 0) -> pd.DataFrame:
    """Estimator response on synthetic symmetric stable samples."""
    rows = []
    for index, alpha in enumerate(alphas):
        samples = stable_samples(alpha, K, derive_rng(seed, index))
        estimate = estimate_alpha_scalar(samples)
        rows.append(
            {
                "alpha_true": float(alpha),
                "alpha_hat": estimate.alpha,
                "alpha_raw": estimate.raw,
                "error": estimate.alpha - float(alpha),
                "K1": estimate.K1,
                "K2": estimate.K2,
            }
        )
        logger.info(f"calibration alpha={alpha}: estimate {estimate.alpha:.4f}")
    return pd.DataFrame(rows)
