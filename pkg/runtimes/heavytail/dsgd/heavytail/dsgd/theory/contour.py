"""Sign of the first-order correction over an (eta, N) grid."""

import logging
from dataclasses import dataclass, field
from enum import Enum
from functools import partial
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from heavytail.dsgd.errors import PreconditionError
from heavytail.dsgd.pool import parallel_map
from heavytail.dsgd.synthdata import ProblemSpec
from heavytail.dsgd.theory.expansion import e_term, spectral_sample
from heavytail.dsgd.theory.kits import batch_sum_kit

logger = logging.getLogger(__name__)

Point = Tuple[float, float]


class Engine(str, Enum):
    quadrature = "quadrature"
    spectral = "spectral"


@dataclass(frozen=True)
class ContourGrid:
    etas: np.ndarray
    ns: np.ndarray
    values: np.ndarray  # e, (len(ns), len(etas))
    zero_curve: List[Point]
    engine: Engine
    instability: Optional[np.ndarray] = None  # rho_hat_dis on the same grid
    instability_curve: List[Point] = field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        n_grid, eta_grid = np.meshgrid(self.ns, self.etas, indexing="ij")
        frame = pd.DataFrame(
            {
                "N": n_grid.reshape(-1),
                "eta": eta_grid.reshape(-1),
                "e": self.values.reshape(-1),
            }
        )
        if self.instability is not None:
            frame["rho_dis"] = self.instability.reshape(-1)
        return frame


def level_crossings(
    etas: Sequence[float], ns: Sequence[int], values: np.ndarray, level: float = 0.0
) -> List[Point]:
    """(eta, N) points where each row crosses `level`, linearly interpolated."""
    etas = np.asarray(etas, dtype=float)
    points: List[Point] = []
    for n, row in zip(ns, np.asarray(values) - level):
        for j in range(len(etas) - 1):
            left, right = row[j], row[j + 1]
            if left == 0:
                points.append((float(etas[j]), float(n)))
            elif left * right < 0:
                t = left / (left - right)
                points.append((float(etas[j] + t * (etas[j + 1] - etas[j])), float(n)))
        if len(etas) and row[-1] == 0:
            points.append((float(etas[-1]), float(n)))
    return points


def _check_grid(
    etas: Sequence[float], ns: Sequence[int]
) -> Tuple[np.ndarray, np.ndarray]:
    etas = np.asarray(etas, dtype=float)
    ns = np.asarray(ns, dtype=int)
    if etas.size == 0 or ns.size == 0:
        raise PreconditionError("empty contour grid")
    if (etas <= 0).any() or (np.diff(etas) <= 0).any():
        raise PreconditionError("eta grid must be positive and increasing")
    if (ns < 1).any():
        raise PreconditionError("N grid must be >= 1")
    return etas, ns


def _e_row(etas: np.ndarray, b: int, sigma: float, n_nodes: int) -> np.ndarray:
    kit = batch_sum_kit(b, sigma)
    return np.array(
        [e_term(eta, int(n_nodes), kit, threshold=2.0 * b / eta) for eta in etas]
    )


def contour_quadrature(
    etas: Sequence[float],
    ns: Sequence[int],
    b: int = 1,
    sigma: float = 1.0,
    jobs: Optional[int] = None,
) -> ContourGrid:
    """e(eta, N) for d = 1 by quadrature, one N row per task."""
    etas, ns = _check_grid(etas, ns)
    rows = parallel_map(partial(_e_row, etas, b, sigma), [int(n) for n in ns], jobs)
    values = np.vstack(rows)
    return ContourGrid(
        etas=etas,
        ns=ns,
        values=values,
        zero_curve=level_crossings(etas, ns, values),
        engine=Engine.quadrature,
    )


def contour_spectral(
    spec: ProblemSpec,
    etas: Sequence[float],
    ns: Sequence[int],
    n_mc: Optional[int] = None,
    seed: int = 0,
) -> ContourGrid:
    """e(eta, N) and rho_hat_dis(eta, N) from one spectral sample.

    The sample holds max(ns) nodes; a row with N nodes reads the first N, so
    all cells share their draws.
    """
    etas, ns = _check_grid(etas, ns)
    sample = spectral_sample(spec.replace(n_nodes=int(ns.max())), n_mc, seed)
    values = np.empty((ns.size, etas.size))
    instability = np.empty_like(values)
    for i, n in enumerate(ns):
        for j, eta in enumerate(etas):
            values[i, j] = 1.0 - 2.0 * sample.plus_probability(eta, int(n))
            instability[i, j] = float(sample.dis_log_norms(eta, int(n)).mean())
        logger.debug(f"contour row N={n} done")
    return ContourGrid(
        etas=etas,
        ns=ns,
        values=values,
        zero_curve=level_crossings(etas, ns, values),
        engine=Engine.spectral,
        instability=instability,
        instability_curve=level_crossings(etas, ns, instability),
    )


def contour_grid(
    etas: Sequence[float],
    ns: Sequence[int],
    spec: Optional[ProblemSpec] = None,
    engine: Optional[Engine] = None,
    n_mc: Optional[int] = None,
    seed: int = 0,
    jobs: Optional[int] = None,
) -> ContourGrid:
    """Quadrature for scalar problems, spectral Monte Carlo otherwise."""
    if spec is None:
        spec = ProblemSpec(d=1, batch_sizes=(1,), eta=1.0)
    if engine is None:
        engine = Engine.quadrature if spec.d == 1 else Engine.spectral
    engine = Engine(engine)
    if engine is Engine.quadrature:
        if spec.d != 1:
            raise PreconditionError("quadrature contour needs d = 1")
        return contour_quadrature(
            etas, ns, spec.b, float(spec.node_sigmas[0]), jobs=jobs
        )
    return contour_spectral(spec, etas, ns, n_mc=n_mc, seed=seed)
