"""DE-SGD, Dis-SGD and C-SGD as the recursion x(k+1) = M(k+1) x(k) + q(k+1)."""

import hashlib
import logging
from dataclasses import dataclass
from enum import Enum
from functools import partial
from typing import List, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    NonNegativeInt,
    PositiveInt,
    model_validator,
)

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import DimensionMismatchError, PreconditionError
from heavytail.dsgd.pool import parallel_map
from heavytail.dsgd.streams import derive_rng
from heavytail.dsgd.synthdata import (
    CHUNK_FLOATS,
    ProblemSpec,
    StepDraw,
    draw_batches,
)
from heavytail.dsgd.topology import MixingMatrix, identity_mixing, lift_to_blocks

logger = logging.getLogger(__name__)


class Mode(str, Enum):
    DE = "DE"
    Dis = "Dis"
    C = "C"


class RunConfig(BaseModel):
    """One ensemble experiment."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    spec: ProblemSpec
    mixing: Optional[MixingMatrix] = None
    mode: Mode = Mode.DE
    K: PositiveInt = 2000
    K0: NonNegativeInt = 400
    R: PositiveInt = 400
    master_seed: NonNegativeInt = 0
    init_low: float = -10.0
    init_high: float = 10.0
    node_labels: Optional[Tuple[NonNegativeInt, ...]] = None

    @model_validator(mode="after")
    def check_config(self):
        if not self.K > self.K0:
            raise ValueError(f"need K > K0, got K={self.K}, K0={self.K0}")
        if not self.init_low < self.init_high:
            raise ValueError("init_low must be below init_high")
        if self.mode is Mode.DE:
            if self.mixing is None and self.spec.n_nodes > 1:
                raise ValueError("DE mode needs a mixing matrix")
            if self.mixing is not None and self.mixing.n_nodes != self.spec.n_nodes:
                raise DimensionMismatchError(
                    f"mixing has {self.mixing.n_nodes} nodes, "
                    f"spec has {self.spec.n_nodes}"
                )
        if self.node_labels is not None:
            n = self.effective_spec.n_nodes
            if len(self.node_labels) != n or len(set(self.node_labels)) != n:
                raise ValueError(f"node_labels must be {n} distinct integers")
        return self

    @property
    def effective_spec(self) -> ProblemSpec:
        if self.mode is Mode.C:
            return self.spec.centralized()
        return self.spec

    @property
    def effective_mixing(self) -> MixingMatrix:
        if self.mode is Mode.DE and self.mixing is not None:
            return self.mixing
        return identity_mixing(self.effective_spec.n_nodes)

    @property
    def labels(self) -> Tuple[int, ...]:
        if self.node_labels is not None:
            return tuple(self.node_labels)
        return tuple(range(self.effective_spec.n_nodes))

    @property
    def stationary_mean(self) -> np.ndarray:
        """E[x(inf)] = 1_N (x) x_true, the fixed point of E[M] mu + E[q] = mu."""
        return np.tile(self.spec.x_star, self.effective_spec.n_nodes)

    def digest(self) -> str:
        payload = hashlib.sha256()
        payload.update(self.model_dump_json(exclude={"mixing"}).encode())
        payload.update(np.ascontiguousarray(self.effective_mixing.matrix).tobytes())
        return payload.hexdigest()[:16]


@dataclass(frozen=True)
class RunSummary:
    run_index: int
    tail_average: np.ndarray  # centered, (L,)
    tail_mean: np.ndarray
    final: np.ndarray
    diverged: bool
    norm_trace: np.ndarray  # ||x(k)||, k = 0..K


@dataclass(frozen=True)
class _Simulation:
    tail_sum: np.ndarray  # (chains, N, d)
    final: np.ndarray
    norms: np.ndarray  # (chains, K + 1)
    diff_norms: Optional[np.ndarray]  # (K + 1,) when two chains
    diverged: bool


def _initial_point(config: RunConfig, rng: np.random.Generator, d: int) -> np.ndarray:
    return rng.uniform(config.init_low, config.init_high, size=d)


def _simulate(config: RunConfig, run_index: int, second_start: Optional[str] = None):
    spec = config.effective_spec
    W = config.effective_mixing.matrix
    n_nodes, d, eta = spec.n_nodes, spec.d, spec.eta
    guard = get_settings().overflow_guard

    rngs = [derive_rng(config.master_seed, run_index, label) for label in config.labels]
    starts = [np.stack([_initial_point(config, rng, d) for rng in rngs])]
    if second_start == "identical":
        starts.append(starts[0].copy())
    elif second_start == "independent":
        starts.append(
            np.stack(
                [
                    _initial_point(
                        config, derive_rng(config.master_seed, run_index, label, 1), d
                    )
                    for label in config.labels
                ]
            )
        )
    x = np.stack(starts)  # (chains, N, d)
    chains = x.shape[0]

    norms = np.full((chains, config.K + 1), np.nan)
    norms[:, 0] = np.linalg.norm(x.reshape(chains, -1), axis=1)
    diff_norms = None
    if chains == 2:
        diff_norms = np.full(config.K + 1, np.nan)
        diff_norms[0] = np.linalg.norm(x[0] - x[1])

    tail_sum = np.zeros_like(x)
    inv_batch = 1.0 / spec.batches.astype(float)[:, None]
    chunk = max(1, CHUNK_FLOATS // (n_nodes * int(spec.batches.max()) * d))

    k = 0
    diverged = False
    while k < config.K and not diverged:
        steps = min(chunk, config.K - k)
        features, responses = draw_batches(spec, rngs, steps)
        for t in range(steps):
            A, y = features[t], responses[t]
            resid = np.einsum("nbd,cnd->cnb", A, x) - y
            grad = np.einsum("nbd,cnb->cnd", A, resid) * inv_batch
            x = W @ x - eta * grad
            k += 1

            peak = np.abs(x).max()
            if not np.isfinite(peak) or peak > guard:
                diverged = True
                break
            norms[:, k] = np.linalg.norm(x.reshape(chains, -1), axis=1)
            if diff_norms is not None:
                diff_norms[k] = np.linalg.norm(x[0] - x[1])
            if k > config.K0:
                tail_sum += x

    if diverged:
        logger.debug(f"run {run_index} diverged at step {k}")
    return _Simulation(
        tail_sum=tail_sum,
        final=x,
        norms=norms,
        diff_norms=diff_norms,
        diverged=diverged,
    )


def run_single(config: RunConfig, run_index: int) -> RunSummary:
    """Iterate K steps from U(init_low, init_high) and summarize the tail."""
    if not 0 <= run_index < config.R:
        raise PreconditionError(f"run_index {run_index} outside [0, {config.R})")

    sim = _simulate(config, run_index)
    length = config.effective_spec.dim
    if sim.diverged:
        blank = np.full(length, np.nan)
        return RunSummary(
            run_index=run_index,
            tail_average=blank,
            tail_mean=blank,
            final=blank,
            diverged=True,
            norm_trace=sim.norms[0],
        )

    tail_mean = sim.tail_sum[0].reshape(-1) / (config.K - config.K0)
    return RunSummary(
        run_index=run_index,
        tail_average=tail_mean - config.stationary_mean,
        tail_mean=tail_mean,
        final=sim.final[0].reshape(-1),
        diverged=False,
        norm_trace=sim.norms[0],
    )


@dataclass(frozen=True)
class IterateEnsemble:
    """R independent runs of one RunConfig."""

    config: RunConfig
    per_run_average: np.ndarray  # (R, L), centered tail averages
    per_run_tail_mean: np.ndarray
    per_run_final: np.ndarray
    diverged: np.ndarray  # (R,) bool
    norm_traces: np.ndarray  # (R, K + 1)
    digest: str

    @property
    def n_runs(self) -> int:
        return self.per_run_average.shape[0]

    @property
    def n_nodes(self) -> int:
        return self.config.effective_spec.n_nodes

    @property
    def d(self) -> int:
        return self.config.effective_spec.d

    @property
    def divergence_fraction(self) -> float:
        return float(self.diverged.mean())

    def node_view(self, node: int) -> np.ndarray:
        return node_view(self, node)


def run_ensemble(config: RunConfig, jobs: Optional[int] = None) -> IterateEnsemble:
    """R runs with derived seeds, aggregated in run order."""
    logger.info(
        f"ensemble mode={config.mode.value} N={config.effective_spec.n_nodes} "
        f"eta={config.spec.eta} R={config.R} K={config.K}"
    )
    runs: List[RunSummary] = parallel_map(
        partial(run_single, config), range(config.R), jobs
    )
    ensemble = IterateEnsemble(
        config=config,
        per_run_average=np.stack([r.tail_average for r in runs]),
        per_run_tail_mean=np.stack([r.tail_mean for r in runs]),
        per_run_final=np.stack([r.final for r in runs]),
        diverged=np.array([r.diverged for r in runs], dtype=bool),
        norm_traces=np.stack([r.norm_trace for r in runs]),
        digest=config.digest(),
    )
    if ensemble.diverged.any():
        logger.warning(
            f"{ensemble.diverged.sum()} of {config.R} runs diverged "
            f"(eta={config.spec.eta}, mode={config.mode.value})"
        )
    return ensemble


def node_view(ensemble: IterateEnsemble, node: int) -> np.ndarray:
    """Centered tail averages of one node over non-diverged runs, (R_ok, d)."""
    if not 0 <= node < ensemble.n_nodes:
        raise DimensionMismatchError(f"node {node} outside [0, {ensemble.n_nodes})")
    d = ensemble.d
    block = ensemble.per_run_average[~ensemble.diverged, node * d : (node + 1) * d]
    return block


@dataclass(frozen=True)
class MomentTrace:
    mean: np.ndarray  # (K + 1,)
    stderr: np.ndarray
    n_runs: int


def _trace_moments(values: np.ndarray, p: float) -> MomentTrace:
    powered = values**p
    n = powered.shape[0]
    if n > 1:
        stderr = powered.std(axis=0, ddof=1) / np.sqrt(n)
    else:
        stderr = np.zeros(powered.shape[1])
    return MomentTrace(mean=powered.mean(axis=0), stderr=stderr, n_runs=n)


def moment_trace(ensemble: IterateEnsemble, p: float) -> MomentTrace:
    """Per-step ensemble mean of ||x(k)||^p over non-diverged runs."""
    kept = ensemble.norm_traces[~ensemble.diverged]
    if kept.shape[0] == 0:
        raise PreconditionError("every run diverged")
    return _trace_moments(kept, p)


def _coupled_run(config: RunConfig, same_start: bool, run_index: int) -> np.ndarray:
    sim = _simulate(
        config, run_index, second_start="identical" if same_start else "independent"
    )
    if sim.diverged:
        return np.full(config.K + 1, np.nan)
    return sim.diff_norms


def run_coupled(
    config: RunConfig,
    p: float,
    same_start: bool = False,
    jobs: Optional[int] = None,
) -> MomentTrace:
    """E||x(k) - x~(k)||^p for two chains driven by identical M(k), q(k)."""
    if not p > 0:
        raise PreconditionError(f"p must be positive, got {p}")
    diffs = np.stack(
        parallel_map(partial(_coupled_run, config, same_start), range(config.R), jobs)
    )
    kept = diffs[~np.isnan(diffs).any(axis=1)]
    if kept.shape[0] == 0:
        raise PreconditionError("every coupled run diverged")
    return _trace_moments(kept, p)


def local_gradients(spec: ProblemSpec, x: np.ndarray, draw: StepDraw) -> np.ndarray:
    """Stacked stochastic gradients H_i x_i - q_i / eta."""
    if spec.eta <= 0:
        raise PreconditionError("gradient recovery from q needs eta > 0")
    blocks = np.asarray(x, dtype=float).reshape(spec.n_nodes, spec.d)
    grad = np.einsum("nij,nj->ni", draw.H_blocks, blocks) - draw.q_blocks / spec.eta
    return grad.reshape(-1)


def fw_gradient_check(
    spec: ProblemSpec, mixing: MixingMatrix, x: np.ndarray, draw: StepDraw
) -> float:
    """max |DE step - gradient step on F_W| for the same draw."""
    x = np.asarray(x, dtype=float).reshape(-1)
    if x.shape[0] != spec.dim or mixing.n_nodes != spec.n_nodes:
        raise DimensionMismatchError("x, mixing and spec disagree on N*d")

    mixed = lift_to_blocks(mixing, spec.d)(x)
    grad = local_gradients(spec, x, draw)
    de_step = mixed - spec.eta * grad
    grad_fw = grad + (x - mixed) / spec.eta
    c_step = x - spec.eta * grad_fw
    return float(np.abs(de_step - c_step).max())
