"""Synthetic Gaussian least-squares data and the random objects H, q, M."""

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    NonNegativeFloat,
    PositiveFloat,
    PositiveInt,
    model_validator,
)
from scipy.sparse.linalg import LinearOperator, eigsh

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import DimensionMismatchError, PreconditionError
from heavytail.dsgd.topology import BlockMixing, MixingMatrix, lift_to_blocks

logger = logging.getLogger(__name__)

RngLike = Union[np.random.Generator, Sequence[np.random.Generator]]

# floats per chunk when drawing batches of curvature matrices
CHUNK_FLOATS = 1 << 22


class ProblemSpec(BaseModel):
    """Data law y = x_true' a + eps, a ~ N(0, sigma_i^2 I_d), per-node batches."""

    model_config = ConfigDict(frozen=True)

    d: PositiveInt = 1
    n_nodes: PositiveInt = 1
    batch_sizes: Tuple[PositiveInt, ...]
    eta: NonNegativeFloat
    sigma: PositiveFloat = 1.0
    sigma_y: NonNegativeFloat = 1.0
    # per-node feature std, overrides sigma when set
    sigmas: Optional[Tuple[PositiveFloat, ...]] = None
    x_true: Optional[Tuple[float, ...]] = None

    @model_validator(mode="before")
    @classmethod
    def broadcast_batch(cls, data):
        """Allow a single batch size for every node."""
        if isinstance(data, dict) and isinstance(data.get("batch_sizes"), int):
            data = dict(data)
            data["batch_sizes"] = [data["batch_sizes"]] * int(data.get("n_nodes", 1))
        return data

    @model_validator(mode="after")
    def check_lengths(self):
        if len(self.batch_sizes) != self.n_nodes:
            raise ValueError(
                f"batch_sizes has {len(self.batch_sizes)} entries "
                f"for {self.n_nodes} nodes"
            )
        if self.sigmas is not None and len(self.sigmas) != self.n_nodes:
            raise ValueError(
                f"sigmas has {len(self.sigmas)} entries for {self.n_nodes} nodes"
            )
        if self.x_true is not None and len(self.x_true) != self.d:
            raise ValueError(f"x_true has {len(self.x_true)} entries for d={self.d}")
        return self

    @property
    def batches(self) -> np.ndarray:
        return np.asarray(self.batch_sizes, dtype=int)

    @property
    def node_sigmas(self) -> np.ndarray:
        if self.sigmas is None:
            return np.full(self.n_nodes, float(self.sigma))
        return np.asarray(self.sigmas, dtype=float)

    @property
    def x_star(self) -> np.ndarray:
        if self.x_true is None:
            return np.zeros(self.d)
        return np.asarray(self.x_true, dtype=float)

    @property
    def homogeneous(self) -> bool:
        """All nodes share the same batch size and feature law."""
        return len(set(self.batch_sizes)) == 1 and len(set(self.node_sigmas)) == 1

    @property
    def b(self) -> int:
        if len(set(self.batch_sizes)) != 1:
            raise PreconditionError("batch sizes are heterogeneous")
        return self.batch_sizes[0]

    @property
    def total_batch(self) -> int:
        return int(sum(self.batch_sizes))

    @property
    def dim(self) -> int:
        """Length of the stacked state, N*d."""
        return self.n_nodes * self.d

    def replace(self, **changes) -> "ProblemSpec":
        """Validated copy with some fields changed."""
        data = self.model_dump()
        data.update(changes)
        if "n_nodes" in changes and "batch_sizes" not in changes:
            data["batch_sizes"] = self.b
        if "n_nodes" in changes and "sigmas" not in changes:
            data["sigmas"] = None
        return ProblemSpec.model_validate(data)

    def centralized(self) -> "ProblemSpec":
        """Single node holding the pooled batch sum(b_i)."""
        if len(set(self.node_sigmas)) != 1:
            raise PreconditionError("centralized view needs one feature law")
        return self.replace(
            n_nodes=1,
            batch_sizes=[self.total_batch],
            sigma=float(self.node_sigmas[0]),
            sigmas=None,
        )


@dataclass(frozen=True)
class StepDraw:
    """H_i and q_i for every node at one iteration."""

    H_blocks: np.ndarray  # (N, d, d)
    q_blocks: np.ndarray  # (N, d)

    @property
    def n_nodes(self) -> int:
        return self.H_blocks.shape[0]

    @property
    def d(self) -> int:
        return self.H_blocks.shape[1]

    @property
    def q(self) -> np.ndarray:
        return self.q_blocks.reshape(-1)


def _node_rngs(spec: ProblemSpec, rng: RngLike) -> List[np.random.Generator]:
    if isinstance(rng, np.random.Generator):
        return [rng] * spec.n_nodes
    rngs = list(rng)
    if len(rngs) != spec.n_nodes:
        raise DimensionMismatchError(
            f"{len(rngs)} random streams for {spec.n_nodes} nodes"
        )
    return rngs


def draw_batches(
    spec: ProblemSpec, rng: RngLike, steps: int
) -> Tuple[np.ndarray, np.ndarray]:
    """Features (steps, N, b_max, d) and responses (steps, N, b_max).

    Rows past b_i are zero; they add nothing to a'a or a'y.
    """
    rngs = _node_rngs(spec, rng)
    b_max = int(spec.batches.max())
    features = np.zeros((steps, spec.n_nodes, b_max, spec.d))
    responses = np.zeros((steps, spec.n_nodes, b_max))
    x_star = spec.x_star
    for node, (node_rng, b, sigma) in enumerate(
        zip(rngs, spec.batches, spec.node_sigmas)
    ):
        a = sigma * node_rng.standard_normal((steps, b, spec.d))
        noise = spec.sigma_y * node_rng.standard_normal((steps, b))
        features[:, node, :b] = a
        responses[:, node, :b] = a @ x_star + noise
    return features, responses


def draw_from_batch(
    spec: ProblemSpec, features: np.ndarray, responses: np.ndarray
) -> StepDraw:
    """H_i = (1/b_i) sum a a', q_i = (eta/b_i) sum a y for one step."""
    b = spec.batches.astype(float)
    H = np.einsum("nbi,nbj->nij", features, features) / b[:, None, None]
    q = spec.eta * np.einsum("nbi,nb->ni", features, responses) / b[:, None]
    return StepDraw(H_blocks=H, q_blocks=q)


def sample_step(spec: ProblemSpec, rng: RngLike) -> StepDraw:
    """Fresh H_i, q_i for every node."""
    features, responses = draw_batches(spec, rng, 1)
    return draw_from_batch(spec, features[0], responses[0])


def sample_curvatures(
    spec: ProblemSpec, n: int, rng: np.random.Generator
) -> np.ndarray:
    """n independent curvature draws, shape (n, N, d, d)."""
    H = np.empty((n, spec.n_nodes, spec.d, spec.d))
    for node, (b, sigma) in enumerate(zip(spec.batches, spec.node_sigmas)):
        a = rng.standard_normal((n, b, spec.d))
        H[:, node] = (sigma**2 / b) * np.einsum("mbi,mbj->mij", a, a)
    return H


def curvature_chunk_size(spec: ProblemSpec) -> int:
    per_draw = spec.n_nodes * max(int(spec.batches.max()), spec.d) * spec.d
    return max(1, CHUNK_FLOATS // per_draw)


def iter_curvature_chunks(
    spec: ProblemSpec, n: int, rng: np.random.Generator
) -> Iterator[np.ndarray]:
    """sample_curvatures in memory-bounded chunks from one stream."""
    chunk = curvature_chunk_size(spec)
    done = 0
    while done < n:
        size = min(chunk, n - done)
        yield sample_curvatures(spec, size, rng)
        done += size


def node_spectra(H: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues of each H_i, shape (..., N, d)."""
    if H.shape[-1] == 1:
        return H[..., 0]
    return np.linalg.eigvalsh(H)


def blockdiag(H: np.ndarray) -> np.ndarray:
    """(..., N, d, d) -> (..., Nd, Nd) block diagonal."""
    n_nodes, d = H.shape[-3], H.shape[-1]
    out = np.zeros(H.shape[:-3] + (n_nodes * d, n_nodes * d))
    for node in range(n_nodes):
        block = slice(node * d, (node + 1) * d)
        out[..., block, block] = H[..., node, :, :]
    return out


def dense_step_matrices(
    mixing: MixingMatrix, H: np.ndarray, eta: float
) -> np.ndarray:
    """W (x) I_d - eta blockdiag(H) for a batch of draws."""
    d = H.shape[-1]
    return np.kron(mixing.matrix, np.eye(d)) - eta * blockdiag(H)


def step_norms(mixing: MixingMatrix, H: np.ndarray, eta: float) -> np.ndarray:
    """||W - eta H|| for each draw in a (n, N, d, d) batch."""
    if mixing.n_nodes != H.shape[1]:
        raise DimensionMismatchError(
            f"mixing has {mixing.n_nodes} nodes, draws have {H.shape[1]}"
        )
    if mixing.is_identity:
        return np.abs(1.0 - eta * node_spectra(H)).max(axis=(-1, -2))

    size = H.shape[1] * H.shape[-1]
    chunk = max(1, CHUNK_FLOATS // (size * size))
    norms = np.empty(H.shape[0])
    for start in range(0, H.shape[0], chunk):
        stop = min(start + chunk, H.shape[0])
        matrices = dense_step_matrices(mixing, H[start:stop], eta)
        norms[start:stop] = np.abs(np.linalg.eigvalsh(matrices)).max(axis=-1)
    return norms


class StepOperator:
    """M = W (x) I_d - eta blockdiag(H_i), symmetric on R^{Nd}."""

    def __init__(self, mixing: MixingMatrix, draw: StepDraw, eta: float):
        if mixing.n_nodes != draw.n_nodes:
            raise DimensionMismatchError(
                f"mixing has {mixing.n_nodes} nodes, draw has {draw.n_nodes}"
            )
        self.mixing = mixing
        self.draw = draw
        self.eta = float(eta)
        self.blocks: BlockMixing = lift_to_blocks(mixing, draw.d)

    @property
    def shape(self):
        return self.blocks.shape

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        mixed = self.blocks(x)
        stacked = x.reshape(x.shape[:-1] + (self.draw.n_nodes, self.draw.d))
        local = np.einsum("nij,...nj->...ni", self.draw.H_blocks, stacked)
        return mixed - self.eta * local.reshape(x.shape)

    def to_dense(self) -> np.ndarray:
        if self.shape[0] > get_settings().dense_cap:
            raise DimensionMismatchError(
                f"refusing to materialize a {self.shape[0]}x{self.shape[0]} matrix"
            )
        return dense_step_matrices(self.mixing, self.draw.H_blocks, self.eta)

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(
            self.shape, matvec=self.__call__, rmatvec=self.__call__, dtype=float
        )


def step_operator(
    spec: ProblemSpec, mixing: MixingMatrix, draw: StepDraw
) -> StepOperator:
    if mixing.n_nodes != spec.n_nodes:
        raise DimensionMismatchError(
            f"mixing has {mixing.n_nodes} nodes, spec has {spec.n_nodes}"
        )
    return StepOperator(mixing, draw, spec.eta)


def sample_M(spec: ProblemSpec, mixing: MixingMatrix, rng: RngLike) -> StepOperator:
    """One random step operator M = W - eta H."""
    if mixing.n_nodes != spec.n_nodes:
        raise DimensionMismatchError(
            f"mixing has {mixing.n_nodes} nodes, spec has {spec.n_nodes}"
        )
    return step_operator(spec, mixing, sample_step(spec, rng))


def operator_norm(op: Union[np.ndarray, StepOperator, BlockMixing]) -> float:
    """Largest |eigenvalue| of a symmetric operator."""
    if isinstance(op, np.ndarray):
        if op.ndim == 0 or op.size == 1:
            return float(abs(op.reshape(-1)[0]))
        return float(np.abs(np.linalg.eigvalsh(op)).max())

    size = op.shape[0]
    if size <= get_settings().dense_cap or size < 3:
        return operator_norm(op.to_dense())

    top = eigsh(
        op.as_linear_operator(),
        k=1,
        which="LM",
        return_eigenvectors=False,
        tol=get_settings().eig_tol,
    )
    return float(abs(top[0]))
