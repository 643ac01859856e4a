"""Communication graphs, Laplacians and mixing matrices."""

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import linalg
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import breadth_first_order
from scipy.sparse.linalg import LinearOperator

from heavytail.dsgd.config import get_settings
from heavytail.dsgd.errors import (
    DeltaOutOfRangeError,
    DimensionMismatchError,
    InternalError,
    InvalidGraphError,
)

logger = logging.getLogger(__name__)


class GraphKind(str, Enum):
    complete = "complete"
    star = "star"
    cycle = "cycle"
    hypercube = "hypercube"
    bipartite = "bipartite"
    barbell = "barbell"
    path = "path"


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Graph:
    """Undirected simple connected graph on nodes 0..N-1."""

    adjacency: np.ndarray
    kind: Optional[GraphKind] = None

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum()) // 2

    def degrees(self) -> np.ndarray:
        return self.adjacency.sum(axis=1)

    def neighbors(self, node: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[node])


@dataclass(frozen=True)
class Laplacian:
    """L = D - A with its spectrum in ascending order."""

    graph: Graph
    matrix: np.ndarray
    eigenvalues: np.ndarray

    @property
    def diag(self) -> np.ndarray:
        return np.diag(self.matrix).astype(float)

    @property
    def lambda_max(self) -> float:
        return float(self.eigenvalues[-1])

    @property
    def algebraic_connectivity(self) -> float:
        return float(self.eigenvalues[1]) if len(self.eigenvalues) > 1 else 0.0


@dataclass(frozen=True)
class MixingMatrix:
    """W = I - delta * L, eigenvalues in descending order."""

    matrix: np.ndarray
    delta: float
    eigenvalues: np.ndarray
    laplacian: Optional[Laplacian] = None

    @property
    def n_nodes(self) -> int:
        return self.matrix.shape[0]

    @property
    def is_identity(self) -> bool:
        return self.delta == 0.0 or bool(
            np.array_equal(self.matrix, np.eye(self.n_nodes))
        )

    @property
    def spectral_gap(self) -> float:
        """1 - max(|lambda_2|, |lambda_N|)."""
        if self.n_nodes == 1:
            return 1.0
        return 1.0 - float(max(abs(self.eigenvalues[1]), abs(self.eigenvalues[-1])))


def _check_connected(adjacency: np.ndarray):
    n = adjacency.shape[0]
    order = breadth_first_order(
        csr_matrix(adjacency), 0, directed=False, return_predecessors=False
    )
    if len(order) != n:
        raise InvalidGraphError(f"graph is not connected ({len(order)} of {n} nodes)")


def _hypercube(levels: int) -> np.ndarray:
    adjacency = np.zeros((1, 1), dtype=int)
    for _ in range(levels):
        size = adjacency.shape[0]
        eye = np.eye(size, dtype=int)
        adjacency = np.block([[adjacency, eye], [eye, adjacency]])
    return adjacency


def build_graph(kind: GraphKind, n_nodes: int) -> Graph:
    """Build one of the named graph families on N nodes."""
    kind = GraphKind(kind)
    n = int(n_nodes)
    if n < 1:
        raise InvalidGraphError("N must be >= 1")

    if n == 1:
        if kind in (GraphKind.bipartite, GraphKind.barbell):
            raise InvalidGraphError(f"{kind.value} graph needs at least 2 nodes")
        return Graph(adjacency=_frozen(np.zeros((1, 1), dtype=int)), kind=kind)

    idx = np.arange(n)
    if kind is GraphKind.complete:
        adjacency = np.ones((n, n), dtype=int) - np.eye(n, dtype=int)

    elif kind is GraphKind.star:
        adjacency = np.zeros((n, n), dtype=int)
        adjacency[0, 1:] = 1
        adjacency[1:, 0] = 1

    elif kind is GraphKind.path:
        adjacency = (np.abs(idx[:, None] - idx[None, :]) == 1).astype(int)

    elif kind is GraphKind.cycle:
        gap = np.abs(idx[:, None] - idx[None, :])
        adjacency = ((gap == 1) | (gap == n - 1)).astype(int)

    elif kind is GraphKind.hypercube:
        levels = int(round(np.log2(n)))
        if 2**levels != n:
            raise InvalidGraphError(f"hypercube needs N = 2^n, got {n}")
        adjacency = _hypercube(levels)

    elif kind is GraphKind.bipartite:
        if n % 2:
            raise InvalidGraphError(f"bipartite graph needs even N, got {n}")
        half = n // 2
        adjacency = np.zeros((n, n), dtype=int)
        adjacency[:half, half:] = 1
        adjacency[half:, :half] = 1

    elif kind is GraphKind.barbell:
        if n % 2:
            raise InvalidGraphError(f"barbell graph needs even N, got {n}")
        half = n // 2
        clique = np.ones((half, half), dtype=int) - np.eye(half, dtype=int)
        adjacency = np.zeros((n, n), dtype=int)
        adjacency[:half, :half] = clique
        adjacency[half:, half:] = clique
        # bridge between node 1 and node n+1 (0-based 0 and half)
        adjacency[0, half] = adjacency[half, 0] = 1

    else:  # pragma: no cover
        raise InvalidGraphError(f"unknown graph kind {kind}")

    _check_connected(adjacency)
    logger.debug(f"built {kind.value} graph on {n} nodes")
    return Graph(adjacency=_frozen(adjacency), kind=kind)


def load_adjacency(matrix: Sequence[Sequence[float]]) -> Graph:
    """Validate an explicit 0/1 adjacency matrix."""
    adjacency = np.asarray(matrix)
    if adjacency.ndim != 2 or adjacency.shape[0] != adjacency.shape[1]:
        raise InvalidGraphError("adjacency must be a square matrix")
    if not np.isin(adjacency, (0, 1)).all():
        raise InvalidGraphError("adjacency entries must be 0 or 1")
    adjacency = adjacency.astype(int)
    if not np.array_equal(adjacency, adjacency.T):
        raise InvalidGraphError("adjacency must be symmetric")
    if np.any(np.diag(adjacency)):
        raise InvalidGraphError("adjacency must have a zero diagonal")
    if adjacency.shape[0] > 1:
        _check_connected(adjacency)
    return Graph(adjacency=_frozen(adjacency), kind=None)


def laplacian(graph: Graph) -> Laplacian:
    """Graph Laplacian and its ascending spectrum."""
    adjacency = graph.adjacency
    matrix = np.diag(adjacency.sum(axis=1)) - adjacency
    eigenvalues = linalg.eigh(matrix.astype(float), eigvals_only=True)

    tol = get_settings().eig_tol * max(1.0, float(eigenvalues[-1]))
    if eigenvalues[0] < -tol:
        raise InternalError(f"Laplacian has negative eigenvalue {eigenvalues[0]}")
    eigenvalues = np.where(np.abs(eigenvalues) < tol, 0.0, eigenvalues)

    return Laplacian(
        graph=graph, matrix=_frozen(matrix), eigenvalues=_frozen(eigenvalues)
    )


def max_delta(lap: Laplacian) -> float:
    """Supremum of admissible delta, 2 / lambda_max(L)."""
    if lap.lambda_max <= 0:
        raise InternalError(
            f"lambda_max(L) = {lap.lambda_max:.3g} on {lap.graph.n_nodes} node(s); "
            "max_delta needs a connected graph with N >= 2"
        )
    return 2.0 / lap.lambda_max


def mixing_matrix(lap: Laplacian, delta: float) -> MixingMatrix:
    """W = I - delta * L for 0 <= delta < 2 / lambda_max(L).

    A single node has L = 0 and W = 1 for every delta >= 0.
    """
    delta = float(delta)
    n = lap.graph.n_nodes
    if n == 1:
        if delta < 0:
            raise DeltaOutOfRangeError(f"delta={delta} is negative")
        return MixingMatrix(
            matrix=_frozen(np.eye(1)),
            delta=delta,
            eigenvalues=_frozen(np.ones(1)),
            laplacian=lap,
        )
    upper = max_delta(lap)
    if not 0.0 <= delta < upper:
        raise DeltaOutOfRangeError(
            f"delta={delta} outside [0, {upper:.6g}) for this graph"
        )

    matrix = np.eye(n) - delta * lap.matrix
    tol = get_settings().delta_tol * max(1.0, n * delta * lap.lambda_max)
    if not (
        np.allclose(matrix, matrix.T, rtol=0, atol=tol)
        and np.allclose(matrix.sum(axis=1), 1.0, rtol=0, atol=tol)
    ):
        raise InternalError("mixing matrix is not symmetric doubly stochastic")

    eigenvalues = (1.0 - delta * lap.eigenvalues)[::-1]
    return MixingMatrix(
        matrix=_frozen(matrix),
        delta=delta,
        eigenvalues=_frozen(eigenvalues),
        laplacian=lap,
    )


def identity_mixing(n_nodes: int) -> MixingMatrix:
    """Mixing for disconnected nodes."""
    return MixingMatrix(
        matrix=_frozen(np.eye(n_nodes)),
        delta=0.0,
        eigenvalues=_frozen(np.ones(n_nodes)),
    )


def graph_mixing(kind: GraphKind, n_nodes: int, delta: float) -> MixingMatrix:
    """Shorthand for mixing_matrix(laplacian(build_graph(kind, N)), delta)."""
    return mixing_matrix(laplacian(build_graph(kind, n_nodes)), delta)


class BlockMixing:
    """W (x) I_d acting on stacked node vectors of length N*d."""

    def __init__(self, mixing: MixingMatrix, d: int):
        self.mixing = mixing
        self.d = int(d)

    @property
    def shape(self):
        size = self.mixing.n_nodes * self.d
        return (size, size)

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x)
        n = self.mixing.n_nodes
        if x.shape[-1] != n * self.d:
            raise DimensionMismatchError(
                f"expected trailing length {n * self.d}, got {x.shape[-1]}"
            )
        blocks = x.reshape(x.shape[:-1] + (n, self.d))
        return (self.mixing.matrix @ blocks).reshape(x.shape)

    def to_dense(self) -> np.ndarray:
        size = self.shape[0]
        if size > get_settings().dense_cap:
            raise DimensionMismatchError(
                f"refusing to materialize a {size}x{size} block matrix"
            )
        return np.kron(self.mixing.matrix, np.eye(self.d))

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(
            self.shape, matvec=self.__call__, rmatvec=self.__call__, dtype=float
        )


def lift_to_blocks(mixing: MixingMatrix, d: int) -> BlockMixing:
    """Block operator W (x) I_d."""
    return BlockMixing(mixing, d)
