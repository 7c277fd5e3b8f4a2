"""
Random time-varying undirected communication networks.

Two i.i.d. families are provided: independent Bernoulli activation of the edges
of a fixed base graph (GraphDistribution) and a finite mixture of fixed graphs
(GraphMixture). Both expose the same sampling / mean interface.
"""
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional, Sequence, Tuple, Union

import networkx as nx
import numpy as np
from scipy import linalg
from scipy.sparse import identity, kron, csr_matrix
from scipy.sparse.linalg import LinearOperator

from app.core.errors import DimensionMismatch, NotConnected, ProblemTooLarge

logger = logging.getLogger(__name__)

CONNECTIVITY_TOL = 1e-10
DENSE_STACK_LIMIT = 512

Edge = Tuple[int, int]


def _normalize_edges(num_agents: int, edges: Iterable[Sequence[int]]) -> Tuple[Edge, ...]:
    normalized = []
    seen = set()
    for edge in edges:
        i, j = int(edge[0]), int(edge[1])
        if i == j:
            raise ValueError(f"self-loop on agent {i} is not allowed")
        if not (0 <= i < num_agents and 0 <= j < num_agents):
            raise ValueError(f"edge ({i}, {j}) references an agent outside 0..{num_agents - 1}")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ValueError(f"duplicate edge {key}")
        seen.add(key)
        normalized.append(key)
    return tuple(normalized)


def laplacian_from_adjacency(adjacency: np.ndarray) -> np.ndarray:
    return np.diag(adjacency.sum(axis=1)) - adjacency


@dataclass(frozen=True)
class LaplacianView:
    laplacian: np.ndarray

    @property
    def num_agents(self) -> int:
        return self.laplacian.shape[0]

    @cached_property
    def eigenvalues(self) -> np.ndarray:
        return linalg.eigvalsh(self.laplacian)

    @cached_property
    def algebraic_connectivity(self) -> float:
        if self.num_agents < 2:
            # A single node is connected; there is no second eigenvalue.
            return float("inf")
        return float(self.eigenvalues[1])

    def apply(self, blocks: np.ndarray) -> np.ndarray:
        """Rows |N_i| x_i - sum_{j in N_i} x_j for an (N, q) array of agent blocks"""
        return self.laplacian @ blocks


@dataclass(frozen=True)
class GraphDistribution:
    """Independent Bernoulli activation of every edge of a fixed base graph"""
    num_agents: int
    base_edges: Tuple[Edge, ...]
    edge_probability: np.ndarray

    def __post_init__(self):
        if self.num_agents < 1:
            raise ValueError("num_agents must be at least 1")
        edges = _normalize_edges(self.num_agents, self.base_edges)
        probabilities = np.broadcast_to(
            np.asarray(self.edge_probability, dtype=float), (len(edges),)
        ).copy()
        if np.any(probabilities <= 0) or np.any(probabilities > 1):
            raise ValueError("edge probabilities must lie in (0, 1]")
        probabilities.setflags(write=False)
        object.__setattr__(self, "base_edges", edges)
        object.__setattr__(self, "edge_probability", probabilities)

    @cached_property
    def _endpoints(self) -> Tuple[np.ndarray, np.ndarray]:
        if not self.base_edges:
            return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
        pairs = np.asarray(self.base_edges, dtype=int)
        return pairs[:, 0], pairs[:, 1]

    def sample_adjacency(self, rng: np.random.Generator) -> np.ndarray:
        active = rng.random(len(self.base_edges)) < self.edge_probability
        rows, cols = self._endpoints
        adjacency = np.zeros((self.num_agents, self.num_agents))
        adjacency[rows[active], cols[active]] = 1.0
        adjacency[cols[active], rows[active]] = 1.0
        return adjacency

    def mean_adjacency(self) -> np.ndarray:
        rows, cols = self._endpoints
        adjacency = np.zeros((self.num_agents, self.num_agents))
        adjacency[rows, cols] = self.edge_probability
        adjacency[cols, rows] = self.edge_probability
        return adjacency

    def base_graph(self) -> nx.Graph:
        graph = nx.Graph()
        graph.add_nodes_from(range(self.num_agents))
        graph.add_edges_from(self.base_edges)
        return graph

    def with_edge(self, i: int, j: int, probability: float = 1.0) -> "GraphDistribution":
        return GraphDistribution(
            self.num_agents,
            self.base_edges + ((i, j),),
            np.append(self.edge_probability, probability),
        )

    @classmethod
    def from_edge_list(
        cls, num_agents: int, edges: Iterable[Sequence[float]], default_probability: float = 1.0
    ) -> "GraphDistribution":
        """Build from (i, j) or (i, j, p) triples"""
        pairs, probabilities = [], []
        for edge in edges:
            pairs.append((int(edge[0]), int(edge[1])))
            probabilities.append(float(edge[2]) if len(edge) > 2 else default_probability)
        return cls(num_agents, tuple(pairs), np.asarray(probabilities))

    @classmethod
    def from_networkx(cls, graph: nx.Graph, probability: float = 1.0) -> "GraphDistribution":
        mapping = {node: idx for idx, node in enumerate(sorted(graph.nodes))}
        edges = tuple((mapping[u], mapping[v]) for u, v in graph.edges)
        return cls(graph.number_of_nodes(), edges, np.full(len(edges), probability))


@dataclass(frozen=True)
class GraphMixture:
    """Draws one of a finite set of fixed graphs with the given weights"""
    num_agents: int
    components: Tuple[Tuple[Edge, ...], ...]
    weights: np.ndarray = field(default=None)

    def __post_init__(self):
        components = tuple(_normalize_edges(self.num_agents, edges) for edges in self.components)
        if not components:
            raise ValueError("a graph mixture needs at least one component")
        weights = (
            np.full(len(components), 1.0 / len(components))
            if self.weights is None
            else np.asarray(self.weights, dtype=float)
        )
        if weights.shape != (len(components),) or np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("mixture weights must be nonnegative and sum to 1, one per component")
        weights.setflags(write=False)
        object.__setattr__(self, "components", components)
        object.__setattr__(self, "weights", weights)

    @cached_property
    def _adjacencies(self) -> Tuple[np.ndarray, ...]:
        adjacencies = []
        for edges in self.components:
            adjacency = np.zeros((self.num_agents, self.num_agents))
            for i, j in edges:
                adjacency[i, j] = adjacency[j, i] = 1.0
            adjacency.setflags(write=False)
            adjacencies.append(adjacency)
        return tuple(adjacencies)

    def sample_adjacency(self, rng: np.random.Generator) -> np.ndarray:
        index = int(rng.choice(len(self.components), p=self.weights))
        return self._adjacencies[index].copy()

    def mean_adjacency(self) -> np.ndarray:
        return sum(w * a for w, a in zip(self.weights, self._adjacencies))


RandomGraph = Union[GraphDistribution, GraphMixture]


def sample_graph(dist: RandomGraph, rng: np.random.Generator) -> LaplacianView:
    """Laplacian of one i.i.d. draw; empty graphs are legal"""
    return LaplacianView(laplacian_from_adjacency(dist.sample_adjacency(rng)))


def mean_laplacian(dist: RandomGraph) -> LaplacianView:
    """Closed-form E[L(k)] = H - W from the edge probabilities, no sampling"""
    return LaplacianView(laplacian_from_adjacency(dist.mean_adjacency()))


def assert_mean_connectivity(dist: RandomGraph) -> float:
    """
    Check that the mean connectivity graph is connected.

    Returns:
        lambda_2 of the mean Laplacian

    Raises:
        NotConnected: lambda_2 <= 1e-10
    """
    view = mean_laplacian(dist)
    lambda_2 = view.algebraic_connectivity
    if lambda_2 <= CONNECTIVITY_TOL:
        support = nx.from_numpy_array(dist.mean_adjacency() > 0)
        parts = [sorted(c) for c in nx.connected_components(support)]
        raise NotConnected(
            f"mean communication graph is not connected (lambda_2 = {lambda_2:.3e}); components: {parts}"
        )
    return lambda_2


def laplacian_pseudoinverse(view: LaplacianView) -> np.ndarray:
    """L^dagger = (L + 11^T/N)^{-1} - 11^T/N, valid for a connected graph"""
    n = view.num_agents
    if view.algebraic_connectivity <= CONNECTIVITY_TOL:
        raise NotConnected("Laplacian pseudo-inverse requires a connected graph")
    averaging = np.full((n, n), 1.0 / n)
    return linalg.inv(view.laplacian + averaging) - averaging


class StackedLaplacian:
    """
    The block operator L (x) I_q applied without forming the Nq x Nq matrix.

    Stacked vectors are handled as (N, q) arrays of agent blocks, so the
    product is (L @ X) in block form.
    """

    def __init__(self, laplacian: np.ndarray, block_dim: int):
        if block_dim < 1:
            raise ValueError("block dimension must be at least 1")
        self.laplacian = np.asarray(laplacian, dtype=float)
        self.block_dim = block_dim

    @property
    def num_agents(self) -> int:
        return self.laplacian.shape[0]

    @property
    def shape(self) -> Tuple[int, int]:
        size = self.num_agents * self.block_dim
        return size, size

    def _as_blocks(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape == (self.num_agents, self.block_dim):
            return x
        if x.shape == (self.shape[0],):
            return x.reshape(self.num_agents, self.block_dim)
        raise DimensionMismatch(
            f"expected shape ({self.num_agents}, {self.block_dim}) or ({self.shape[0]},), got {x.shape}"
        )

    def matvec(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        product = self.laplacian @ self._as_blocks(x)
        return product if x.ndim == 2 else product.ravel()

    def quadratic(self, x: np.ndarray) -> float:
        blocks = self._as_blocks(x)
        return float(np.sum(blocks * (self.laplacian @ blocks)))

    def to_sparse(self) -> csr_matrix:
        return kron(csr_matrix(self.laplacian), identity(self.block_dim), format="csr")

    def to_dense(self) -> np.ndarray:
        if self.shape[0] > DENSE_STACK_LIMIT:
            raise ProblemTooLarge(
                f"refusing to materialize a {self.shape[0]}x{self.shape[0]} stacked Laplacian "
                f"(limit N*q <= {DENSE_STACK_LIMIT})"
            )
        return np.kron(self.laplacian, np.eye(self.block_dim))

    def as_linear_operator(self) -> LinearOperator:
        return LinearOperator(self.shape, matvec=lambda x: self.matvec(np.ravel(x)), dtype=float)


def stacked_laplacian(view: LaplacianView, block_dim: int) -> StackedLaplacian:
    return StackedLaplacian(view.laplacian, block_dim)


def ring_with_chord(num_agents: int = 5, probability: float = 1.0) -> GraphDistribution:
    graph = nx.cycle_graph(num_agents)
    if num_agents > 3:
        graph.add_edge(0, 2)
    return GraphDistribution.from_networkx(graph, probability)


def empty_graph(num_agents: int = 1) -> GraphDistribution:
    return GraphDistribution(num_agents, (), np.zeros(0))


def mean_graph_summary(dist: RandomGraph) -> dict:
    view = mean_laplacian(dist)
    lambda_2: Optional[float] = view.algebraic_connectivity
    return {
        "num_agents": view.num_agents,
        "algebraic_connectivity": lambda_2 if np.isfinite(lambda_2) else None,
        "max_eigenvalue": float(view.eigenvalues[-1]),
    }
