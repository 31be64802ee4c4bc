"""Conversation graphs over agent-instance nodes.

Node ``i`` stands for agent ``i % K`` in round ``i // K`` (0-based). An edge
``i -> j`` means the output of node ``i`` is part of the input of node ``j``.
Edges may stay within a round or go one round forward; never backward,
never skipping a round, never a self-loop.
"""

from __future__ import annotations

import heapq
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .exceptions import CycleError, StructuralError

__all__ = [
    "GraphShape",
    "ConversationGraph",
    "node_round",
    "node_agent",
    "node_index",
    "build_feasibility_mask",
    "feasible_edges",
    "feasible_edge_count",
    "validate_dag",
    "topological_workflow",
    "upstream_nodes",
    "downstream_nodes",
    "write_graph_csv",
    "read_graph_csv",
]


@dataclass(frozen=True)
class GraphShape:
    """``num_agents`` agents per round over ``num_rounds`` rounds."""

    num_agents: int
    num_rounds: int

    def __post_init__(self):
        for name in ("num_agents", "num_rounds"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
                raise StructuralError(f"{name} must be an integer, got {value!r}")
            if value < 1:
                raise StructuralError(f"{name} must be >= 1, got {value}")
            object.__setattr__(self, name, int(value))

    @property
    def num_nodes(self) -> int:
        return self.num_agents * self.num_rounds

    def check_node(self, i) -> int:
        if isinstance(i, bool) or not isinstance(i, (int, np.integer)):
            raise StructuralError(f"node index must be an integer, got {i!r}")
        if not 0 <= i < self.num_nodes:
            raise StructuralError(f"node {i} out of range [0, {self.num_nodes})")
        return int(i)


def node_round(i: int, num_agents: int) -> int:
    return i // num_agents


def node_agent(i: int, num_agents: int) -> int:
    return i % num_agents


def node_index(round_: int, agent: int, num_agents: int) -> int:
    return round_ * num_agents + agent


def build_feasibility_mask(shape: GraphShape) -> np.ndarray:
    """Boolean ``TK x TK`` matrix of structurally permitted edges."""
    rounds = np.arange(shape.num_nodes) // shape.num_agents
    gap = rounds[None, :] - rounds[:, None]
    mask = (gap == 0) | (gap == 1)
    np.fill_diagonal(mask, False)
    mask.setflags(write=False)
    return mask


def feasible_edge_count(shape: GraphShape) -> int:
    k, t = shape.num_agents, shape.num_rounds
    return t * k * (k - 1) + (t - 1) * k * k


def feasible_edges(shape: GraphShape) -> list[tuple[int, int]]:
    """Feasible edges in row-major order (ascending source, then target)."""
    rows, cols = np.nonzero(build_feasibility_mask(shape))
    return list(zip(rows.tolist(), cols.tolist()))


@dataclass(frozen=True, eq=False)
class ConversationGraph:
    """Adjacency over ``shape.num_nodes`` nodes.

    The bare constructor only checks dimensions so that invalid graphs can
    still be represented and rejected by :func:`validate_dag`. Use
    :meth:`from_edges` or :meth:`empty` to get a checked graph.
    """

    shape: GraphShape
    adjacency: np.ndarray

    def __post_init__(self):
        adj = np.array(self.adjacency, dtype=bool)
        n = self.shape.num_nodes
        if adj.shape != (n, n):
            raise StructuralError(
                f"adjacency has shape {adj.shape}, expected {(n, n)} for {self.shape}"
            )
        adj.setflags(write=False)
        object.__setattr__(self, "adjacency", adj)

    @classmethod
    def empty(cls, shape: GraphShape) -> "ConversationGraph":
        return cls(shape, np.zeros((shape.num_nodes, shape.num_nodes), dtype=bool))

    @classmethod
    def from_edges(
        cls, shape: GraphShape, edges: Iterable[tuple[int, int]], check: bool = True
    ) -> "ConversationGraph":
        adj = np.zeros((shape.num_nodes, shape.num_nodes), dtype=bool)
        for i, j in edges:
            adj[shape.check_node(i), shape.check_node(j)] = True
        graph = cls(shape, adj)
        if check and not validate_dag(graph):
            raise StructuralError("edges are infeasible or contain a cycle")
        return graph

    @property
    def edges(self) -> list[tuple[int, int]]:
        rows, cols = np.nonzero(self.adjacency)
        return list(zip(rows.tolist(), cols.tolist()))

    @property
    def edge_count(self) -> int:
        return int(self.adjacency.sum())

    def __eq__(self, other):
        if not isinstance(other, ConversationGraph):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash((self.shape, self.adjacency.tobytes()))

    def __repr__(self):
        return f"ConversationGraph(K={self.shape.num_agents}, T={self.shape.num_rounds}, edges={self.edges})"


def _kahn(adjacency: np.ndarray) -> list[int]:
    n = adjacency.shape[0]
    indegree = adjacency.sum(axis=0).astype(int).tolist()
    children = [np.flatnonzero(adjacency[i]).tolist() for i in range(n)]
    ready = [i for i in range(n) if indegree[i] == 0]
    heapq.heapify(ready)
    order = []
    while ready:
        i = heapq.heappop(ready)
        order.append(i)
        for j in children[i]:
            indegree[j] -= 1
            if indegree[j] == 0:
                heapq.heappush(ready, j)
    return order


def validate_dag(graph: ConversationGraph) -> bool:
    """True iff every edge is feasible and the graph has no directed cycle."""
    n = graph.shape.num_nodes
    if graph.adjacency.shape != (n, n):
        raise StructuralError("adjacency does not match shape")
    if np.any(graph.adjacency & ~build_feasibility_mask(graph.shape)):
        return False
    return len(_kahn(graph.adjacency)) == n


def topological_workflow(graph: ConversationGraph) -> list[int]:
    """Kahn's order with the smallest ready index first.

    Raises :class:`CycleError` if the graph has a cycle.
    """
    order = _kahn(graph.adjacency)
    if len(order) != graph.shape.num_nodes:
        raise CycleError("conversation graph contains a cycle; no workflow exists")
    return order


def upstream_nodes(graph: ConversationGraph, j: int) -> list[int]:
    j = graph.shape.check_node(j)
    return np.flatnonzero(graph.adjacency[:, j]).tolist()


def downstream_nodes(graph: ConversationGraph, i: int) -> list[int]:
    i = graph.shape.check_node(i)
    return np.flatnonzero(graph.adjacency[i]).tolist()


# -- CSV format shared by graphs and heatmaps --------------------------------

_HEADER_RE = re.compile(r"^#\s*shape\s+K=(\d+)\s+T=(\d+)\s*$")


def format_header(shape: GraphShape) -> str:
    return f"# shape K={shape.num_agents} T={shape.num_rounds}"


def read_matrix_csv(path, dtype=float) -> tuple[GraphShape, np.ndarray]:
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise StructuralError(f"{path}: empty file")
    match = _HEADER_RE.match(lines[0])
    if match is None:
        raise StructuralError(f"{path}: expected '# shape K=<K> T=<T>' header, got {lines[0]!r}")
    shape = GraphShape(int(match.group(1)), int(match.group(2)))
    rows = [line for line in lines[1:] if line.strip()]
    n = shape.num_nodes
    if len(rows) != n:
        raise StructuralError(f"{path}: expected {n} rows, found {len(rows)}")
    values = []
    for lineno, row in enumerate(rows, start=2):
        cells = row.split(",")
        if len(cells) != n:
            raise StructuralError(f"{path}:{lineno}: expected {n} columns, found {len(cells)}")
        try:
            values.append([dtype(c.strip()) for c in cells])
        except ValueError as exc:
            raise StructuralError(f"{path}:{lineno}: {exc}") from None
    return shape, np.array(values, dtype=float).reshape(n, n)


def write_graph_csv(graph: ConversationGraph, path) -> None:
    lines = [format_header(graph.shape)]
    lines.extend(",".join(str(int(v)) for v in row) for row in graph.adjacency)
    Path(path).write_text("\n".join(lines) + "\n")


def read_graph_csv(path, check: bool = True) -> ConversationGraph:
    shape, values = read_matrix_csv(path, dtype=int)
    if not np.isin(values, (0, 1)).all():
        raise StructuralError(f"{path}: graph entries must be 0 or 1")
    graph = ConversationGraph(shape, values.astype(bool))
    if check and not validate_dag(graph):
        raise StructuralError(f"{path}: graph is infeasible or cyclic")
    return graph
