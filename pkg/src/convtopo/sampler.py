"""Edge-probability heatmaps and cycle-safe DAG sampling.

Feasible edges are visited in a fixed row-major order. An edge that would
close a cycle given the edges accepted so far is skipped without a draw and
contributes nothing to the log-probability; every other edge is a Bernoulli
draw with its heatmap probability. With the order fixed, each graph is
produced by exactly one sequence of draws, so the path probability is the
graph probability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .exceptions import CapacityError, DomainError, InconsistencyError, StructuralError
from .topology import (
    ConversationGraph,
    GraphShape,
    build_feasibility_mask,
    format_header,
    read_matrix_csv,
)

__all__ = [
    "Heatmap",
    "SampledGraph",
    "SampleBatch",
    "INCLUDED",
    "EXCLUDED",
    "SKIPPED",
    "edge_order",
    "sample_dag",
    "sample_batch",
    "enumerate_distribution",
    "enumerate_paths",
    "grad_log_prob",
    "score_vectors",
    "make_rng",
    "write_heatmap_csv",
    "read_heatmap_csv",
]

INCLUDED = 1
EXCLUDED = -1
SKIPPED = 0

MAX_ENUMERATION_EDGES = 20


@lru_cache(maxsize=256)
def _edge_order(shape: GraphShape) -> tuple[np.ndarray, np.ndarray]:
    rows, cols = np.nonzero(build_feasibility_mask(shape))
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


def edge_order(shape: GraphShape) -> tuple[np.ndarray, np.ndarray]:
    """Row and column index arrays of feasible edges in sampling order."""
    return _edge_order(shape)


def make_rng(seed) -> np.random.Generator:
    """Accept a Generator, a SeedSequence, an int, or a sequence of ints."""
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True, eq=False)
class Heatmap:
    """Matrix of edge probabilities, zero off the feasible support."""

    shape: GraphShape
    values: np.ndarray

    def __post_init__(self):
        n = self.shape.num_nodes
        values = np.array(self.values, dtype=float)
        if values.shape != (n, n):
            raise StructuralError(f"heatmap has shape {values.shape}, expected {(n, n)}")
        if not np.all(np.isfinite(values)):
            raise DomainError("heatmap contains non-finite entries")
        mask = build_feasibility_mask(self.shape)
        if np.any(values[~mask] != 0.0):
            raise StructuralError("heatmap has nonzero entries outside the feasible support")
        support = values[mask]
        if np.any((support < 0.0) | (support > 1.0)):
            raise DomainError("heatmap entries must lie in [0, 1]")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, shape: GraphShape, p: float = 0.5) -> "Heatmap":
        return cls(shape, np.where(build_feasibility_mask(shape), float(p), 0.0))

    @classmethod
    def project(cls, shape: GraphShape, values) -> "Heatmap":
        """Zero every infeasible entry, then validate."""
        values = np.where(build_feasibility_mask(shape), np.asarray(values, dtype=float), 0.0)
        return cls(shape, values)

    @property
    def mask(self) -> np.ndarray:
        return build_feasibility_mask(self.shape)

    @property
    def support_values(self) -> np.ndarray:
        """Probabilities of feasible edges in sampling order."""
        rows, cols = edge_order(self.shape)
        return self.values[rows, cols]

    def __eq__(self, other):
        if not isinstance(other, Heatmap):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"Heatmap(K={self.shape.num_agents}, T={self.shape.num_rounds})"


@dataclass(frozen=True, eq=False)
class SampledGraph:
    """A sampled graph, its path log-probability, and per-edge decisions.

    ``decisions[e]`` is INCLUDED, EXCLUDED or SKIPPED for the ``e``-th
    feasible edge of :func:`edge_order`.
    """

    graph: ConversationGraph
    log_prob: float
    decisions: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, SampledGraph):
            return NotImplemented
        return (
            self.graph == other.graph
            and self.log_prob == other.log_prob
            and np.array_equal(self.decisions, other.decisions)
        )


def _sample_from_uniforms(heatmap: Heatmap, u: np.ndarray) -> SampledGraph:
    shape = heatmap.shape
    n = shape.num_nodes
    rows, cols = edge_order(shape)
    values = heatmap.values
    # reach[a] is a bitset of nodes reachable from a, a included
    reach = [1 << a for a in range(n)]
    adjacency = np.zeros((n, n), dtype=bool)
    decisions = np.zeros(len(rows), dtype=np.int8)
    log_p = 0.0
    for e, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
        if (reach[j] >> i) & 1:
            continue
        h = float(values[i, j])
        if u[e] < h:
            adjacency[i, j] = True
            decisions[e] = INCLUDED
            log_p += math.log(h)
            bit_i, reach_j = 1 << i, reach[j]
            for a in range(n):
                if reach[a] & bit_i:
                    reach[a] |= reach_j
        else:
            decisions[e] = EXCLUDED
            log_p += math.log1p(-h)
    decisions.setflags(write=False)
    return SampledGraph(ConversationGraph(shape, adjacency), log_p, decisions)


def sample_dag(heatmap: Heatmap, rng=None) -> SampledGraph:
    """Draw one DAG from ``heatmap``.

    One uniform is drawn per feasible edge up front; uniforms belonging to
    skipped edges are discarded, so the draw for an edge is unaffected by
    earlier skips and the result depends only on the seed.
    """
    rng = make_rng(rng)
    u = rng.random(len(edge_order(heatmap.shape)[0]))
    return _sample_from_uniforms(heatmap, u)


@dataclass(frozen=True)
class SampleBatch:
    """``n`` samples as stacked arrays (adjacency ``(n, TK, TK)``)."""

    shape: GraphShape
    adjacency: np.ndarray
    log_prob: np.ndarray
    decisions: np.ndarray

    def __len__(self):
        return len(self.log_prob)

    @property
    def edge_counts(self) -> np.ndarray:
        return self.adjacency.sum(axis=(1, 2))

    def __getitem__(self, k) -> SampledGraph:
        return SampledGraph(
            ConversationGraph(self.shape, self.adjacency[k]),
            float(self.log_prob[k]),
            self.decisions[k],
        )


def _batch_from_uniforms(heatmap: Heatmap, u: np.ndarray) -> SampleBatch:
    shape = heatmap.shape
    n = shape.num_nodes
    if n > 62:
        raise CapacityError("vectorized sampling supports at most 62 nodes")
    rows, cols = edge_order(shape)
    num = u.shape[0]
    reach = np.broadcast_to(np.left_shift(np.int64(1), np.arange(n, dtype=np.int64)), (num, n)).copy()
    decisions = np.zeros((num, len(rows)), dtype=np.int8)
    log_p = np.zeros(num)
    adjacency = np.zeros((num, n, n), dtype=bool)
    for e, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
        h = float(heatmap.values[i, j])
        open_ = ((reach[:, j] >> i) & 1) == 0
        inc = open_ & (u[:, e] < h)
        exc = open_ & ~inc
        decisions[inc, e] = INCLUDED
        decisions[exc, e] = EXCLUDED
        if h > 0.0:
            log_p[inc] += math.log(h)
        if h < 1.0:
            log_p[exc] += math.log1p(-h)
        if inc.any():
            adjacency[inc, i, j] = True
            sub = reach[inc]
            hits = ((sub >> i) & 1).astype(bool)
            sub |= np.where(hits, sub[:, j : j + 1], 0)
            reach[inc] = sub
    return SampleBatch(shape, adjacency, log_p, decisions)


def sample_batch(heatmap: Heatmap, n_samples: int, rng=None) -> SampleBatch:
    """Vectorized equivalent of ``n_samples`` calls to :func:`sample_dag`.

    Row ``k`` consumes the ``k``-th block of uniforms from ``rng``, so it
    matches ``sample_dag`` fed the same uniforms.
    """
    rng = make_rng(rng)
    u = rng.random((n_samples, len(edge_order(heatmap.shape)[0])))
    return _batch_from_uniforms(heatmap, u)


def enumerate_paths(heatmap: Heatmap, max_edges: int = MAX_ENUMERATION_EDGES):
    """Every sample path with nonzero probability.

    Returns ``(edge_bits, probs)``: ``edge_bits[s]`` has bit ``e`` set when
    the ``e``-th feasible edge is present in outcome ``s``.
    """
    shape = heatmap.shape
    rows, cols = edge_order(shape)
    if len(rows) > max_edges:
        raise CapacityError(
            f"{len(rows)} feasible edges exceeds the enumeration bound of {max_edges}"
        )
    n = shape.num_nodes
    reach = np.left_shift(np.int64(1), np.arange(n, dtype=np.int64))[None, :].copy()
    bits = np.zeros(1, dtype=np.int64)
    probs = np.ones(1)
    for e, (i, j) in enumerate(zip(rows.tolist(), cols.tolist())):
        h = float(heatmap.values[i, j])
        open_ = ((reach[:, j] >> i) & 1) == 0
        # skipped paths pass through unchanged
        keep_reach, keep_bits, keep_probs = reach[~open_], bits[~open_], probs[~open_]
        o_reach, o_bits, o_probs = reach[open_], bits[open_], probs[open_]
        parts_reach, parts_bits, parts_probs = [keep_reach], [keep_bits], [keep_probs]
        if h < 1.0:
            parts_reach.append(o_reach)
            parts_bits.append(o_bits)
            parts_probs.append(o_probs * (1.0 - h))
        if h > 0.0:
            inc_reach = o_reach.copy()
            hits = ((inc_reach >> i) & 1).astype(bool)
            inc_reach |= np.where(hits, inc_reach[:, j : j + 1], 0)
            parts_reach.append(inc_reach)
            parts_bits.append(o_bits | np.int64(1 << e))
            parts_probs.append(o_probs * h)
        reach = np.concatenate(parts_reach)
        bits = np.concatenate(parts_bits)
        probs = np.concatenate(parts_probs)
    order = np.argsort(bits, kind="stable")
    return bits[order], probs[order]


def bits_to_graph(shape: GraphShape, bits: int) -> ConversationGraph:
    rows, cols = edge_order(shape)
    n = shape.num_nodes
    adjacency = np.zeros((n, n), dtype=bool)
    present = [(int(bits) >> e) & 1 == 1 for e in range(len(rows))]
    adjacency[rows[present], cols[present]] = True
    return ConversationGraph(shape, adjacency)


def graph_to_bits(graph: ConversationGraph) -> int:
    rows, cols = edge_order(graph.shape)
    present = graph.adjacency[rows, cols]
    return int(sum(1 << e for e in np.flatnonzero(present).tolist()))


def enumerate_distribution(
    heatmap: Heatmap, max_edges: int = MAX_ENUMERATION_EDGES
) -> list[tuple[ConversationGraph, float]]:
    """Exact distribution of :func:`sample_dag` as ``(graph, probability)`` pairs."""
    bits, probs = enumerate_paths(heatmap, max_edges)
    return [(bits_to_graph(heatmap.shape, b), float(p)) for b, p in zip(bits.tolist(), probs)]


def score_vectors(heatmap: Heatmap, decisions: np.ndarray) -> np.ndarray:
    """Score-function values in edge order for one or many decision records."""
    h = heatmap.support_values
    decisions = np.asarray(decisions)
    inc = decisions == INCLUDED
    exc = decisions == EXCLUDED
    if np.any(inc & (h == 0.0)) or np.any(exc & (h == 1.0)):
        raise InconsistencyError("decision record is impossible under this heatmap")
    with np.errstate(divide="ignore"):
        inv_h = np.where(h > 0.0, 1.0 / h, 0.0)
        inv_not_h = np.where(h < 1.0, 1.0 / (1.0 - h), 0.0)
    return np.where(inc, inv_h, 0.0) - np.where(exc, inv_not_h, 0.0)


def grad_log_prob(heatmap: Heatmap, sampled: SampledGraph, decisions=None) -> np.ndarray:
    """Gradient of the sample's log-probability with respect to the heatmap.

    ``1/H`` where the edge was included, ``-1/(1-H)`` where it was excluded,
    zero where it was skipped or is infeasible.
    """
    if decisions is None:
        decisions = sampled.decisions
    rows, cols = edge_order(heatmap.shape)
    decisions = np.asarray(decisions)
    if decisions.shape != rows.shape:
        raise StructuralError("decision record does not match the heatmap's edge order")
    included = decisions == INCLUDED
    if not np.array_equal(sampled.graph.adjacency[rows, cols], included) or sampled.graph.edge_count != int(included.sum()):
        raise InconsistencyError("decision record disagrees with the sampled graph")
    n = heatmap.shape.num_nodes
    grad = np.zeros((n, n))
    grad[rows, cols] = score_vectors(heatmap, decisions)
    return grad


def write_heatmap_csv(heatmap: Heatmap, path) -> None:
    lines = [format_header(heatmap.shape)]
    lines.extend(",".join(f"{v:.9g}" for v in row) for row in heatmap.values)
    Path(path).write_text("\n".join(lines) + "\n")


def read_heatmap_csv(path) -> Heatmap:
    shape, values = read_matrix_csv(path, dtype=float)
    return Heatmap(shape, values)
