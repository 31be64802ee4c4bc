"""Policy-gradient optimization of an edge-probability heatmap.

The objective for a single graph is ``utility - beta * edge_count``. The
heatmap is trained to maximize its expectation with a score-function
estimator, an L1 penalty on the heatmap, and the squashed update
``H <- sigmoid(H + eta * grad)`` followed by zeroing infeasible entries.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .exceptions import DomainError, NumericError
from .sampler import (
    Heatmap,
    SampledGraph,
    edge_order,
    enumerate_distribution,
    enumerate_paths,
    sample_dag,
    score_vectors,
    write_heatmap_csv,
)
from .topology import ConversationGraph

__all__ = [
    "ObjectiveConfig",
    "RunRecord",
    "objective",
    "estimate_gradient",
    "update_heatmap",
    "update_logits",
    "optimize",
    "exact_objective",
    "expected_edge_count",
    "write_runlog",
    "read_runlog",
]

# pre-activations are clipped so the sigmoid never rounds to exactly 0 or 1
_LOGIT_CLIP = 30.0

UtilityFn = Callable[[ConversationGraph, Sequence], float]


@dataclass(frozen=True)
class ObjectiveConfig:
    beta: float = 0.1
    eta: float = 0.1
    iterations: int = 15
    sample_size: int = 4
    minibatch_size: int = 4
    baseline_enabled: bool = False
    parameterization: str = "literal"

    def __post_init__(self):
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise DomainError(f"beta must be >= 0, got {self.beta}")
        if not (math.isfinite(self.eta) and self.eta > 0):
            raise DomainError(f"eta must be > 0, got {self.eta}")
        for name in ("iterations", "sample_size", "minibatch_size"):
            value = getattr(self, name)
            if isinstance(value, bool) or not isinstance(value, int) or value < 1:
                raise DomainError(f"{name} must be a positive integer, got {value!r}")
        if self.parameterization not in ("literal", "logit"):
            raise DomainError(
                f"parameterization must be 'literal' or 'logit', got {self.parameterization!r}"
            )


@dataclass(frozen=True)
class RunRecord:
    iteration: int
    mean_utility: float
    mean_edges: float
    objective_estimate: float
    heatmap_snapshot_path: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def objective(graph: ConversationGraph, utility: float, beta: float) -> float:
    if not math.isfinite(utility):
        raise DomainError(f"utility must be finite, got {utility}")
    if not beta >= 0:
        raise DomainError(f"beta must be >= 0, got {beta}")
    return utility - beta * graph.edge_count


def _unpack(sample):
    if len(sample) == 3:
        sampled, utility, decisions = sample
    else:
        sampled, utility = sample
        decisions = sampled.decisions
    return sampled, float(utility), np.asarray(decisions)


def estimate_gradient(heatmap: Heatmap, samples, beta: float, baseline: bool = False) -> np.ndarray:
    """Score-function gradient of ``E[utility] - beta * ||H||_1``.

    ``samples`` holds ``(SampledGraph, utility)`` or
    ``(SampledGraph, utility, decisions)`` tuples drawn from ``heatmap``.
    With ``baseline`` the batch-mean utility is subtracted from each
    utility before weighting.
    """
    samples = list(samples)
    if not samples:
        raise DomainError("gradient estimate needs at least one sample")
    unpacked = [_unpack(s) for s in samples]
    utilities = np.array([u for _, u, _ in unpacked])
    if not np.all(np.isfinite(utilities)):
        raise DomainError("utilities must be finite")
    if baseline:
        utilities = utilities - utilities.mean()
    scores = score_vectors(heatmap, np.stack([d for _, _, d in unpacked]))
    weighted = utilities[:, None] * scores
    rows, cols = edge_order(heatmap.shape)
    n = heatmap.shape.num_nodes
    grad = np.zeros((n, n))
    grad[rows, cols] = weighted.mean(axis=0) - beta
    return grad


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -_LOGIT_CLIP, _LOGIT_CLIP)))


def update_heatmap(heatmap: Heatmap, gradient, eta: float) -> Heatmap:
    """``sigmoid(H + eta * gradient)`` on the support, zero elsewhere."""
    gradient = np.asarray(gradient, dtype=float)
    mask = heatmap.mask
    if not np.all(np.isfinite(gradient[mask])):
        raise NumericError("gradient has non-finite entries on the feasible support")
    pre = np.where(mask, heatmap.values + eta * np.where(mask, gradient, 0.0), 0.0)
    return Heatmap.project(heatmap.shape, _sigmoid(pre))


def heatmap_to_logits(heatmap: Heatmap) -> np.ndarray:
    eps = float(_sigmoid(-_LOGIT_CLIP))
    p = np.clip(heatmap.values, eps, 1.0 - eps)
    return np.where(heatmap.mask, np.log(p) - np.log1p(-p), 0.0)


def update_logits(logits: np.ndarray, heatmap: Heatmap, gradient, eta: float):
    """Logit alternative: step the unconstrained logits, then squash.

    Returns ``(new_logits, new_heatmap)``.
    """
    gradient = np.asarray(gradient, dtype=float)
    mask = heatmap.mask
    if not np.all(np.isfinite(gradient[mask])):
        raise NumericError("gradient has non-finite entries on the feasible support")
    new_logits = np.where(mask, np.clip(logits + eta * gradient, -_LOGIT_CLIP, _LOGIT_CLIP), 0.0)
    return new_logits, Heatmap.project(heatmap.shape, _sigmoid(new_logits))


class _MinibatchStream:
    """Uniform minibatches without replacement, reshuffled every epoch."""

    def __init__(self, size: int, n_items: int, rng: np.random.Generator):
        self.size = min(size, n_items)
        self.n_items = n_items
        self.rng = rng
        self._order = np.empty(0, dtype=int)
        self._pos = 0

    def next(self) -> list[int]:
        if self._pos + self.size > len(self._order):
            self._order = self.rng.permutation(self.n_items)
            self._pos = 0
        batch = self._order[self._pos : self._pos + self.size]
        self._pos += self.size
        return batch.tolist()


def _sample_seed(seed: int, iteration: int, index: int):
    return [int(seed), 2, int(iteration), int(index)]


def optimize(
    initial: Heatmap,
    utility: UtilityFn,
    dataset: Sequence,
    config: ObjectiveConfig | None = None,
    seed: int = 0,
    snapshot_dir=None,
    n_jobs: int = 1,
) -> tuple[Heatmap, list[RunRecord]]:
    """Run ``config.iterations`` rounds of sample / evaluate / update.

    ``utility(graph, items)`` scores a graph on a minibatch of dataset
    items. When ``snapshot_dir`` is given, the heatmap after every update is
    written there as ``heatmap_iter_<m>.csv``.

    If the utility raises, the exception propagates with the records
    completed so far attached as ``exc.partial_records``.
    """
    config = config or ObjectiveConfig()
    dataset = list(dataset)
    if not dataset:
        raise DomainError("dataset must be nonempty")
    heatmap = initial
    logits = heatmap_to_logits(heatmap) if config.parameterization == "logit" else None
    batches = _MinibatchStream(config.minibatch_size, len(dataset), np.random.default_rng([int(seed), 1]))
    if snapshot_dir is not None:
        snapshot_dir = Path(snapshot_dir)
        snapshot_dir.mkdir(parents=True, exist_ok=True)
    records: list[RunRecord] = []
    pool = ThreadPoolExecutor(max_workers=n_jobs) if n_jobs > 1 else None
    try:
        for m in range(1, config.iterations + 1):
            items = [dataset[k] for k in batches.next()]
            sampled = [
                sample_dag(heatmap, _sample_seed(seed, m, n)) for n in range(config.sample_size)
            ]
            try:
                if pool is not None:
                    utilities = list(pool.map(lambda s: float(utility(s.graph, items)), sampled))
                else:
                    utilities = [float(utility(s.graph, items)) for s in sampled]
            except Exception as exc:
                exc.partial_records = list(records)
                raise
            grad = estimate_gradient(
                heatmap, list(zip(sampled, utilities)), config.beta, config.baseline_enabled
            )
            mean_utility = float(np.mean(utilities))
            mean_edges = float(np.mean([s.graph.edge_count for s in sampled]))
            if logits is None:
                heatmap = update_heatmap(heatmap, grad, config.eta)
            else:
                logits, heatmap = update_logits(logits, heatmap, grad, config.eta)
            path = ""
            if snapshot_dir is not None:
                target = snapshot_dir / f"heatmap_iter_{m}.csv"
                write_heatmap_csv(heatmap, target)
                path = target.name
            records.append(
                RunRecord(
                    iteration=m,
                    mean_utility=mean_utility,
                    mean_edges=mean_edges,
                    objective_estimate=mean_utility - config.beta * mean_edges,
                    heatmap_snapshot_path=path,
                )
            )
    finally:
        if pool is not None:
            pool.shutdown()
    return heatmap, records


def exact_objective(
    heatmap: Heatmap,
    utility: UtilityFn,
    dataset: Sequence,
    beta: float,
    penalty: str = "edges",
) -> float:
    """Expected objective under the exact sampling distribution.

    ``penalty="edges"`` gives ``E[utility - beta * edge_count]``.
    ``penalty="heatmap"`` gives ``E[utility] - beta * ||H||_1``, the quantity
    whose gradient :func:`estimate_gradient` estimates; the two differ only
    through edges the cycle guard skips.
    """
    if penalty not in ("edges", "heatmap"):
        raise DomainError(f"penalty must be 'edges' or 'heatmap', got {penalty!r}")
    dataset = list(dataset)
    total = 0.0
    for graph, prob in enumerate_distribution(heatmap):
        value = utility(graph, dataset)
        if penalty == "edges":
            value -= beta * graph.edge_count
        total += prob * value
    if penalty == "heatmap":
        total -= beta * float(heatmap.values.sum())
    return total


def expected_edge_count(heatmap: Heatmap) -> float:
    """Exact ``E[edge_count]`` by enumeration."""
    bits, probs = enumerate_paths(heatmap)
    counts = np.array([int(b).bit_count() for b in bits.tolist()])
    return float(np.dot(probs, counts))


def write_runlog(path, records: Sequence[RunRecord], header: dict | None = None) -> None:
    """JSON Lines; an optional first line ``{"header": {...}}`` echoes the config."""
    lines = []
    if header is not None:
        lines.append(json.dumps({"header": header}, sort_keys=True))
    lines.extend(json.dumps(r.to_dict(), sort_keys=True) for r in records)
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def read_runlog(path) -> tuple[dict | None, list[RunRecord]]:
    header = None
    records = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        obj = json.loads(line)
        if "header" in obj:
            header = obj["header"]
        else:
            records.append(RunRecord(**obj))
    return header, records
