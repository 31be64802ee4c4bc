"""Input validation helpers shared by the estimator and the CLI."""

from __future__ import annotations

import numbers

import numpy as np

from .exceptions import DomainError, StructuralError
from .sampler import Heatmap, read_heatmap_csv
from .topology import GraphShape


def check_shape(num_agents, num_rounds) -> GraphShape:
    return GraphShape(num_agents, num_rounds)


def check_heatmap(heatmap, shape: GraphShape) -> Heatmap:
    """Coerce a Heatmap, array, CSV path or scalar into a Heatmap of ``shape``.

    A scalar means that probability on every feasible edge. Arrays are
    projected onto the feasible support before validation.
    """
    if heatmap is None:
        return Heatmap.uniform(shape, 0.5)
    if isinstance(heatmap, Heatmap):
        result = heatmap
    elif isinstance(heatmap, numbers.Real):
        result = Heatmap.uniform(shape, float(heatmap))
    elif isinstance(heatmap, (str, bytes)) or hasattr(heatmap, "__fspath__"):
        result = read_heatmap_csv(heatmap)
    else:
        result = Heatmap.project(shape, np.asarray(heatmap, dtype=float))
    if result.shape != shape:
        raise StructuralError(f"heatmap is for {result.shape}, estimator expects {shape}")
    return result


def check_dataset(X) -> list:
    if X is None:
        raise DomainError("dataset must not be None")
    items = list(X)
    if not items:
        raise DomainError("dataset must be nonempty")
    return items


def check_seed(random_state) -> int:
    """An integer seed for the deterministic streams used internally."""
    if random_state is None:
        return int(np.random.SeedSequence().entropy % (2**63))
    if isinstance(random_state, (numbers.Integral, np.integer)) and not isinstance(random_state, bool):
        if random_state < 0:
            raise DomainError("random_state must be nonnegative")
        return int(random_state)
    if isinstance(random_state, np.random.Generator):
        return int(random_state.integers(0, 2**63))
    if isinstance(random_state, np.random.RandomState):
        return int(random_state.randint(0, 2**31 - 1))
    raise DomainError(f"cannot derive a seed from {random_state!r}")
