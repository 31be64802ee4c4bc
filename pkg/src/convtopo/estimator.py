"""Estimator wrapper around heatmap optimization."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_dataset, check_heatmap, check_seed, check_shape
from .exceptions import CapacityError, DomainError
from .optimizer import ObjectiveConfig, exact_objective, expected_edge_count, objective, optimize
from .sampler import MAX_ENUMERATION_EDGES, SampledGraph, edge_order, sample_batch, sample_dag


class TopologyOptimizer(BaseEstimator):
    """Learn an edge-probability heatmap for a ``K``-agent, ``T``-round conversation.

    Parameters
    ----------
    num_agents, num_rounds : int
        Agents per round and number of rounds.
    utility : callable
        ``utility(graph, items) -> float`` in [0, 1], e.g. a
        :class:`~convtopo.tasks.GoldenEdgeTask` or
        :class:`~convtopo.evaluation.MasUtility`.
    beta : float
        Weight of the edge-count penalty.
    eta : float
        Learning rate.
    iterations, sample_size, minibatch_size : int
        Optimization iterations, graphs sampled per iteration, and dataset
        items per minibatch.
    baseline : bool
        Subtract the batch-mean utility before weighting scores.
    parameterization : {"literal", "logit"}
        ``literal`` squashes ``H + eta * grad`` directly; ``logit`` keeps
        unconstrained logits and squashes those.
    initial_heatmap : Heatmap, array, path, float or None
        Starting heatmap; ``None`` means 0.5 on every feasible edge.
    random_state : int or None
    snapshot_dir : path or None
        Where to write one heatmap CSV per iteration.
    n_jobs : int
        Threads used to evaluate the sampled graphs of an iteration.

    Attributes
    ----------
    heatmap_ : Heatmap
    history_ : list of RunRecord
    shape_ : GraphShape
    """

    def __init__(
        self,
        num_agents=3,
        num_rounds=2,
        utility=None,
        beta=0.1,
        eta=0.1,
        iterations=15,
        sample_size=4,
        minibatch_size=4,
        baseline=False,
        parameterization="literal",
        initial_heatmap=None,
        random_state=None,
        snapshot_dir=None,
        n_jobs=1,
    ):
        self.num_agents = num_agents
        self.num_rounds = num_rounds
        self.utility = utility
        self.beta = beta
        self.eta = eta
        self.iterations = iterations
        self.sample_size = sample_size
        self.minibatch_size = minibatch_size
        self.baseline = baseline
        self.parameterization = parameterization
        self.initial_heatmap = initial_heatmap
        self.random_state = random_state
        self.snapshot_dir = snapshot_dir
        self.n_jobs = n_jobs

    def _config(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            beta=self.beta,
            eta=self.eta,
            iterations=self.iterations,
            sample_size=self.sample_size,
            minibatch_size=self.minibatch_size,
            baseline_enabled=self.baseline,
            parameterization=self.parameterization,
        )

    def fit(self, X, y=None):
        if self.utility is None or not callable(self.utility):
            raise DomainError("utility must be a callable utility(graph, items)")
        config = self._config()
        shape = check_shape(self.num_agents, self.num_rounds)
        items = check_dataset(X)
        initial = check_heatmap(self.initial_heatmap, shape)
        self.seed_ = check_seed(self.random_state)
        self.shape_ = shape
        self.heatmap_, self.history_ = optimize(
            initial,
            self.utility,
            items,
            config,
            seed=self.seed_,
            snapshot_dir=self.snapshot_dir,
            n_jobs=self.n_jobs,
        )
        return self

    def sample(self, n_samples=1, random_state=None) -> list[SampledGraph]:
        check_is_fitted(self, "heatmap_")
        seed = check_seed(random_state)
        return [sample_dag(self.heatmap_, [seed, k]) for k in range(n_samples)]

    def predict(self, X, random_state=None):
        """One sampled graph per item in ``X``."""
        check_is_fitted(self, "heatmap_")
        items = check_dataset(X)
        return [s.graph for s in self.sample(len(items), random_state)]

    def best_graph(self, X, n_samples=None, random_state=None):
        """Highest-objective graph among ``n_samples`` draws, scored on all of ``X``.

        Ties go to the earliest draw. Returns ``(graph, objective_value)``.
        """
        check_is_fitted(self, "heatmap_")
        items = check_dataset(X)
        draws = self.sample(n_samples or self.sample_size, random_state)
        scored = [(objective(s.graph, self.utility(s.graph, items), self.beta), k) for k, s in enumerate(draws)]
        value, k = max(scored, key=lambda pair: (pair[0], -pair[1]))
        return draws[k].graph, value

    def expected_edges(self, n_samples=20000, random_state=0) -> float:
        """Expected edge count, exact when enumeration is feasible."""
        check_is_fitted(self, "heatmap_")
        if len(edge_order(self.shape_)[0]) <= MAX_ENUMERATION_EDGES:
            return expected_edge_count(self.heatmap_)
        return float(sample_batch(self.heatmap_, n_samples, random_state).edge_counts.mean())

    def score(self, X, y=None):
        """Expected ``utility - beta * edge_count`` on ``X``.

        Exact by enumeration for up to 20 feasible edges, otherwise a Monte
        Carlo mean over 64 sampled graphs.
        """
        check_is_fitted(self, "heatmap_")
        items = check_dataset(X)
        try:
            return exact_objective(self.heatmap_, self.utility, items, self.beta)
        except CapacityError:
            draws = self.sample(64, random_state=0)
            return float(np.mean([objective(s.graph, self.utility(s.graph, items), self.beta) for s in draws]))
