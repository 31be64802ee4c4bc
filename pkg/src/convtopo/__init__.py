"""Self-optimizing conversation topologies for multi-agent systems."""

from .engine import AgentSpec, EchoBackend, MasSpec, Message, Transcript, aggregate, execute, token_count
from .estimator import TopologyOptimizer
from .evaluation import MasUtility
from .optimizer import (
    ObjectiveConfig,
    RunRecord,
    estimate_gradient,
    exact_objective,
    expected_edge_count,
    objective,
    optimize,
    update_heatmap,
)
from .sampler import Heatmap, SampledGraph, enumerate_distribution, grad_log_prob, sample_batch, sample_dag
from .tasks import GoldenEdgeTask, TaskItem, TaskKind, golden_edge_utility, load_dataset
from .topology import (
    ConversationGraph,
    GraphShape,
    build_feasibility_mask,
    topological_workflow,
    upstream_nodes,
    validate_dag,
)

__version__ = "0.1.0"
