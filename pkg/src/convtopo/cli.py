"""Command line entry point: ``convtopo optimize|eval|sample|mask``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .engine import AGGREGATION_MODES, AgentSpec, EchoBackend, MasSpec, SyntheticSolverBackend, execute, write_transcripts
from .evaluation import MasUtility
from .exceptions import BackendError, ConfigurationError, DatasetError, DomainError, RunError, StructuralError
from .optimizer import ObjectiveConfig, objective, optimize, write_runlog
from .roles import DEFAULT_OBJECTIVES, preset_roles
from .sampler import Heatmap, read_heatmap_csv, sample_dag, write_heatmap_csv
from .tasks import GoldenEdgeTask, SubprocessSandbox, TaskKind, answer_normalizer, load_dataset, score_answer, synthetic_dataset
from .topology import GraphShape, build_feasibility_mask, format_header, read_graph_csv, write_graph_csv

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

log = logging.getLogger("convtopo")

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2


@dataclass
class RunConfig:
    task_kind: str = "synthetic"
    dataset: str | None = None
    roles: list[str] | None = None
    num_agents: int | None = None
    num_rounds: int = 2
    objective: str | None = None
    beta: float = 0.1
    eta: float = 0.1
    iterations: int = 15
    sample_size: int = 4
    minibatch_size: int = 4
    baseline: bool = False
    parameterization: str = "literal"
    seed: int = 0
    backend: str = "synthetic"
    llm: dict = field(default_factory=dict)
    api_key_env: str = "OPENAI_API_KEY"
    aggregation: str | None = None
    designated_node: int | None = None
    max_total_tokens: int | None = None
    output_dir: str = "runs"
    run_name: str | None = None
    initial_heatmap: str | None = None
    golden: dict = field(default_factory=dict)
    synthetic_items: int = 8
    synthetic_accuracy: float = 0.6
    enable_code_execution: bool = False
    code_timeout: float = 10.0

    @classmethod
    def from_mapping(cls, obj: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(obj) - known)
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        config = cls(**obj)
        config.validate()
        return config

    def validate(self):
        try:
            kind = TaskKind(self.task_kind)
        except ValueError:
            raise ConfigurationError(f"unknown task_kind {self.task_kind!r}") from None
        self.task_kind = kind.value
        if self.roles is None:
            self.roles = preset_roles(kind, self.num_agents or 3)
            # an explicit K smaller than the preset takes its first K roles
            if self.num_agents is not None and 0 < self.num_agents < len(self.roles):
                self.roles = self.roles[: self.num_agents]
        if not self.roles:
            raise ConfigurationError("roles must be nonempty")
        if self.num_agents is None:
            self.num_agents = len(self.roles)
        if len(self.roles) != self.num_agents:
            raise ConfigurationError(f"{len(self.roles)} roles given but num_agents={self.num_agents}")
        if self.num_rounds < 1:
            raise ConfigurationError("num_rounds must be >= 1")
        if self.backend not in ("synthetic", "llm"):
            raise ConfigurationError(f"backend must be 'synthetic' or 'llm', got {self.backend!r}")
        if self.aggregation is None:
            self.aggregation = "meta-llm" if self.backend == "llm" else "last-round-majority"
        if self.aggregation not in AGGREGATION_MODES:
            raise ConfigurationError(f"aggregation must be one of {AGGREGATION_MODES}")
        if self.objective is None:
            self.objective = DEFAULT_OBJECTIVES[self.task_kind]
        if self.dataset is None and kind is not TaskKind.SYNTHETIC:
            raise ConfigurationError("dataset path is required for task kind " + self.task_kind)
        try:
            self.objective_config()
        except DomainError as exc:
            raise ConfigurationError(str(exc)) from None

    def objective_config(self) -> ObjectiveConfig:
        return ObjectiveConfig(
            beta=float(self.beta),
            eta=float(self.eta),
            iterations=self.iterations,
            sample_size=self.sample_size,
            minibatch_size=self.minibatch_size,
            baseline_enabled=self.baseline,
            parameterization=self.parameterization,
        )

    @property
    def shape(self) -> GraphShape:
        return GraphShape(self.num_agents, self.num_rounds)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config_file(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"config file not found: {path}")
    if path.suffix == ".toml":
        return tomllib.loads(path.read_text())
    return json.loads(path.read_text())


# -- building blocks ------------------------------------------------------------


def _dataset(config: RunConfig):
    if config.task_kind == TaskKind.SYNTHETIC.value and config.dataset is None:
        return synthetic_dataset(config.synthetic_items)
    return load_dataset(config.dataset, config.task_kind)


def golden_task(config: RunConfig) -> GoldenEdgeTask:
    shape = config.shape
    spec = dict(config.golden)
    edges = spec.pop("edges", None)
    if edges is None:
        edges = [(i, i + 1) for i in range(shape.num_nodes - 1)]
    edges = [tuple(e) for e in edges]
    spec.setdefault("reward_per_edge", 1.0 / len(edges) if edges else 0.25)
    spec.setdefault("seed", config.seed)
    try:
        return GoldenEdgeTask(shape, frozenset(edges), **spec)
    except TypeError as exc:
        raise ConfigurationError(f"bad golden task settings: {exc}") from None


def _backend(config: RunConfig, items):
    if config.backend == "llm":
        from .llm import ChatClient, LLMBackend, LLMConfig

        settings = dict(config.llm)
        settings.setdefault("api_key_env", config.api_key_env)
        if "endpoint" not in settings or "model" not in settings:
            raise ConfigurationError("llm backend needs 'endpoint' and 'model' under [llm]")
        return LLMBackend(ChatClient(LLMConfig.from_dict(settings)))
    if config.task_kind in (TaskKind.MULTIPLE_CHOICE.value, TaskKind.NUMERIC.value):
        key = {item.prompt: item.reference_answer for item in items}
        if config.task_kind == TaskKind.NUMERIC.value:
            from .tasks import extract_number

            key = {p: extract_number(a) or a for p, a in key.items()}
        return SyntheticSolverBackend(key, config.synthetic_accuracy, seed=config.seed)
    return EchoBackend(seed=config.seed)


def _agents(config: RunConfig):
    model = config.llm.get("model", "synthetic") if config.backend == "llm" else "synthetic"
    return [AgentSpec(role=role, model_id=model, communication=config.backend) for role in config.roles]


def _sandbox(config: RunConfig):
    return SubprocessSandbox(config.code_timeout) if config.enable_code_execution else None


def _run_dir(config: RunConfig) -> Path:
    root = Path(config.output_dir)
    name = config.run_name or f"{time.strftime('%Y%m%dT%H%M%S')}-seed{config.seed}"
    run_dir = root / name
    suffix = 1
    while config.run_name is None and run_dir.exists():
        run_dir = root / f"{name}-{suffix}"
        suffix += 1
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "transcripts").mkdir(exist_ok=True)
    return run_dir


def _mas_utility(config: RunConfig, items, keep_transcripts=False) -> MasUtility:
    return MasUtility(
        _agents(config),
        config.objective,
        _backend(config, items),
        TaskKind(config.task_kind),
        aggregation=config.aggregation,
        sandbox=_sandbox(config),
        max_total_tokens=config.max_total_tokens,
        designated_node=config.designated_node,
        keep_transcripts=keep_transcripts,
    )


def _utility(config: RunConfig, items):
    if config.task_kind == TaskKind.SYNTHETIC.value:
        return golden_task(config)
    return _mas_utility(config, items)


def _transcripts_for(config: RunConfig, graph, items):
    """Run the agents under ``graph`` on every item; synthetic tasks use the echo backend."""
    if config.task_kind == TaskKind.SYNTHETIC.value:
        mas = MasSpec(_agents(config), config.objective, graph)
        backend = EchoBackend(seed=config.seed)
        return [
            execute(mas, item.prompt, backend, task_id=item.id, aggregation="last-round-majority")
            for item in items
        ]
    utility = _mas_utility(config, items, keep_transcripts=True)
    for item in items:
        utility(graph, [item])
    return utility.transcripts


# -- commands -----------------------------------------------------------------


def run_optimize(config: RunConfig) -> int:
    items = _dataset(config)
    utility = _utility(config, items)
    shape = config.shape
    initial = read_heatmap_csv(config.initial_heatmap) if config.initial_heatmap else Heatmap.uniform(shape)
    if initial.shape != shape:
        raise ConfigurationError(f"initial heatmap is for {initial.shape}, config is for {shape}")
    run_dir = _run_dir(config)
    header = config.to_dict()
    (run_dir / "config.json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")

    heatmap, records = optimize(
        initial, utility, items, config.objective_config(), seed=config.seed, snapshot_dir=run_dir
    )
    write_runlog(run_dir / "runlog.jsonl", records, header=header)
    write_heatmap_csv(heatmap, run_dir / "final_heatmap.csv")

    draws = [sample_dag(heatmap, [config.seed, 3, k]) for k in range(config.sample_size)]
    scores = [objective(d.graph, utility(d.graph, items), config.beta) for d in draws]
    best = int(np.argmax(scores))
    write_graph_csv(draws[best].graph, run_dir / "best_graph.csv")
    write_transcripts(_transcripts_for(config, draws[best].graph, items), run_dir / "transcripts" / "best_graph.jsonl")
    log.info("run written to %s", run_dir)
    print(run_dir)
    return EXIT_OK


def run_eval(config: RunConfig, heatmap_path=None, graph_path=None) -> int:
    if (heatmap_path is None) == (graph_path is None):
        raise ConfigurationError("give exactly one of --heatmap or --graph")
    artifact = Path(heatmap_path or graph_path)
    if not artifact.is_file():
        raise ConfigurationError(f"artifact not found: {artifact}")
    items = _dataset(config)
    if graph_path is not None:
        graph = read_graph_csv(graph_path)
        if graph.shape != config.shape:
            raise ConfigurationError(f"graph is for {graph.shape}, config is for {config.shape}")
        graphs = [graph] * len(items)
    else:
        heatmap = read_heatmap_csv(heatmap_path)
        if heatmap.shape != config.shape:
            raise ConfigurationError(f"heatmap is for {heatmap.shape}, config is for {config.shape}")
        graphs = [sample_dag(heatmap, [config.seed, 4, k]).graph for k in range(len(items))]

    transcripts = []
    scores = []
    golden = golden_task(config) if config.task_kind == TaskKind.SYNTHETIC.value else None
    sandbox = _sandbox(config)
    backend = EchoBackend(seed=config.seed) if golden else _backend(config, items)
    normalizer = answer_normalizer(TaskKind(config.task_kind))
    for item, graph in zip(items, graphs):
        mas = MasSpec(_agents(config), config.objective, graph)
        transcript = execute(
            mas,
            item.prompt,
            backend,
            task_id=item.id,
            aggregation="last-round-majority" if golden else config.aggregation,
            normalizer=normalizer,
            designated_node=config.designated_node,
            max_total_tokens=config.max_total_tokens,
        )
        transcripts.append(transcript)
        scores.append(golden(graph, [item]) if golden else score_answer(transcript.final_answer, item, sandbox))

    summary = {
        "accuracy": float(np.mean(scores)),
        "total_tokens_sent": sum(t.tokens_sent for t in transcripts),
        "total_tokens_received": sum(t.tokens_received for t in transcripts),
        "aggregation_tokens": sum(t.aggregation_tokens for t in transcripts),
        "mean_edges": float(np.mean([g.edge_count for g in graphs])),
        "n_items": len(items),
    }
    run_dir = _run_dir(config)
    (run_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    write_transcripts(transcripts, run_dir / "transcripts" / "eval.jsonl")
    print(json.dumps(summary, sort_keys=True))
    return EXIT_OK


def run_sample(heatmap_path, seed: int, out=None) -> int:
    sampled = sample_dag(read_heatmap_csv(heatmap_path), seed)
    if out:
        write_graph_csv(sampled.graph, out)
    else:
        sys.stdout.write(format_header(sampled.graph.shape) + "\n")
        for row in sampled.graph.adjacency:
            sys.stdout.write(",".join(str(int(v)) for v in row) + "\n")
    print(f"log_prob={sampled.log_prob!r}", file=sys.stderr)
    return EXIT_OK


def run_mask(num_agents: int, num_rounds: int) -> int:
    shape = GraphShape(num_agents, num_rounds)
    print(format_header(shape))
    for row in build_feasibility_mask(shape):
        print(",".join(str(int(v)) for v in row))
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------


def _add_run_options(parser):
    parser.add_argument("--config", help="JSON or TOML run configuration")
    parser.add_argument("--task-kind", dest="task_kind")
    parser.add_argument("--dataset")
    parser.add_argument("--agents", dest="num_agents", type=int)
    parser.add_argument("--rounds", dest="num_rounds", type=int)
    parser.add_argument("--backend", choices=["synthetic", "llm"])
    parser.add_argument("--beta", type=float)
    parser.add_argument("--eta", type=float)
    parser.add_argument("--iters", dest="iterations", type=int)
    parser.add_argument("--samples", dest="sample_size", type=int)
    parser.add_argument("--seed", type=int)
    parser.add_argument("--out", dest="output_dir")
    parser.add_argument("--run-name", dest="run_name")


_OVERRIDES = ("task_kind", "dataset", "num_agents", "num_rounds", "backend", "beta", "eta",
              "iterations", "sample_size", "seed", "output_dir", "run_name")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convtopo", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    opt = sub.add_parser("optimize", help="optimize a heatmap and write a run directory")
    _add_run_options(opt)

    ev = sub.add_parser("eval", help="evaluate a heatmap or a fixed graph on a dataset")
    _add_run_options(ev)
    ev.add_argument("--heatmap")
    ev.add_argument("--graph")

    sm = sub.add_parser("sample", help="draw one DAG from a heatmap CSV")
    sm.add_argument("--heatmap", required=True)
    sm.add_argument("--seed", type=int, default=0)
    sm.add_argument("--out")

    mk = sub.add_parser("mask", help="print the feasibility mask")
    mk.add_argument("--agents", type=int, required=True)
    mk.add_argument("--rounds", type=int, required=True)
    return parser


def config_from_args(args) -> RunConfig:
    raw = load_config_file(args.config) if args.config else {}
    for name in _OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            raw[name] = value
    return RunConfig.from_mapping(raw)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if args.command == "mask":
            return run_mask(args.agents, args.rounds)
        if args.command == "sample":
            return run_sample(args.heatmap, args.seed, args.out)
        config = config_from_args(args)
        if args.command == "optimize":
            return run_optimize(config)
        return run_eval(config, args.heatmap, args.graph)
    except (ConfigurationError, DatasetError, StructuralError, DomainError, json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        print(f"convtopo: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (BackendError, RunError, RuntimeError, OSError) as exc:
        print(f"convtopo: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
