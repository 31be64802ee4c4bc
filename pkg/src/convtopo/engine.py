"""Executing a multi-agent conversation over a conversation graph.

Each node is one agent in one round. Nodes run in workflow order; a node's
input is the task objective, the task text, and the outputs of its upstream
nodes in ascending node order. Its output is sent as one message to all of
its downstream nodes.
"""

from __future__ import annotations

import hashlib
import json
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol, Sequence

import numpy as np

from .exceptions import BudgetExceededError, DomainError, RunError, StructuralError
from .topology import (
    ConversationGraph,
    downstream_nodes,
    node_agent,
    node_round,
    topological_workflow,
    upstream_nodes,
)

__all__ = [
    "ToolStub",
    "AgentSpec",
    "MasSpec",
    "AgentRequest",
    "BackendReply",
    "AgentBackend",
    "EchoBackend",
    "SyntheticSolverBackend",
    "Message",
    "Transcript",
    "token_count",
    "execute",
    "aggregate",
    "AGGREGATION_MODES",
    "write_transcripts",
    "read_transcripts",
]

AGGREGATION_MODES = ("meta-llm", "last-round-majority", "designated")

META_PROMPT = (
    "You are the coordinator of a team of agents. Read the conversation below "
    "and reply with the team's final answer only."
)


def token_count(content: str) -> int:
    """Rough token estimate: one token per four UTF-8 bytes, rounded up."""
    return math.ceil(len(content.encode("utf-8")) / 4)


@dataclass(frozen=True)
class ToolStub:
    """Declared tool or knowledge source. Never executed; use is only logged."""

    name: str
    description: str = ""


@dataclass(frozen=True)
class AgentSpec:
    role: str
    model_id: str = "synthetic"
    communication: str = "default"
    tools: tuple[ToolStub, ...] = ()
    knowledge: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.role or not self.role.strip():
            raise DomainError("agent role must be nonempty")


@dataclass(frozen=True)
class MasSpec:
    agents: tuple[AgentSpec, ...]
    objective: str
    topology: ConversationGraph
    workflow: tuple[int, ...] = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "agents", tuple(self.agents))
        if len(self.agents) != self.topology.shape.num_agents:
            raise StructuralError(
                f"{len(self.agents)} agents given for a topology with K={self.topology.shape.num_agents}"
            )
        object.__setattr__(self, "workflow", tuple(topological_workflow(self.topology)))

    def with_topology(self, topology: ConversationGraph) -> "MasSpec":
        return MasSpec(self.agents, self.objective, topology)


@dataclass(frozen=True)
class AgentRequest:
    node: int
    round: int
    agent_index: int
    agent: AgentSpec
    system: str
    user: str
    task_input: str
    upstream: tuple[tuple[int, str], ...] = ()


@dataclass(frozen=True)
class BackendReply:
    text: str
    prompt_tokens: int | None = None
    completion_tokens: int | None = None
    tool_intents: tuple[str, ...] = ()


class AgentBackend(Protocol):
    def complete(self, request: AgentRequest) -> BackendReply: ...


class EchoBackend:
    """Deterministic stand-in for an LLM: output is a digest of the input."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    def complete(self, request: AgentRequest) -> BackendReply:
        digest = hashlib.sha256(f"{self.seed}\x00{request.system}\x00{request.user}".encode()).hexdigest()
        text = (
            f"[{request.agent.role} | round {request.round}] "
            f"read {len(request.upstream)} message(s); note {digest[:16]}"
        )
        return BackendReply(text)


class SyntheticSolverBackend:
    """Simulated solver with a fixed per-agent accuracy.

    Each activation makes an independent guess that is right with
    probability ``accuracy``, then answers with the majority over its own
    guess and the answers it received (ties keep its own guess). This gives
    collaboration a measurable effect without an LLM.
    """

    def __init__(self, answer_key: dict[str, str], accuracy: float = 0.6, seed: int = 0, options: str = "ABCD"):
        if not 0.0 <= accuracy <= 1.0:
            raise DomainError("accuracy must lie in [0, 1]")
        self.answer_key = dict(answer_key)
        self.accuracy = accuracy
        self.seed = seed
        self.options = options

    def _rng(self, request: AgentRequest) -> np.random.Generator:
        h = hashlib.sha256(f"{self.seed}\x00{request.node}\x00{request.task_input}".encode()).digest()
        return np.random.default_rng(int.from_bytes(h[:8], "little"))

    def _wrong(self, truth: str, rng) -> str:
        if truth in self.options:
            return str(rng.choice([o for o in self.options if o != truth]))
        try:
            return str(int(truth) + int(rng.integers(1, 10)))
        except ValueError:
            return truth + "?"

    def complete(self, request: AgentRequest) -> BackendReply:
        rng = self._rng(request)
        truth = self.answer_key.get(request.task_input, "")
        guess = truth if rng.random() < self.accuracy else self._wrong(truth, rng)
        votes = [guess]
        for _, text in request.upstream:
            marker = text.rfind("Answer:")
            if marker >= 0:
                votes.append(text[marker + len("Answer:"):].strip())
        counts = Counter(votes)
        top = max(counts.values())
        answer = guess if counts[guess] == top else next(v for v in votes if counts[v] == top)
        return BackendReply(f"{request.agent.role} considered {len(votes)} view(s). Answer: {answer}")


@dataclass(frozen=True)
class Message:
    sender: int
    recipients: tuple[int, ...]
    content: str
    tokens: int

    def to_dict(self) -> dict:
        return {"from": self.sender, "to": list(self.recipients), "content": self.content, "tokens": self.tokens}

    @classmethod
    def from_dict(cls, obj: dict) -> "Message":
        return cls(int(obj["from"]), tuple(int(x) for x in obj["to"]), obj["content"], int(obj["tokens"]))


@dataclass
class Transcript:
    """Record of one task run.

    ``outputs[i]`` is the output of node ``i`` (``None`` if it never ran).
    ``aggregation_tokens`` counts the final synthesis call separately from the
    inter-agent totals.
    """

    task_id: str
    num_agents: int
    num_rounds: int
    messages: list[Message] = field(default_factory=list)
    outputs: list[str | None] = field(default_factory=list)
    activation_order: list[int] = field(default_factory=list)
    memories: list[list[str]] = field(default_factory=list)
    tool_intents: list[tuple[int, str]] = field(default_factory=list)
    final_answer: str = ""
    aggregation_tokens: int = 0

    @property
    def tokens_sent(self) -> int:
        return sum(m.tokens for m in self.messages)

    @property
    def tokens_received(self) -> int:
        return sum(m.tokens * len(m.recipients) for m in self.messages)

    def to_dict(self) -> dict:
        return {
            "task_id": self.task_id,
            "num_agents": self.num_agents,
            "num_rounds": self.num_rounds,
            "messages": [m.to_dict() for m in self.messages],
            "outputs": list(self.outputs),
            "activation_order": list(self.activation_order),
            "memories": [list(m) for m in self.memories],
            "tool_intents": [list(t) for t in self.tool_intents],
            "final_answer": self.final_answer,
            "tokens_sent": self.tokens_sent,
            "tokens_received": self.tokens_received,
            "aggregation_tokens": self.aggregation_tokens,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, obj: dict) -> "Transcript":
        transcript = cls(
            task_id=obj["task_id"],
            num_agents=int(obj["num_agents"]),
            num_rounds=int(obj["num_rounds"]),
            messages=[Message.from_dict(m) for m in obj["messages"]],
            outputs=list(obj["outputs"]),
            activation_order=[int(i) for i in obj["activation_order"]],
            memories=[list(m) for m in obj["memories"]],
            tool_intents=[(int(n), s) for n, s in obj.get("tool_intents", [])],
            final_answer=obj["final_answer"],
            aggregation_tokens=int(obj.get("aggregation_tokens", 0)),
        )
        for name in ("tokens_sent", "tokens_received"):
            if name in obj and obj[name] != getattr(transcript, name):
                raise DomainError(f"stored {name}={obj[name]} disagrees with its messages")
        return transcript


def _build_request(mas: MasSpec, node: int, task_input: str, outputs: list) -> AgentRequest:
    k = mas.topology.shape.num_agents
    agent = mas.agents[node_agent(node, k)]
    sources = upstream_nodes(mas.topology, node)
    parts = [f"Objective: {mas.objective}", f"Task:\n{task_input}"]
    upstream = []
    for src in sources:
        sender = mas.agents[node_agent(src, k)]
        parts.append(f"[{sender.role} | round {node_round(src, k)}]:\n{outputs[src]}")
        upstream.append((src, outputs[src]))
    return AgentRequest(
        node=node,
        round=node_round(node, k),
        agent_index=node_agent(node, k),
        agent=agent,
        system=agent.role,
        user="\n\n".join(parts),
        task_input=task_input,
        upstream=tuple(upstream),
    )


def _levels(graph: ConversationGraph, workflow: Sequence[int]) -> list[list[int]]:
    depth = {}
    for node in workflow:
        depth[node] = 1 + max((depth[s] for s in upstream_nodes(graph, node)), default=-1)
    levels: list[list[int]] = [[] for _ in range(max(depth.values(), default=-1) + 1)]
    for node in workflow:
        levels[depth[node]].append(node)
    return levels


def execute(
    mas: MasSpec,
    task_input: str,
    backend: AgentBackend,
    *,
    task_id: str = "",
    aggregation: str = "last-round-majority",
    normalizer: Callable[[str], str | None] | None = None,
    designated_node: int | None = None,
    max_total_tokens: int | None = None,
    parallel: bool = False,
    max_workers: int = 4,
) -> Transcript:
    """Run every node of ``mas.topology`` once and aggregate a final answer.

    With ``parallel=True`` nodes at the same depth run concurrently; the
    transcript is still ordered by the workflow, so it matches the
    sequential run for deterministic backends.

    Backend failures raise :class:`RunError`, and exceeding
    ``max_total_tokens`` (tokens sent plus received) raises
    :class:`BudgetExceededError`; both carry the partial transcript.
    """
    if aggregation not in AGGREGATION_MODES:
        raise DomainError(f"unknown aggregation mode {aggregation!r}")
    graph = mas.topology
    shape = graph.shape
    transcript = Transcript(
        task_id=task_id,
        num_agents=shape.num_agents,
        num_rounds=shape.num_rounds,
        outputs=[None] * shape.num_nodes,
        memories=[[] for _ in range(shape.num_agents)],
    )

    def run_node(node: int) -> BackendReply:
        request = _build_request(mas, node, task_input, transcript.outputs)
        return backend.complete(request)

    def record(node: int, reply: BackendReply):
        transcript.outputs[node] = reply.text
        transcript.activation_order.append(node)
        transcript.memories[node_agent(node, shape.num_agents)].append(reply.text)
        transcript.tool_intents.extend((node, intent) for intent in reply.tool_intents)
        targets = downstream_nodes(graph, node)
        if targets:
            tokens = reply.completion_tokens if reply.completion_tokens is not None else token_count(reply.text)
            transcript.messages.append(Message(node, tuple(targets), reply.text, tokens))
        if max_total_tokens is not None and transcript.tokens_sent + transcript.tokens_received > max_total_tokens:
            raise BudgetExceededError(
                f"token budget of {max_total_tokens} exceeded after node {node}", transcript
            )

    if parallel:
        levels = _levels(graph, mas.workflow)
        position = {node: p for p, node in enumerate(mas.workflow)}
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            for level in levels:
                try:
                    replies = list(pool.map(run_node, level))
                except Exception as exc:
                    raise RunError(f"backend failed: {exc}", transcript) from exc
                for node, reply in sorted(zip(level, replies), key=lambda pair: position[pair[0]]):
                    record(node, reply)
        # record() appends in level order; restore workflow order
        transcript.activation_order.sort(key=position.__getitem__)
        transcript.messages.sort(key=lambda m: position[m.sender])
        transcript.memories = [[] for _ in range(shape.num_agents)]
        for node in transcript.activation_order:
            transcript.memories[node_agent(node, shape.num_agents)].append(transcript.outputs[node])
    else:
        for node in mas.workflow:
            try:
                reply = run_node(node)
            except Exception as exc:
                raise RunError(f"backend failed at node {node}: {exc}", transcript) from exc
            record(node, reply)

    try:
        transcript.final_answer = aggregate(
            transcript,
            aggregation,
            backend,
            normalizer=normalizer,
            designated_node=designated_node,
            objective=mas.objective,
        )
    except (DomainError, StructuralError):
        raise
    except Exception as exc:
        raise RunError(f"aggregation failed: {exc}", transcript) from exc
    return transcript


def _render(transcript: Transcript) -> str:
    k = transcript.num_agents
    lines = []
    for node in transcript.activation_order:
        lines.append(f"(agent {node_agent(node, k)}, round {node_round(node, k)}): {transcript.outputs[node]}")
    return "\n".join(lines)


def aggregate(
    transcript: Transcript,
    mode: str = "last-round-majority",
    backend: AgentBackend | None = None,
    *,
    normalizer: Callable[[str], str | None] | None = None,
    designated_node: int | None = None,
    objective: str = "",
) -> str:
    """Produce the final answer from a completed transcript.

    ``last-round-majority`` votes over the final round's outputs using
    ``normalizer`` keys (ties go to the lowest agent index) and returns the
    first winning output verbatim. ``designated`` returns one node's output.
    ``meta-llm`` makes one extra backend call over the whole conversation.
    """
    if not transcript.activation_order:
        raise DomainError("cannot aggregate an empty transcript")
    k, t = transcript.num_agents, transcript.num_rounds
    if mode == "last-round-majority":
        final = [transcript.outputs[(t - 1) * k + a] for a in range(k)]
        final = [text for text in final if text is not None]
        if not final:
            raise DomainError("final round produced no outputs")
        keys = []
        for text in final:
            key = normalizer(text) if normalizer else None
            keys.append(key if key is not None else text.strip())
        counts = Counter(keys)
        top = max(counts.values())
        winner = next(i for i, key in enumerate(keys) if counts[key] == top)
        return final[winner]
    if mode == "designated":
        if designated_node is None:
            raise DomainError("designated aggregation needs a node index")
        if not 0 <= designated_node < len(transcript.outputs):
            raise StructuralError(f"node {designated_node} out of range")
        output = transcript.outputs[designated_node]
        if output is None:
            raise DomainError(f"node {designated_node} produced no output")
        return output
    if mode == "meta-llm":
        if backend is None:
            raise DomainError("meta-llm aggregation needs a backend")
        meta = AgentSpec(role=META_PROMPT)
        user = f"Objective: {objective}\n\nConversation:\n{_render(transcript)}\n\nFinal answer:"
        request = AgentRequest(
            node=-1, round=t, agent_index=-1, agent=meta, system=META_PROMPT, user=user, task_input=""
        )
        reply = backend.complete(request)
        used = (reply.prompt_tokens or token_count(user)) + (
            reply.completion_tokens if reply.completion_tokens is not None else token_count(reply.text)
        )
        transcript.aggregation_tokens += used
        return reply.text
    raise DomainError(f"unknown aggregation mode {mode!r}")


def write_transcripts(transcripts: Sequence[Transcript], path) -> None:
    Path(path).write_text("".join(t.to_json() + "\n" for t in transcripts))


def read_transcripts(path) -> list[Transcript]:
    return [
        Transcript.from_dict(json.loads(line))
        for line in Path(path).read_text().splitlines()
        if line.strip()
    ]
