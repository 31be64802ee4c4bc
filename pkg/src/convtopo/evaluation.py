"""Graph utilities that run the multi-agent system on task items."""

from __future__ import annotations

import threading
from typing import Sequence

from .engine import AgentBackend, AgentSpec, MasSpec, Transcript, execute
from .tasks import SubprocessSandbox, TaskItem, TaskKind, answer_normalizer, score_answer
from .topology import ConversationGraph

__all__ = ["MasUtility"]


class MasUtility:
    """Mean task score of a conversation graph over a batch of items.

    Calling the object executes the agents on every item under the given
    graph and scores each final answer; it can be passed straight to
    :func:`convtopo.optimizer.optimize`. Set ``keep_transcripts`` to collect
    the transcripts of every call in ``self.transcripts``.
    """

    def __init__(
        self,
        agents: Sequence[AgentSpec],
        objective: str,
        backend: AgentBackend,
        kind: TaskKind,
        aggregation: str = "last-round-majority",
        sandbox: SubprocessSandbox | None = None,
        max_total_tokens: int | None = None,
        designated_node: int | None = None,
        keep_transcripts: bool = False,
    ):
        self.agents = tuple(agents)
        self.objective = objective
        self.backend = backend
        self.kind = TaskKind(kind)
        self.aggregation = aggregation
        self.sandbox = sandbox
        self.max_total_tokens = max_total_tokens
        self.designated_node = designated_node
        self.keep_transcripts = keep_transcripts
        self.transcripts: list[Transcript] = []
        self._lock = threading.Lock()

    def run(self, graph: ConversationGraph, item: TaskItem) -> tuple[float, Transcript]:
        mas = MasSpec(self.agents, self.objective, graph)
        transcript = execute(
            mas,
            item.prompt,
            self.backend,
            task_id=item.id,
            aggregation=self.aggregation,
            normalizer=answer_normalizer(self.kind),
            designated_node=self.designated_node,
            max_total_tokens=self.max_total_tokens,
        )
        return score_answer(transcript.final_answer, item, self.sandbox), transcript

    def __call__(self, graph: ConversationGraph, items: Sequence[TaskItem]) -> float:
        scores = []
        for item in items:
            score, transcript = self.run(graph, item)
            scores.append(score)
            if self.keep_transcripts:
                with self._lock:
                    self.transcripts.append(transcript)
        return sum(scores) / len(scores)
