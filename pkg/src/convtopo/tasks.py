"""Task items, answer scoring, datasets and the synthetic golden-edge task."""

from __future__ import annotations

import enum
import json
import os
import re
import subprocess
import sys
import tempfile
import zlib
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Sequence

import numpy as np

from .exceptions import DatasetError, DomainError, EvaluatorError, StructuralError
from .topology import ConversationGraph, GraphShape, build_feasibility_mask

__all__ = [
    "TaskKind",
    "TaskItem",
    "extract_choice",
    "extract_number",
    "extract_code_block",
    "score_multiple_choice",
    "score_numeric",
    "score_code",
    "score_answer",
    "answer_normalizer",
    "SubprocessSandbox",
    "GoldenEdgeTask",
    "golden_edge_utility",
    "load_dataset",
    "synthetic_dataset",
]


class TaskKind(str, enum.Enum):
    MULTIPLE_CHOICE = "multiple_choice"
    NUMERIC = "numeric"
    CODE = "code"
    SYNTHETIC = "synthetic"


@dataclass(frozen=True)
class TaskItem:
    id: str
    prompt: str
    reference_answer: str
    task_kind: TaskKind
    tests: str | None = None
    entry_point: str | None = None
    choices: tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "task_kind", TaskKind(self.task_kind))
        if self.task_kind not in (TaskKind.CODE, TaskKind.SYNTHETIC) and not self.reference_answer:
            raise DomainError(f"task {self.id!r}: reference answer must be nonempty")


# -- answer extraction --------------------------------------------------------

_CHOICE_RE = re.compile(r"\b([A-D])\b")
_NUMBER_RE = re.compile(r"(?:(?<![\w.])[-+])?(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?")
_FENCE_RE = re.compile(r"```[^\n]*\n(.*?)```", re.DOTALL)


def extract_choice(text: str) -> str | None:
    """First standalone option letter A-D after uppercasing and dropping punctuation.

    Apostrophes are deleted so contractions stay one word ("I'd" is not "I D");
    other punctuation becomes a space so "Answer:B" still yields B.
    """
    normalized = re.sub(r"[^\w\s]", " ", re.sub(r"['\u2019]", "", text.upper()))
    match = _CHOICE_RE.search(normalized)
    return match.group(1) if match else None


def _canonical_number(raw: str) -> str | None:
    try:
        value = Decimal(raw.replace(",", ""))
    except InvalidOperation:
        return None
    if value == value.to_integral_value():
        return str(int(value))
    return format(value.normalize(), "f")


def extract_number(text: str) -> str | None:
    """Last number in ``text`` in canonical form (no separators or trailing zeros)."""
    matches = _NUMBER_RE.findall(text)
    if not matches:
        return None
    return _canonical_number(matches[-1])


def extract_code_block(text: str) -> str | None:
    match = _FENCE_RE.search(text)
    return match.group(1) if match else None


def _require_kind(item: TaskItem, kind: TaskKind):
    if item.task_kind is not kind:
        raise DomainError(f"task {item.id!r} is {item.task_kind.value}, expected {kind.value}")


def score_multiple_choice(answer: str, item: TaskItem) -> float:
    _require_kind(item, TaskKind.MULTIPLE_CHOICE)
    predicted = extract_choice(answer)
    return 1.0 if predicted is not None and predicted == extract_choice(item.reference_answer) else 0.0


def score_numeric(answer: str, item: TaskItem) -> float:
    _require_kind(item, TaskKind.NUMERIC)
    predicted = extract_number(answer)
    return 1.0 if predicted is not None and predicted == extract_number(item.reference_answer) else 0.0


class SubprocessSandbox:
    """Runs a program with a fresh isolated interpreter under a wall-clock limit.

    This is process isolation only, not a security boundary; run untrusted
    code inside a container.
    """

    def __init__(self, timeout: float = 10.0, python: str | None = None):
        self.timeout = timeout
        self.python = python or sys.executable

    def run(self, program: str) -> bool:
        with tempfile.TemporaryDirectory() as tmp:
            script = Path(tmp) / "candidate.py"
            script.write_text(program)
            try:
                proc = subprocess.run(
                    [self.python, "-I", str(script)],
                    cwd=tmp,
                    capture_output=True,
                    timeout=self.timeout,
                    env={"PATH": os.environ.get("PATH", "")},
                )
            except subprocess.TimeoutExpired:
                return False
        return proc.returncode == 0


def score_code(answer: str, item: TaskItem, sandbox: SubprocessSandbox | None) -> float:
    """pass@1 for a single completion: 1.0 iff every unit test passes."""
    _require_kind(item, TaskKind.CODE)
    if sandbox is None:
        raise EvaluatorError("code execution is disabled; configure a sandbox to score code tasks")
    code = extract_code_block(answer)
    if code is None:
        return 0.0
    program = code + "\n\n" + (item.tests or "") + "\n"
    if item.entry_point:
        program += f"\ncheck({item.entry_point})\n"
    return 1.0 if sandbox.run(program) else 0.0


def score_answer(answer: str, item: TaskItem, sandbox: SubprocessSandbox | None = None) -> float:
    kind = item.task_kind
    if kind is TaskKind.MULTIPLE_CHOICE:
        return score_multiple_choice(answer, item)
    if kind is TaskKind.NUMERIC:
        return score_numeric(answer, item)
    if kind is TaskKind.CODE:
        return score_code(answer, item, sandbox)
    raise DomainError("synthetic items are scored on the graph, not on an answer")


def answer_normalizer(kind: TaskKind):
    """Map an agent output to the key used for majority voting."""
    kind = TaskKind(kind)
    if kind is TaskKind.MULTIPLE_CHOICE:
        return extract_choice
    if kind is TaskKind.NUMERIC:
        return extract_number
    if kind is TaskKind.CODE:
        return lambda text: (extract_code_block(text) or "").strip() or None
    return lambda text: text.strip() or None


# -- synthetic golden-edge task ----------------------------------------------


@dataclass(frozen=True)
class GoldenEdgeTask:
    """Utility rewarding a known edge set and penalizing every other edge.

    With zero noise and positive reward and penalty, the golden edge set is
    the unique maximizer of the utility over all feasible DAGs (as long as
    the clamp at 1 is not reached before the golden set is complete).
    """

    shape: GraphShape
    golden_edges: frozenset
    reward_per_edge: float = 0.25
    penalty: float = 0.1
    noise_scale: float = 0.0
    seed: int = 0

    def __post_init__(self):
        edges = frozenset((int(i), int(j)) for i, j in self.golden_edges)
        mask = build_feasibility_mask(self.shape)
        for i, j in edges:
            self.shape.check_node(i)
            self.shape.check_node(j)
            if not mask[i, j]:
                raise StructuralError(f"golden edge {(i, j)} is not feasible")
        if self.noise_scale < 0:
            raise DomainError("noise_scale must be >= 0")
        object.__setattr__(self, "golden_edges", edges)

    @property
    def golden_mask(self) -> np.ndarray:
        n = self.shape.num_nodes
        mask = np.zeros((n, n), dtype=bool)
        for i, j in self.golden_edges:
            mask[i, j] = True
        return mask

    def noise(self, graph: ConversationGraph, items: Sequence = ()) -> float:
        if self.noise_scale == 0:
            return 0.0
        ids = "\x1f".join(str(getattr(it, "id", it)) for it in items).encode()
        key = [int(self.seed), zlib.crc32(np.packbits(graph.adjacency).tobytes()), zlib.crc32(ids)]
        return float(np.random.default_rng(key).normal(0.0, self.noise_scale))

    def __call__(self, graph: ConversationGraph, items: Sequence = ()) -> float:
        return golden_edge_utility(graph, self, items)


def golden_edge_utility(graph: ConversationGraph, task: GoldenEdgeTask, items: Sequence = ()) -> float:
    golden = task.golden_mask
    hits = int(np.sum(graph.adjacency & golden))
    extras = int(np.sum(graph.adjacency & ~golden))
    raw = hits * task.reward_per_edge - task.penalty * extras + task.noise(graph, items)
    return min(1.0, max(0.0, raw))


def synthetic_dataset(n_items: int) -> list[TaskItem]:
    """Placeholder items for the golden-edge task, which ignores item content."""
    return [
        TaskItem(id=f"synthetic-{k}", prompt=f"synthetic task {k}", reference_answer="", task_kind=TaskKind.SYNTHETIC)
        for k in range(n_items)
    ]


# -- dataset loading ----------------------------------------------------------


def load_dataset(path, kind) -> list[TaskItem]:
    """Read a JSON Lines dataset of ``{id, prompt, answer}`` objects.

    Code items also need ``tests`` and may give ``entry_point``; their
    ``answer`` is optional. Blank lines are ignored.
    """
    kind = TaskKind(kind)
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset not found: {path}")
    required = ["id", "prompt"]
    if kind is TaskKind.CODE:
        required.append("tests")
    elif kind is not TaskKind.SYNTHETIC:
        required.append("answer")

    items: list[TaskItem] = []
    seen: dict[str, int] = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{path}:{lineno}: invalid JSON ({exc.msg})", [lineno]) from None
        if not isinstance(obj, dict):
            raise DatasetError(f"{path}:{lineno}: expected a JSON object", [lineno])
        for name in required:
            if name not in obj:
                raise DatasetError(f"{path}:{lineno}: missing field '{name}'", [lineno])
        item_id = str(obj["id"])
        if item_id in seen:
            first = seen[item_id]
            raise DatasetError(
                f"{path}: duplicate id {item_id!r} on lines {first} and {lineno}", [first, lineno]
            )
        seen[item_id] = lineno
        answer = obj.get("answer", "")
        try:
            items.append(
                TaskItem(
                    id=item_id,
                    prompt=str(obj["prompt"]),
                    reference_answer="" if answer is None else str(answer),
                    task_kind=kind,
                    tests=obj.get("tests"),
                    entry_point=obj.get("entry_point"),
                    choices=tuple(obj.get("choices", ())),
                )
            )
        except DomainError as exc:
            raise DatasetError(f"{path}:{lineno}: {exc}", [lineno]) from None
    return items
