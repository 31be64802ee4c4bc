"""Role presets per task type."""

from __future__ import annotations

from .exceptions import ConfigurationError

GENERAL_ROLES = [
    "Knowledge Expert: answer from broad factual knowledge and state the key facts you rely on.",
    "Wiki Searcher: recall encyclopedia-style background relevant to the question and summarize it.",
    "Critic: check the reasoning you receive for errors and point out any weak step.",
    "Mathematician: handle any quantitative part of the question with careful calculation.",
    "Programmer: reason about the question as precisely as you would about code.",
    "Doctor: contribute medical and biological knowledge where relevant.",
    "Economist: contribute economic and social-science knowledge where relevant.",
]

MATH_ROLES = [
    "Math Solver: solve the problem step by step and give a final numeric answer.",
    "Mathematical Analyst: analyze the structure of the problem and verify each quantity.",
    "Programming Expert: express the computation as a short program and report its result.",
    "Inspector: check the solutions you receive and correct any mistakes.",
]

CODE_ROLES = [
    "Algorithm Designer: design the algorithm and describe it precisely before any code is written.",
    "Programming Expert: write a correct, complete Python implementation in a fenced code block.",
    "Test Analyst: review the implementation against edge cases and return a corrected version in a fenced code block.",
]

_PRESETS = {
    "general": GENERAL_ROLES,
    "multiple_choice": GENERAL_ROLES,
    "math": MATH_ROLES,
    "numeric": MATH_ROLES,
    "code": CODE_ROLES,
}


def preset_roles(task_kind: str, num_agents: int = 3) -> list[str]:
    """Role prompts for ``task_kind``.

    ``synthetic`` yields ``num_agents`` generic workers; other kinds ignore
    ``num_agents``.
    """
    kind = getattr(task_kind, "value", task_kind)
    if kind == "synthetic":
        if num_agents < 1:
            raise ConfigurationError("num_agents must be >= 1")
        return [f"Worker-{i}: contribute to the shared task." for i in range(num_agents)]
    try:
        return list(_PRESETS[kind])
    except KeyError:
        raise ConfigurationError(f"unknown task kind {task_kind!r}") from None


DEFAULT_OBJECTIVES = {
    "multiple_choice": "Answer the multiple-choice question with a single option letter (A, B, C or D).",
    "numeric": "Solve the math word problem and end with the final number.",
    "code": "Write a Python function that satisfies the specification and passes its tests.",
    "synthetic": "Complete the synthetic task.",
}
