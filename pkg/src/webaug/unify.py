"""Unified text-to-text task formatting and temperature-scaled task mixing.

Every task family renders to the same prompt layout: an optional Context
line carrying up to ten passages, an instruction line, and an optional
single line of numbered answer options.
"""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from .corpus import Passage, RecordError

MAX_PASSAGE_SLOTS = 10
MAX_OPTIONS = 26
SLOT_FILLING_SEP = " [SEP] "


class TaskFamily(str, Enum):
    FACT_CHECKING = "fact_checking"
    SLOT_FILLING = "slot_filling"
    DIALOGUE = "dialogue"
    OPEN_DOMAIN_QA = "open_domain_qa"
    COMMONSENSE_QA = "commonsense_qa"
    COMMONSENSE_REASONING = "commonsense_reasoning"
    NLI = "nli"


INSTRUCTIONS: Dict[TaskFamily, str] = {
    TaskFamily.FACT_CHECKING: "Verify the following claim",
    TaskFamily.SLOT_FILLING: "Predict the missing fact",
    TaskFamily.DIALOGUE: "Response to the following dialogue",
    TaskFamily.OPEN_DOMAIN_QA: "Answer the following question",
    TaskFamily.COMMONSENSE_QA: "Answer the following question",
    TaskFamily.COMMONSENSE_REASONING: "Reason about the following sentence",
    TaskFamily.NLI: "Inference on the following context",
}


class TaskFormatError(Exception):
    pass


@dataclass(frozen=True)
class TaskExample:
    example_id: str
    task: str
    family: TaskFamily
    input_text: str
    options: tuple = ()
    gold_outputs: tuple = ()

    def __post_init__(self):
        object.__setattr__(self, "family", TaskFamily(self.family))
        object.__setattr__(self, "options", tuple(self.options))
        object.__setattr__(self, "gold_outputs", tuple(self.gold_outputs))
        if not self.gold_outputs:
            raise TaskFormatError("gold_outputs must be non-empty")
        if (self.family == TaskFamily.SLOT_FILLING
                and SLOT_FILLING_SEP not in self.input_text):
            raise TaskFormatError(
                "slot_filling input must be 'subject entity [SEP] relation'")


@dataclass(frozen=True)
class RenderedPrompt:
    text: str
    passage_count: int
    option_count: int


@dataclass
class MixingConfig:
    temperature: float = 2.0
    size_cap: Optional[int] = None
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


def render_prompt(example: TaskExample,
                  passages: Sequence[Passage] = ()) -> RenderedPrompt:
    """Render the unified prompt layout for one example.

    The Context line is omitted entirely when no passages are given, and
    the Option line when the example has no candidate answers.
    """
    if len(passages) > MAX_PASSAGE_SLOTS:
        raise TaskFormatError(f"at most {MAX_PASSAGE_SLOTS} passage slots")
    if len(example.options) > MAX_OPTIONS:
        raise TaskFormatError(f"at most {MAX_OPTIONS} options")
    instruction = INSTRUCTIONS[example.family]
    lines = []
    if passages:
        lines.append("Context: " + " ".join(p.text for p in passages))
    lines.append(f"{instruction}: {example.input_text}")
    if example.options:
        lines.append(" ".join(
            f"Option {i}: {opt}" for i, opt in enumerate(example.options, 1)))
    return RenderedPrompt(
        text="\n".join(lines),
        passage_count=len(passages),
        option_count=len(example.options),
    )


def mixing_rates(task_sizes: Dict[str, int],
                 config: MixingConfig) -> Dict[str, float]:
    """Task sampling rates proportional to (capped size)^(1/T)."""
    if not task_sizes:
        raise ValueError("at least one task required")
    if any(size < 1 for size in task_sizes.values()):
        raise ValueError("all task sizes must be >= 1")
    effective = {
        task: min(size, config.size_cap) if config.size_cap else size
        for task, size in task_sizes.items()
    }
    scaled = {task: size ** (1.0 / config.temperature)
              for task, size in effective.items()}
    total = sum(scaled.values())
    return {task: value / total for task, value in scaled.items()}


def sample_mixture(datasets: Dict[str, List[TaskExample]],
                   config: MixingConfig, n: int) -> List[TaskExample]:
    """Draw n examples i.i.d.: task by mixing rate, example uniform within task."""
    if any(not examples for examples in datasets.values()):
        raise ValueError("every dataset must be non-empty")
    if n == 0:
        return []
    rates = mixing_rates({t: len(xs) for t, xs in datasets.items()}, config)
    tasks = sorted(datasets)
    weights = [rates[t] for t in tasks]
    rng = random.Random(config.seed)
    picks = rng.choices(tasks, weights=weights, k=n)
    return [datasets[t][rng.randrange(len(datasets[t]))] for t in picks]


def load_task_file(path, task: Optional[str] = None,
                   family: Optional[str] = None,
                   errors: Optional[List[RecordError]] = None) -> List[TaskExample]:
    """Load validated TaskExamples from a task JSONL file.

    Record-level problems are appended to `errors` with line numbers and
    the offending records skipped. `task` and `family` override the
    per-record fields when given.
    """
    examples = []
    with Path(path).open(encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                examples.append(TaskExample(
                    example_id=record["id"],
                    task=task or record["task"],
                    family=TaskFamily(family or record["family"]),
                    input_text=record["input"],
                    options=tuple(record.get("options", ())),
                    gold_outputs=tuple(record["outputs"]),
                ))
            except (ValueError, KeyError, TypeError, TaskFormatError) as exc:
                if errors is not None:
                    errors.append(RecordError(line_number, str(exc)))
    return examples
