"""Retrieve-or-skip gating by self-evaluated model confidence.

Three criteria are supported: Monte-Carlo entropy of sampled outputs,
sample-enhanced True/False prompting, and mean per-token loss. Entropy is
the sample mean of -log Pr(output | prompt) with no length normalization,
so longer outputs trend toward higher values.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

from .generator import GeneratorBackend, SamplingParams, mean_nll, sample, score

DEFAULT_N_SAMPLES = 200
DEFAULT_ENTROPY_THRESHOLD = 4.0
DEFAULT_LOSS_THRESHOLD = 0.5
BRAINSTORM_COUNT = 4

SELF_EVAL_TEMPLATE = (
    "Question: {question}\n"
    "Possible Answer: {possible_answer}\n"
    "Here are some brainstormed ideas:\n"
    "{ideas}\n"
    "Is the possible answer:\n"
    "(A) True\n"
    "(B) False\n"
    "The possible answer is:"
)
TRUE_OPTION = "(A) True"
FALSE_OPTION = "(B) False"


class Criterion(str, Enum):
    ENTROPY = "entropy"
    SAMPLE_PROMPT = "sample_prompt"
    LOSS = "loss"


@dataclass
class ConfidenceConfig:
    criterion: Criterion = Criterion.ENTROPY
    n_samples: int = DEFAULT_N_SAMPLES
    entropy_threshold: float = DEFAULT_ENTROPY_THRESHOLD
    loss_threshold: float = DEFAULT_LOSS_THRESHOLD
    sampling: SamplingParams = field(default_factory=SamplingParams)

    def __post_init__(self):
        self.criterion = Criterion(self.criterion)
        if self.criterion == Criterion.ENTROPY and self.n_samples < 2:
            raise ValueError("entropy criterion needs n_samples >= 2")


@dataclass
class ConfidenceReport:
    example_id: str
    criterion: Criterion
    value: float
    needs_retrieval: bool
    samples_used: int


def estimate_entropy(backend: GeneratorBackend, prompt: str,
                     config: ConfidenceConfig) -> float:
    """Monte-Carlo estimate of the output distribution's entropy.

    Draws config.n_samples outputs and averages their -total_logprob.
    """
    if config.criterion != Criterion.ENTROPY:
        raise ValueError("estimate_entropy requires the entropy criterion")
    params = replace(config.sampling, n_samples=config.n_samples)
    samples = sample(backend, prompt, params)
    return sum(-s.total_logprob for s in samples) / len(samples)


def render_self_eval_prompt(question: str, possible_answer: str,
                            ideas: list) -> str:
    return SELF_EVAL_TEMPLATE.format(
        question=question,
        possible_answer=possible_answer,
        ideas="\n".join(ideas),
    )


def sample_prompt_verdict(backend: GeneratorBackend, question: str,
                          params: SamplingParams) -> bool:
    """Self-evaluate a greedy answer against brainstormed alternatives.

    Returns True iff the backend scores "(A) True" strictly above
    "(B) False" on the rendered prompt; ties break toward retrieval.
    """
    greedy = sample(backend, question,
                    replace(params, n_samples=1, temperature=0.0))[0].text
    brainstormed = sample(backend, question,
                          replace(params, n_samples=BRAINSTORM_COUNT))
    prompt = render_self_eval_prompt(question, greedy,
                                     [s.text for s in brainstormed])
    true_score = score(backend, prompt, TRUE_OPTION).total_logprob
    false_score = score(backend, prompt, FALSE_OPTION).total_logprob
    return true_score > false_score


def gate(backend: GeneratorBackend, prompt: str, config: ConfidenceConfig,
         example_id: str = "", target: str = "") -> ConfidenceReport:
    """Compute the configured criterion and decide whether to retrieve."""
    if config.criterion == Criterion.ENTROPY:
        value = estimate_entropy(backend, prompt, config)
        return ConfidenceReport(
            example_id=example_id,
            criterion=config.criterion,
            value=value,
            needs_retrieval=value > config.entropy_threshold,
            samples_used=config.n_samples,
        )
    if config.criterion == Criterion.LOSS:
        # loss is measured on the model's own greedy sample when no
        # explicit target is given
        if not target:
            target = sample(backend, prompt,
                            replace(config.sampling, n_samples=1,
                                    temperature=0.0))[0].text
        value = mean_nll(backend, prompt, target)
        return ConfidenceReport(
            example_id=example_id,
            criterion=config.criterion,
            value=value,
            needs_retrieval=value > config.loss_threshold,
            samples_used=1,
        )
    verdict = sample_prompt_verdict(backend, prompt, config.sampling)
    return ConfidenceReport(
        example_id=example_id,
        criterion=config.criterion,
        value=1.0 if verdict else 0.0,
        needs_retrieval=not verdict,
        samples_used=1 + BRAINSTORM_COUNT,
    )
