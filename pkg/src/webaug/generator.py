"""Language-model backend contract: sampling and scoring with token log-probs.

Backends are wire contracts, not embedded models. The mock backend draws
from an explicit prompt -> output-distribution table and is the oracle for
every confidence and loss computation in the test suite.
"""

from __future__ import annotations

import json
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import requests

from .corpus import tokenize

# Values at or below this are treated as "impossible" by consumers.
IMPOSSIBLE_LOGPROB = -1e9


class GeneratorError(Exception):
    pass


class ContractViolation(GeneratorError):
    """Backend response missing token log-probs or otherwise malformed."""


class UnknownPrompt(GeneratorError):
    """The mock has no distribution for the given prompt."""


@dataclass(frozen=True)
class GenerationSample:
    text: str
    tokens: Tuple[str, ...]
    token_logprobs: Tuple[float, ...]
    total_logprob: float

    def __post_init__(self):
        if len(self.tokens) != len(self.token_logprobs) or not self.tokens:
            raise ContractViolation("tokens and token_logprobs must align and be non-empty")
        if abs(self.total_logprob - sum(self.token_logprobs)) > 1e-9:
            raise ContractViolation("total_logprob must equal the sum of token_logprobs")


@dataclass
class SamplingParams:
    n_samples: int = 1
    max_tokens: int = 64
    temperature: float = 1.0
    seed: Optional[int] = None

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


class GeneratorBackend(Protocol):
    def sample(self, prompt: str, params: SamplingParams) -> List[GenerationSample]:
        ...

    def score(self, prompt: str, target: str) -> GenerationSample:
        ...


def _make_sample(text: str, logprob: float) -> GenerationSample:
    # The mock spreads the whole-output log-prob evenly over its tokens.
    tokens = tuple(tokenize(text)) or (text,)
    per_token = logprob / len(tokens)
    token_logprobs = tuple(per_token for _ in tokens)
    return GenerationSample(
        text=text,
        tokens=tokens,
        token_logprobs=token_logprobs,
        total_logprob=sum(token_logprobs),
    )


class MockModel:
    """Deterministic table-driven backend.

    `table` maps exact prompts to output distributions. `rules` is an
    ordered list of (substring, distribution) fallbacks consulted when no
    exact entry matches; `default` catches everything else. Distributions
    must sum to 1 with strictly positive probabilities.
    """

    def __init__(self,
                 table: Optional[Dict[str, Dict[str, float]]] = None,
                 rules: Optional[Sequence[Tuple[str, Dict[str, float]]]] = None,
                 default: Optional[Dict[str, float]] = None):
        self.table = dict(table or {})
        self.rules = list(rules or [])
        self.default = default
        for dist in list(self.table.values()) + [d for _, d in self.rules] + \
                ([self.default] if self.default else []):
            self._check_distribution(dist)

    @staticmethod
    def _check_distribution(dist: Dict[str, float]):
        if not dist:
            raise ValueError("empty distribution")
        if any(p <= 0 for p in dist.values()):
            raise ValueError("probabilities must be strictly positive")
        if abs(sum(dist.values()) - 1.0) > 1e-9:
            raise ValueError("distribution must sum to 1")

    @classmethod
    def from_file(cls, path) -> "MockModel":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(table=payload)

    def distribution(self, prompt: str) -> Dict[str, float]:
        if prompt in self.table:
            return self.table[prompt]
        for needle, dist in self.rules:
            if needle in prompt:
                return dist
        if self.default is not None:
            return self.default
        raise UnknownPrompt(f"no distribution for prompt {prompt[:80]!r}")

    def sample(self, prompt: str, params: SamplingParams) -> List[GenerationSample]:
        dist = self.distribution(prompt)
        outputs = sorted(dist)
        if params.temperature == 0:
            # greedy: highest probability, ties toward the smaller string
            best = min(outputs, key=lambda o: (-dist[o], o))
            sample = _make_sample(best, math.log(dist[best]))
            return [sample] * params.n_samples
        rng = random.Random(params.seed)
        weights = [dist[o] for o in outputs]
        picks = rng.choices(outputs, weights=weights, k=params.n_samples)
        return [_make_sample(o, math.log(dist[o])) for o in picks]

    def score(self, prompt: str, target: str) -> GenerationSample:
        dist = self.distribution(prompt)
        p = dist.get(target, 0.0)
        logprob = math.log(p) if p > 0 else IMPOSSIBLE_LOGPROB
        return _make_sample(target, logprob)


class HttpBackend:
    """Client for the POST {base}/sample and {base}/score wire contract."""

    def __init__(self, base_url: str, timeout: float = 30.0, session=None):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()

    def _post(self, path: str, body: dict) -> dict:
        try:
            response = self.session.post(f"{self.base_url}{path}", json=body,
                                         timeout=self.timeout)
        except requests.RequestException as exc:
            raise GeneratorError(f"backend unreachable: {exc}") from exc
        if not (200 <= response.status_code < 300):
            raise GeneratorError(f"backend returned status {response.status_code}")
        return response.json()

    @staticmethod
    def _parse_sample(obj: dict) -> GenerationSample:
        try:
            tokens = tuple(obj["tokens"])
            logprobs = tuple(float(x) for x in obj["token_logprobs"])
            text = obj["text"]
        except (KeyError, TypeError) as exc:
            raise ContractViolation(f"malformed sample object: {exc}") from exc
        if not tokens or len(tokens) != len(logprobs):
            raise ContractViolation("sample lacks aligned token log-probs")
        return GenerationSample(text=text, tokens=tokens, token_logprobs=logprobs,
                                total_logprob=sum(logprobs))

    def sample(self, prompt: str, params: SamplingParams) -> List[GenerationSample]:
        if not prompt:
            raise ValueError("prompt must be non-empty")
        payload = self._post("/sample", {
            "prompt": prompt,
            "n": params.n_samples,
            "max_tokens": params.max_tokens,
            "temperature": params.temperature,
            "seed": params.seed,
        })
        samples = [self._parse_sample(o) for o in payload.get("samples", [])]
        if len(samples) != params.n_samples:
            raise ContractViolation(
                f"asked for {params.n_samples} samples, got {len(samples)}")
        return samples

    def score(self, prompt: str, target: str) -> GenerationSample:
        if not prompt or not target:
            raise ValueError("prompt and target must be non-empty")
        payload = self._post("/score", {"prompt": prompt, "target": target})
        return self._parse_sample(payload)


def sample(backend: GeneratorBackend, prompt: str,
           params: SamplingParams) -> List[GenerationSample]:
    if not prompt:
        raise ValueError("prompt must be non-empty")
    return backend.sample(prompt, params)


def score(backend: GeneratorBackend, prompt: str, target: str) -> GenerationSample:
    if not prompt or not target:
        raise ValueError("prompt and target must be non-empty")
    return backend.score(prompt, target)


def mean_nll(backend: GeneratorBackend, prompt: str, target: str) -> float:
    """Negative log-likelihood of the target, averaged over its tokens."""
    result = score(backend, prompt, target)
    return -result.total_logprob / len(result.tokens)


def greedy_text(backend: GeneratorBackend, prompt: str,
                max_tokens: int = 64) -> str:
    """Single deterministic decode, used for final predictions."""
    params = SamplingParams(n_samples=1, max_tokens=max_tokens, temperature=0.0)
    return sample(backend, prompt, params)[0].text
