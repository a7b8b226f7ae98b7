"""Two-stage filtering of noisy retrieved pages into high-confidence evidence.

Stage 1 keeps the five page paragraphs most cosine-similar to the input.
Stage 2 keeps the candidate passages whose presence in the prompt lowers
the model's output entropy below the closed-book value.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Protocol, Sequence

from .confidence import ConfidenceConfig, estimate_entropy
from .corpus import Passage, tokenize
from .generator import GeneratorBackend

STAGE1_TOP_PARAGRAPHS = 5

logger = logging.getLogger(__name__)


@dataclass
class EvidenceSet:
    example_id: str
    passages: List[Passage]
    stage1_similarities: List[float] = field(default_factory=list)
    stage2_entropies: List[float] = field(default_factory=list)


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        ...


class TfidfEmbedder:
    """Deterministic TF-IDF embedder over a fitted vocabulary.

    Dependency-free lexical relevance; adequate for paragraph selection at
    desk scale and fully reproducible.
    """

    def __init__(self, documents: Sequence[str]):
        self.vocabulary: Dict[str, int] = {}
        df: Counter = Counter()
        n_docs = max(len(documents), 1)
        for doc in documents:
            terms = set(tokenize(doc))
            for term in terms:
                if term not in self.vocabulary:
                    self.vocabulary[term] = len(self.vocabulary)
                df[term] += 1
        self.idf = {
            term: math.log(n_docs / (1 + df[term])) + 1.0
            for term in self.vocabulary
        }

    def embed(self, texts: Sequence[str]) -> List[List[float]]:
        vectors = []
        for text in texts:
            vec = [0.0] * len(self.vocabulary)
            counts = Counter(tokenize(text))
            total = sum(counts.values())
            if total:
                for term, count in counts.items():
                    idx = self.vocabulary.get(term)
                    if idx is not None:
                        vec[idx] = (count / total) * self.idf[term]
            vectors.append(vec)
        return vectors


def cosine(u: Sequence[float], v: Sequence[float]) -> float:
    """Cosine similarity; 0 when either vector has zero norm."""
    if len(u) != len(v):
        raise ValueError(f"dimension mismatch: {len(u)} vs {len(v)}")
    dot = sum(a * b for a, b in zip(u, v))
    norm_u = math.sqrt(sum(a * a for a in u))
    norm_v = math.sqrt(sum(b * b for b in v))
    if norm_u == 0.0 or norm_v == 0.0:
        return 0.0
    return dot / (norm_u * norm_v)


def split_paragraphs(page_text: str) -> List[str]:
    return [p.strip() for p in page_text.split("\n\n") if p.strip()]


def stage1_select(input_text: str, page_text: str,
                  embedder: Optional[Embedder] = None,
                  passage_id: str = "web:0") -> Passage:
    """Concatenate the page's top-5 input-similar paragraphs into one passage.

    Selection is by cosine similarity; the kept paragraphs stay in original
    document order for coherent reading. A zero-vector input embedding
    falls back to the first five paragraphs with a logged warning.
    """
    paragraphs = split_paragraphs(page_text)
    if not paragraphs:
        raise ValueError("page_text has no paragraphs")
    if embedder is None:
        embedder = TfidfEmbedder([input_text] + paragraphs)
    vectors = embedder.embed([input_text] + paragraphs)
    input_vec, para_vecs = vectors[0], vectors[1:]
    if not any(input_vec):
        logger.warning("input embeds to the zero vector; "
                       "falling back to the first %d paragraphs",
                       STAGE1_TOP_PARAGRAPHS)
        similarities = [0.0] * len(paragraphs)
        keep = list(range(min(STAGE1_TOP_PARAGRAPHS, len(paragraphs))))
    else:
        similarities = [cosine(input_vec, pv) for pv in para_vecs]
        ranked = sorted(range(len(paragraphs)),
                        key=lambda i: (-similarities[i], i))
        keep = sorted(ranked[:STAGE1_TOP_PARAGRAPHS])
    text = "\n".join(paragraphs[i] for i in keep)
    doc_id, _, ordinal = passage_id.rpartition(":")
    return Passage(
        passage_id=passage_id,
        doc_id=doc_id or passage_id,
        ordinal=int(ordinal) if ordinal.isdigit() else 0,
        text=text,
        token_count=len(tokenize(text)),
    )


def stage2_select(backend: GeneratorBackend, input_text: str,
                  candidates: Sequence[Passage], config: ConfidenceConfig,
                  k_final: int = 10,
                  render: Optional[Callable[[str, Optional[str]], str]] = None,
                  example_id: str = "") -> EvidenceSet:
    """Keep candidates whose conditioned entropy beats the closed-book entropy.

    Candidates are sorted ascending by conditioned entropy and truncated to
    k_final. When no candidate lowers entropy, the single lowest-entropy
    candidate is kept so the evidence set is never empty.
    """
    if not candidates:
        raise ValueError("candidates must be non-empty")
    if k_final < 1:
        raise ValueError("k_final must be >= 1")
    if render is None:
        render = _default_render
    baseline = estimate_entropy(backend, render(input_text, None), config)
    entropies = [
        estimate_entropy(backend, render(input_text, p.text), config)
        for p in candidates
    ]
    order = sorted(range(len(candidates)),
                   key=lambda i: (entropies[i], candidates[i].passage_id))
    kept = [i for i in order if entropies[i] < baseline][:k_final]
    if not kept:
        kept = [order[0]]
    return EvidenceSet(
        example_id=example_id,
        passages=[candidates[i] for i in kept],
        stage2_entropies=entropies,
    )


def _default_render(input_text: str, passage_text: Optional[str]) -> str:
    if passage_text is None:
        return input_text
    return f"Context: {passage_text}\n{input_text}"
