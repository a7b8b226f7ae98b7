"""Continual knowledge learning: salient-span masking and the span loss.

Named-entity occurrences in retrieved passages are replaced by sentinels
and the model is scored on reconstructing them, so newly retrieved
knowledge can be folded back into the model.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from .corpus import Passage
from .generator import GeneratorBackend, score

SENTINEL_FORMAT = "<extra_id_{j}>"
SENTINEL_RE = re.compile(r"<extra_id_(\d+)>")


class MaskingError(Exception):
    pass


@dataclass
class MaskedSpanExample:
    passage_id: str
    masked_text: str
    spans: List[Tuple[int, str]]
    entity_count: int


class TaggerKind(str, Enum):
    GAZETTEER = "gazetteer"
    EXTERNAL = "external"


@dataclass
class EntityTagger:
    """Pluggable entity span source.

    The gazetteer kind matches entries case-sensitively, longest match
    first, without overlaps. The external kind consumes pre-computed
    character spans keyed by passage_id.
    """
    kind: TaggerKind = TaggerKind.GAZETTEER
    gazetteer: frozenset = frozenset()
    external_spans: Dict[str, List[Tuple[int, int]]] = field(default_factory=dict)

    def __post_init__(self):
        self.kind = TaggerKind(self.kind)
        self.gazetteer = frozenset(self.gazetteer)
        if any("<extra_id_" in entry for entry in self.gazetteer):
            raise MaskingError("gazetteer entries may not contain sentinels")

    @classmethod
    def from_span_file(cls, path) -> "EntityTagger":
        spans: Dict[str, List[Tuple[int, int]]] = {}
        with Path(path).open(encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                record = json.loads(line)
                spans[record["passage_id"]] = [
                    (int(a), int(b)) for a, b in record["spans"]]
        return cls(kind=TaggerKind.EXTERNAL, external_spans=spans)

    def tag(self, passage: Passage) -> List[Tuple[int, int]]:
        """Character spans of entities in the passage, non-overlapping,
        in left-to-right order."""
        if self.kind == TaggerKind.EXTERNAL:
            return sorted(self.external_spans.get(passage.passage_id, []))
        text = passage.text
        matches = []
        for entry in self.gazetteer:
            for m in re.finditer(re.escape(entry), text):
                matches.append((m.start(), m.end()))
        # left-to-right, preferring the longest match at each position
        matches.sort(key=lambda span: (span[0], -(span[1] - span[0])))
        chosen: List[Tuple[int, int]] = []
        cursor = 0
        for start, end in matches:
            if start >= cursor:
                chosen.append((start, end))
                cursor = end
        return chosen


def mask_passage(passage: Passage, tagger: EntityTagger) -> MaskedSpanExample:
    """Replace every tagger hit with a sentinel, left to right."""
    char_spans = tagger.tag(passage)
    text = passage.text
    pieces = []
    spans = []
    cursor = 0
    for j, (start, end) in enumerate(char_spans):
        pieces.append(text[cursor:start])
        pieces.append(SENTINEL_FORMAT.format(j=j))
        spans.append((j, text[start:end]))
        cursor = end
    pieces.append(text[cursor:])
    return MaskedSpanExample(
        passage_id=passage.passage_id,
        masked_text="".join(pieces),
        spans=spans,
        entity_count=len(spans),
    )


def span_targets(example: MaskedSpanExample) -> str:
    """Sentinel-delimited target string for seq-to-seq span prediction."""
    if example.entity_count == 0:
        raise MaskingError("nothing to predict for a span-free passage")
    return " ".join(
        f"{SENTINEL_FORMAT.format(j=j)} {text}" for j, text in example.spans)


def reconstruct(example: MaskedSpanExample) -> str:
    """Substitute each span back at its sentinel; inverse of mask_passage."""
    lookup = dict(example.spans)
    return SENTINEL_RE.sub(lambda m: lookup[int(m.group(1))],
                           example.masked_text)


def ckl_loss(backend: GeneratorBackend, example: MaskedSpanExample) -> float:
    """Negative log-likelihood of the span targets given the masked passage."""
    if example.entity_count == 0:
        raise MaskingError("ckl_loss requires at least one masked span")
    result = score(backend, example.masked_text, span_targets(example))
    return -result.total_logprob


def batch_ckl_loss(backend: GeneratorBackend,
                   examples: Sequence[MaskedSpanExample]) -> float:
    return sum(ckl_loss(backend, ex) for ex in examples)
