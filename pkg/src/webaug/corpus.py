"""Document ingestion and fixed-size passage chunking.

Tokens are whitespace-delimited words throughout the package; passage
boundaries therefore do not depend on any model vocabulary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, List, Optional

DEFAULT_PASSAGE_SIZE = 100


class CorpusError(Exception):
    """Raised for unrecoverable corpus-level problems."""


@dataclass(frozen=True)
class Document:
    doc_id: str
    text: str
    title: Optional[str] = None
    source_url: Optional[str] = None

    def __post_init__(self):
        if not self.doc_id:
            raise CorpusError("doc_id must be non-empty")
        if not self.text.strip():
            raise CorpusError(f"document {self.doc_id!r} has empty text")


@dataclass(frozen=True)
class Passage:
    passage_id: str
    doc_id: str
    ordinal: int
    text: str
    token_count: int

    def __post_init__(self):
        if self.ordinal < 0:
            raise CorpusError("ordinal must be non-negative")
        if self.token_count < 1:
            raise CorpusError("token_count must be positive")


@dataclass
class RecordError:
    line_number: int
    message: str


def tokenize(text: str) -> List[str]:
    """Split on Unicode whitespace, dropping empty tokens."""
    return text.split()


def chunk(document: Document, passage_size: int = DEFAULT_PASSAGE_SIZE) -> List[Passage]:
    """Greedy left-to-right split into windows of `passage_size` tokens.

    The final passage holds the remainder and may be shorter. A document
    with zero tokens yields an empty list.
    """
    if passage_size < 1:
        raise ValueError("passage_size must be >= 1")
    tokens = tokenize(document.text)
    passages = []
    for ordinal, start in enumerate(range(0, len(tokens), passage_size)):
        window = tokens[start:start + passage_size]
        passages.append(Passage(
            passage_id=f"{document.doc_id}:{ordinal}",
            doc_id=document.doc_id,
            ordinal=ordinal,
            text=" ".join(window),
            token_count=len(window),
        ))
    return passages


def ingest_corpus(path, errors: Optional[List[RecordError]] = None) -> Iterator[Document]:
    """Yield one Document per valid JSONL record, in file order.

    Malformed records are appended to `errors` (when given) with their
    1-based line numbers; processing continues past them.
    """
    path = Path(path)
    with path.open(encoding="utf-8") as f:
        for line_number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                if not isinstance(record, dict):
                    raise ValueError("record is not an object")
                doc = Document(
                    doc_id=record["id"],
                    text=record["text"],
                    title=record.get("title"),
                    source_url=record.get("url"),
                )
            except (ValueError, KeyError, TypeError, CorpusError) as exc:
                if errors is not None:
                    errors.append(RecordError(line_number, str(exc)))
                continue
            yield doc
