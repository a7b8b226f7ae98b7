"""Top-K passage retrieval: local BM25 inverted index and search-engine backends.

The local index is immutable after build and safe to share across query
workers. The search path speaks a Custom-Search-shaped REST contract or a
fully offline fixture directory so tests never touch the network.
"""

from __future__ import annotations

import hashlib
import html
import json
import math
import re
import time
import urllib.parse
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Dict, Iterable, List, Optional

import requests

from .corpus import Passage, tokenize

BM25_K1 = 1.2
BM25_B = 0.75
DEFAULT_TOP_K = 10
FETCH_TIMEOUT = 10.0
USER_AGENT = "webaug/0.1"


class IndexBuildError(Exception):
    pass


class InvalidQuery(Exception):
    pass


class TransportError(Exception):
    pass


class BackendError(Exception):
    """Non-2xx response from the search backend."""


class FetchStatus(str, Enum):
    OK = "ok"
    HTTP_ERROR = "http_error"
    PARSE_ERROR = "parse_error"


class Backend(str, Enum):
    LOCAL_INDEX = "local_index"
    SEARCH_API = "search_api"
    FIXTURE = "fixture"


@dataclass
class RetrievalConfig:
    k: int = DEFAULT_TOP_K
    backend: Backend = Backend.LOCAL_INDEX
    endpoint: Optional[str] = None
    site_restrict: Optional[str] = None
    fixture_dir: Optional[str] = None
    user_agent: str = USER_AGENT

    def __post_init__(self):
        self.backend = Backend(self.backend)
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.backend == Backend.SEARCH_API and not self.endpoint:
            raise ValueError("endpoint required for search_api backend")


@dataclass(frozen=True)
class ScoredPassage:
    passage: Passage
    score: float
    rank: int


@dataclass
class SearchResult:
    url: str
    raw_html: str
    cleaned_text: str
    fetch_status: FetchStatus


class Index:
    """Immutable BM25 inverted index over passages."""

    def __init__(self, passages: Iterable[Passage]):
        self.passages: Dict[str, Passage] = {}
        self.doc_freq: Counter = Counter()
        self.term_freq: Dict[str, Counter] = {}
        self.lengths: Dict[str, int] = {}
        for p in passages:
            if p.passage_id in self.passages:
                raise IndexBuildError(f"duplicate passage_id {p.passage_id!r}")
            tokens = tokenize(p.text)
            tf = Counter(tokens)
            self.passages[p.passage_id] = p
            self.term_freq[p.passage_id] = tf
            self.lengths[p.passage_id] = len(tokens)
            for term in tf:
                self.doc_freq[term] += 1
        self.n_passages = len(self.passages)
        self.avg_length = (
            sum(self.lengths.values()) / self.n_passages if self.n_passages else 0.0
        )

    def idf(self, term: str) -> float:
        # +1 inside the log keeps IDF non-negative for very common terms
        df = self.doc_freq.get(term, 0)
        return math.log((self.n_passages - df + 0.5) / (df + 0.5) + 1.0)

    def score(self, query_terms: List[str], passage_id: str) -> float:
        tf = self.term_freq[passage_id]
        length = self.lengths[passage_id]
        norm = BM25_K1 * (1.0 - BM25_B + BM25_B * length / self.avg_length)
        total = 0.0
        for term in query_terms:
            f = tf.get(term, 0)
            if f:
                total += self.idf(term) * f * (BM25_K1 + 1.0) / (f + norm)
        return total


def build_index(passages: Iterable[Passage]) -> Index:
    return Index(passages)


def query_index(index: Index, query: str, k: int = DEFAULT_TOP_K) -> List[ScoredPassage]:
    """Top-k passages by BM25 score; zero-score passages are excluded.

    Ties break by ascending passage_id for reproducible rankings.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    terms = tokenize(query)
    if not terms:
        raise InvalidQuery("query tokenizes to nothing")
    scored = []
    for pid in index.passages:
        s = index.score(terms, pid)
        if s > 0.0:
            scored.append((s, pid))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return [
        ScoredPassage(passage=index.passages[pid], score=s, rank=rank)
        for rank, (s, pid) in enumerate(scored[:k], start=1)
    ]


_BLOCK_TAGS = frozenset(
    "p div br h1 h2 h3 h4 h5 h6 li ul ol table tr td th blockquote pre "
    "section article header footer".split()
)
_DROP_RE = re.compile(
    r"<(script|style|head)\b[^>]*>.*?</\1\s*>", re.IGNORECASE | re.DOTALL
)
_BLOCK_RE = re.compile(
    r"</?(%s)\b[^>]*>" % "|".join(_BLOCK_TAGS), re.IGNORECASE
)
_TAG_RE = re.compile(r"<[^>]+>")


def clean_html(raw_html: str) -> str:
    """Strip markup to plain text with paragraph breaks at block boundaries."""
    text = _DROP_RE.sub(" ", raw_html)
    text = _BLOCK_RE.sub("\x00", text)
    text = _TAG_RE.sub(" ", text)
    text = html.unescape(text)
    paragraphs = []
    for part in text.split("\x00"):
        collapsed = " ".join(part.split())
        if collapsed:
            paragraphs.append(collapsed)
    return "\n\n".join(paragraphs)


def _fixture_path(fixture_dir: str, query: str) -> Path:
    digest = hashlib.sha256(query.encode("utf-8")).hexdigest()
    return Path(fixture_dir) / f"{digest}.json"


def _result_from_item(url: str, raw_html) -> SearchResult:
    if not isinstance(raw_html, str):
        return SearchResult(url=url, raw_html="", cleaned_text="",
                            fetch_status=FetchStatus.PARSE_ERROR)
    try:
        cleaned = clean_html(raw_html)
    except Exception:
        return SearchResult(url=url, raw_html=raw_html, cleaned_text="",
                            fetch_status=FetchStatus.PARSE_ERROR)
    if not cleaned:
        return SearchResult(url=url, raw_html=raw_html, cleaned_text="",
                            fetch_status=FetchStatus.PARSE_ERROR)
    return SearchResult(url=url, raw_html=raw_html, cleaned_text=cleaned,
                        fetch_status=FetchStatus.OK)


def _request_with_retries(url: str, headers: dict, timeout: float,
                          attempts: int = 3, backoff: float = 1.0):
    last_exc = None
    for attempt in range(attempts):
        try:
            return requests.get(url, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            last_exc = exc
            if attempt < attempts - 1:
                time.sleep(backoff * (2 ** attempt))
    raise TransportError(f"backend unreachable after {attempts} attempts: {last_exc}")


def search_web(config: RetrievalConfig, query: str) -> List[SearchResult]:
    """Issue one verbatim-query search and return up to k cleaned results.

    Per-result fetch or parse failures are recorded in fetch_status; only
    the search call itself can abort the batch.
    """
    if not query:
        raise InvalidQuery("query must be non-empty")
    if config.backend == Backend.FIXTURE:
        if not config.fixture_dir:
            raise ValueError("fixture backend requires fixture_dir")
        path = _fixture_path(config.fixture_dir, query)
        if not path.exists():
            return []
        payload = json.loads(path.read_text(encoding="utf-8"))
        results = [
            _result_from_item(item.get("link", ""), item.get("html"))
            for item in payload.get("items", [])
        ]
        return results[: config.k]
    if config.backend != Backend.SEARCH_API:
        raise ValueError(f"search_web does not support backend {config.backend}")

    params = {"q": query, "num": str(config.k)}
    if config.site_restrict:
        params["siteSearch"] = config.site_restrict
    url = f"{config.endpoint}?{urllib.parse.urlencode(params)}"
    headers = {"User-Agent": config.user_agent}
    response = _request_with_retries(url, headers, FETCH_TIMEOUT)
    if not (200 <= response.status_code < 300):
        raise BackendError(f"search call failed with status {response.status_code}")
    items = response.json().get("items", [])
    results = []
    for item in items[: config.k]:
        link = item.get("link", "")
        try:
            page = _request_with_retries(link, headers, FETCH_TIMEOUT, attempts=1)
        except TransportError:
            results.append(SearchResult(url=link, raw_html="", cleaned_text="",
                                        fetch_status=FetchStatus.HTTP_ERROR))
            continue
        if not (200 <= page.status_code < 300):
            results.append(SearchResult(url=link, raw_html="", cleaned_text="",
                                        fetch_status=FetchStatus.HTTP_ERROR))
            continue
        results.append(_result_from_item(link, page.text))
    return results


def write_fixture(fixture_dir, query: str, items: List[dict]) -> Path:
    """Store `items` ([{"link":..., "html":...}]) for `query` in a fixture dir."""
    path = _fixture_path(str(fixture_dir), query)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps({"items": items}), encoding="utf-8")
    return path
