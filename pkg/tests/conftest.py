import math
from collections import Counter

import pytest

from webaug.corpus import Passage


def make_passage(pid, text):
    doc_id, _, ordinal = pid.rpartition(":")
    return Passage(
        passage_id=pid,
        doc_id=doc_id or pid,
        ordinal=int(ordinal) if ordinal.isdigit() else 0,
        text=text,
        token_count=max(len(text.split()), 1),
    )


def brute_force_bm25(passages, query, k, k1=1.2, b=0.75):
    """Independent BM25 ranking oracle: score every passage from scratch."""
    toks = {p.passage_id: p.text.split() for p in passages}
    n = len(passages)
    avg_len = sum(len(t) for t in toks.values()) / n
    df = Counter()
    for t in toks.values():
        for term in set(t):
            df[term] += 1
    query_terms = query.split()
    scored = []
    for p in passages:
        counts = Counter(toks[p.passage_id])
        length = len(toks[p.passage_id])
        s = 0.0
        for term in query_terms:
            f = counts.get(term, 0)
            if f == 0:
                continue
            idf = math.log((n - df[term] + 0.5) / (df[term] + 0.5) + 1.0)
            s += idf * f * (k1 + 1) / (f + k1 * (1 - b + b * length / avg_len))
        if s > 0:
            scored.append((s, p.passage_id))
    scored.sort(key=lambda pair: (-pair[0], pair[1]))
    return scored[:k]
