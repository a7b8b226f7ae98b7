"""Adaptive web-augmented generation toolkit.

Confidence-gated retrieval, two-stage evidence filtering, unified
text-to-text task formatting, continual-knowledge corpus construction,
and an evaluation harness over a pluggable generator backend.
"""

from .ckl import EntityTagger, MaskedSpanExample, ckl_loss, mask_passage, span_targets
from .confidence import (ConfidenceConfig, ConfidenceReport, Criterion,
                         estimate_entropy, gate, sample_prompt_verdict)
from .corpus import Document, Passage, chunk, ingest_corpus, tokenize
from .evidence import EvidenceSet, TfidfEmbedder, cosine, stage1_select, stage2_select
from .generator import (GenerationSample, HttpBackend, MockModel,
                        SamplingParams, mean_nll, sample, score)
from .metrics import (Metric, MetricReport, accuracy, exact_match,
                      normalize_answer, rouge_l, token_f1)
from .pipeline import (ExampleTrace, Pipeline, RunConfig, build_ckl_corpus,
                       evaluate_traces, load_run_config, run_batch)
from .retrieval import (Backend, Index, RetrievalConfig, ScoredPassage,
                        SearchResult, build_index, clean_html, query_index,
                        search_web)
from .unify import (MixingConfig, TaskExample, TaskFamily, load_task_file,
                    mixing_rates, render_prompt, sample_mixture)

__version__ = "0.1.0"
