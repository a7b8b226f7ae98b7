"""End-to-end orchestration: gate, retrieve, filter, prompt, generate, score.

Each example makes one pass through the adaptive flow: self-evaluate on the
closed-book prompt, retrieve and filter evidence only when unconfident,
then decode greedily. Traces are the single source of truth; metrics are
always recomputable from the trace file without a backend.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from threading import Lock
from typing import Dict, List, Optional, Sequence, Tuple

import yaml

from . import ckl as ckl_mod
from .confidence import ConfidenceConfig, ConfidenceReport, Criterion, gate
from .corpus import Passage, chunk, ingest_corpus, tokenize
from .evidence import EvidenceSet, stage1_select, stage2_select
from .generator import (GeneratorBackend, HttpBackend, MockModel,
                        SamplingParams, greedy_text)
from .metrics import Metric, MetricReport, report, score_example
from .retrieval import (Backend, FetchStatus, Index, RetrievalConfig,
                        build_index, query_index, search_web)
from .unify import MixingConfig, RenderedPrompt, TaskExample, TaskFamily, \
    load_task_file, render_prompt

ENV_PREFIX = "WEBAUG_"

# default metric per task family; per-task overrides live in RunConfig
FAMILY_METRICS = {
    TaskFamily.OPEN_DOMAIN_QA: Metric.EM,
    TaskFamily.DIALOGUE: Metric.F1,
    TaskFamily.FACT_CHECKING: Metric.ACCURACY,
    TaskFamily.SLOT_FILLING: Metric.ACCURACY,
    TaskFamily.COMMONSENSE_QA: Metric.ACCURACY,
    TaskFamily.COMMONSENSE_REASONING: Metric.ACCURACY,
    TaskFamily.NLI: Metric.ACCURACY,
}


class ConfigError(Exception):
    pass


@dataclass
class RunConfig:
    task_files: List[str] = field(default_factory=list)
    corpus_path: Optional[str] = None
    index_path: Optional[str] = None
    generator_endpoint: Optional[str] = None
    mock_table_path: Optional[str] = None
    output_dir: str = "runs/out"
    seed: int = 0
    workers: int = 1
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    confidence: ConfidenceConfig = field(default_factory=ConfidenceConfig)
    mixing: MixingConfig = field(default_factory=MixingConfig)
    # adaptive = gate decides; always / never bypass the gate
    retrieval_mode: str = "adaptive"
    metric_overrides: Dict[str, str] = field(default_factory=dict)
    eta_overrides: Dict[str, float] = field(default_factory=dict)
    rank_band: Optional[Tuple[int, int]] = None
    k_final: int = 10
    passage_size: int = 100
    gazetteer: List[str] = field(default_factory=list)
    include_timings: bool = False
    resume: bool = False

    def __post_init__(self):
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.retrieval_mode not in ("adaptive", "always", "never"):
            raise ConfigError(f"unknown retrieval_mode {self.retrieval_mode!r}")
        if self.rank_band is not None:
            lo, hi = self.rank_band
            if not (1 <= lo <= hi):
                raise ConfigError("rank_band must be 1 <= lo <= hi")


def _apply_env_overrides(tree: dict, environ=None) -> dict:
    """Override config keys from WEBAUG_-prefixed variables.

    Nested keys use double underscores, e.g. WEBAUG_RETRIEVAL__K=5.
    """
    environ = os.environ if environ is None else environ
    for name, raw in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        node = tree
        for key in path[:-1]:
            node = node.setdefault(key, {})
        try:
            value = json.loads(raw)
        except ValueError:
            value = raw
        node[path[-1]] = value
    return tree


def load_run_config(path, environ=None) -> RunConfig:
    tree = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    if not isinstance(tree, dict):
        raise ConfigError("config root must be a mapping")
    tree = _apply_env_overrides(tree, environ)
    return config_from_dict(tree)


def config_from_dict(tree: dict) -> RunConfig:
    tree = dict(tree)
    retrieval = tree.pop("retrieval", {})
    confidence = tree.pop("confidence", {})
    sampling = confidence.pop("sampling", {}) if isinstance(confidence, dict) else {}
    mixing = tree.pop("mixing", {})
    band = tree.pop("rank_band", None)
    known = {f.name for f in dataclasses.fields(RunConfig)}
    unknown = set(tree) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return RunConfig(
        retrieval=RetrievalConfig(**retrieval),
        confidence=ConfidenceConfig(sampling=SamplingParams(**sampling),
                                    **confidence),
        mixing=MixingConfig(**mixing),
        rank_band=tuple(band) if band else None,
        **tree,
    )


@dataclass
class ExampleTrace:
    example_id: str
    task: str
    family: str
    input_text: str
    gold_outputs: List[str]
    options: List[str]
    confidence: Optional[ConfidenceReport] = None
    retrieved: List[dict] = field(default_factory=list)
    evidence: Optional[EvidenceSet] = None
    prompt: Optional[RenderedPrompt] = None
    prediction: str = ""
    metric: str = ""
    metric_value: float = 0.0
    timings: Dict[str, float] = field(default_factory=dict)
    status: str = "ok"
    error: str = ""

    def to_dict(self, include_timings: bool = False) -> dict:
        d = {
            "example_id": self.example_id,
            "task": self.task,
            "family": self.family,
            "input": self.input_text,
            "golds": list(self.gold_outputs),
            "options": list(self.options),
            "confidence": None,
            "retrieved": self.retrieved,
            "evidence": None,
            "prompt": None,
            "prediction": self.prediction,
            "metric": self.metric,
            "metric_value": self.metric_value,
            "status": self.status,
            "error": self.error,
        }
        if self.confidence is not None:
            d["confidence"] = {
                "criterion": self.confidence.criterion.value,
                "value": self.confidence.value,
                "needs_retrieval": self.confidence.needs_retrieval,
                "samples_used": self.confidence.samples_used,
            }
        if self.evidence is not None:
            d["evidence"] = {
                "passages": [
                    {"passage_id": p.passage_id, "text": p.text}
                    for p in self.evidence.passages
                ],
                "stage1_similarities": self.evidence.stage1_similarities,
                "stage2_entropies": self.evidence.stage2_entropies,
            }
        if self.prompt is not None:
            d["prompt"] = {
                "text": self.prompt.text,
                "passage_count": self.prompt.passage_count,
                "option_count": self.prompt.option_count,
            }
        if include_timings:
            d["timings"] = self.timings
        return d


def example_seed(base_seed: int, example_id: str) -> int:
    digest = hashlib.sha256(f"{base_seed}:{example_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:4], "big")


class Pipeline:
    """Shared immutable resources plus per-example solving logic."""

    def __init__(self, config: RunConfig,
                 backend: Optional[GeneratorBackend] = None,
                 index: Optional[Index] = None):
        self.config = config
        self.backend = backend or self._resolve_backend(config)
        self.index = index
        if (self.index is None
                and config.retrieval.backend == Backend.LOCAL_INDEX
                and config.corpus_path):
            self.index = build_index_from_corpus(config.corpus_path,
                                                 config.passage_size)
        self._lock = Lock()
        self.search_calls = 0

    @staticmethod
    def _resolve_backend(config: RunConfig) -> GeneratorBackend:
        if config.mock_table_path:
            return MockModel.from_file(config.mock_table_path)
        if config.generator_endpoint:
            return HttpBackend(config.generator_endpoint)
        raise ConfigError("config needs generator_endpoint or mock_table_path")

    def _confidence_config(self, example: TaskExample) -> ConfidenceConfig:
        cfg = self.config.confidence
        eta = self.config.eta_overrides.get(example.task, cfg.entropy_threshold)
        sampling = replace(cfg.sampling,
                           seed=example_seed(self.config.seed, example.example_id))
        return replace(cfg, entropy_threshold=eta, sampling=sampling)

    def metric_for(self, example: TaskExample) -> Metric:
        override = self.config.metric_overrides.get(example.task)
        if override:
            return Metric(override)
        return FAMILY_METRICS[example.family]

    def _retrieve_candidates(self, example: TaskExample,
                             trace: ExampleTrace) -> List[Passage]:
        cfg = self.config.retrieval
        if cfg.backend == Backend.LOCAL_INDEX:
            if self.index is None:
                raise ConfigError("local_index backend requires an index")
            scored = query_index(self.index, example.input_text, cfg.k)
            trace.retrieved = [
                {"passage_id": sp.passage.passage_id, "score": sp.score,
                 "rank": sp.rank}
                for sp in scored
            ]
            candidates = [sp.passage for sp in scored]
        else:
            with self._lock:
                self.search_calls += 1
            results = search_web(cfg, example.input_text)
            trace.retrieved = [
                {"url": r.url, "fetch_status": r.fetch_status.value}
                for r in results
            ]
            candidates = []
            for i, result in enumerate(results):
                if result.fetch_status != FetchStatus.OK:
                    continue
                candidates.append(stage1_select(
                    example.input_text, result.cleaned_text,
                    passage_id=f"{example.example_id}:web:{i}"))
        if self.config.rank_band:
            lo, hi = self.config.rank_band
            candidates = candidates[lo - 1:hi]
        return candidates

    def solve_example(self, example: TaskExample) -> ExampleTrace:
        trace = ExampleTrace(
            example_id=example.example_id,
            task=example.task,
            family=example.family.value,
            input_text=example.input_text,
            gold_outputs=list(example.gold_outputs),
            options=list(example.options),
        )
        try:
            self._solve(example, trace)
        except Exception as exc:
            trace.status = "failed"
            trace.error = f"{type(exc).__name__}: {exc}"
        return trace

    def _solve(self, example: TaskExample, trace: ExampleTrace):
        conf_cfg = self._confidence_config(example)
        closed_book = render_prompt(example, [])
        t0 = time.perf_counter()
        conf = gate(self.backend, closed_book.text, conf_cfg,
                    example_id=example.example_id)
        trace.timings["gate"] = (time.perf_counter() - t0) * 1000.0
        if self.config.retrieval_mode == "always":
            conf = replace(conf, needs_retrieval=True)
        elif self.config.retrieval_mode == "never":
            conf = replace(conf, needs_retrieval=False)
        trace.confidence = conf

        candidates: List[Passage] = []
        if conf.needs_retrieval:
            t0 = time.perf_counter()
            candidates = self._retrieve_candidates(example, trace)
            trace.timings["retrieve"] = (time.perf_counter() - t0) * 1000.0

        if conf.needs_retrieval and candidates:
            t0 = time.perf_counter()
            render_fn = lambda _text, passage_text: (
                closed_book.text if passage_text is None
                else render_prompt(example, [_as_passage(passage_text)]).text)
            trace.evidence = stage2_select(
                self.backend, example.input_text, candidates, conf_cfg,
                k_final=min(self.config.k_final, 10), render=render_fn,
                example_id=example.example_id)
            trace.timings["filter"] = (time.perf_counter() - t0) * 1000.0
            prompt = render_prompt(example, trace.evidence.passages[:10])
        else:
            prompt = closed_book
        trace.prompt = prompt

        t0 = time.perf_counter()
        trace.prediction = greedy_text(self.backend, prompt.text)
        trace.timings["generate"] = (time.perf_counter() - t0) * 1000.0

        metric = self.metric_for(example)
        trace.metric = metric.value
        trace.metric_value = score_example(metric, trace.prediction,
                                           example.gold_outputs, example.options)


def _as_passage(text: str) -> Passage:
    return Passage(passage_id="candidate:0", doc_id="candidate", ordinal=0,
                   text=text, token_count=max(len(tokenize(text)), 1))


def build_index_from_corpus(corpus_path, passage_size: int = 100) -> Index:
    passages = []
    for doc in ingest_corpus(corpus_path):
        passages.extend(chunk(doc, passage_size))
    return build_index(passages)


def load_examples(config: RunConfig) -> List[TaskExample]:
    examples: List[TaskExample] = []
    for task_file in config.task_files:
        examples.extend(load_task_file(task_file))
    return examples


def run_batch(config: RunConfig,
              backend: Optional[GeneratorBackend] = None,
              index: Optional[Index] = None,
              examples: Optional[Sequence[TaskExample]] = None) -> dict:
    """Process every example with a worker pool and persist run artifacts.

    Writes traces.jsonl, per-task metric reports, and summary.json under
    output_dir. Returns the summary dict; its "failed" count feeds the
    CLI exit code.
    """
    pipeline = Pipeline(config, backend=backend, index=index)
    if examples is None:
        examples = load_examples(config)

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traces_path = out_dir / "traces.jsonl"

    done_ids = set()
    previous: List[dict] = []
    if config.resume and traces_path.exists():
        with traces_path.open(encoding="utf-8") as f:
            for line in f:
                if line.strip():
                    record = json.loads(line)
                    previous.append(record)
                    done_ids.add(record["example_id"])
    pending = [ex for ex in examples if ex.example_id not in done_ids]

    if config.workers == 1:
        traces = [pipeline.solve_example(ex) for ex in pending]
    else:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            traces = list(pool.map(pipeline.solve_example, pending))

    records = previous + [
        t.to_dict(include_timings=config.include_timings) for t in traces]
    records.sort(key=lambda r: r["example_id"])
    with traces_path.open("w", encoding="utf-8") as f:
        for record in records:
            f.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")

    reports = evaluate_traces(traces_path)
    for task_report in reports:
        path = out_dir / f"metrics_{task_report.task}.json"
        path.write_text(json.dumps(task_report.to_dict(), sort_keys=True),
                        encoding="utf-8")

    retrieved = sum(1 for r in records
                    if r["confidence"] and r["confidence"]["needs_retrieval"])
    entropies = [r["confidence"]["value"] for r in records
                 if r["confidence"]
                 and r["confidence"]["criterion"] == Criterion.ENTROPY.value]
    summary = {
        "n_examples": len(records),
        "retrieved": retrieved,
        "skipped": len(records) - retrieved,
        "failed": sum(1 for r in records if r["status"] == "failed"),
        "mean_entropy": (sum(entropies) / len(entropies)) if entropies else None,
        "search_calls": pipeline.search_calls,
        "metrics": {rep.task: {"metric": rep.metric.value, "value": rep.value}
                    for rep in reports},
    }
    (out_dir / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8")
    return summary


def evaluate_traces(traces_path, metric: Optional[Metric] = None) -> List[MetricReport]:
    """Recompute per-task metric reports from a trace file (no backend)."""
    by_task: Dict[str, Tuple[Metric, List[float]]] = {}
    with Path(traces_path).open(encoding="utf-8") as f:
        for line in f:
            if not line.strip():
                continue
            record = json.loads(line)
            if record["status"] != "ok":
                continue
            task = record["task"]
            m = metric or Metric(record["metric"])
            value = score_example(m, record["prediction"], record["golds"],
                                  record.get("options", ()))
            by_task.setdefault(task, (m, []))[1].append(value)
    return [report(task, m, values)
            for task, (m, values) in sorted(by_task.items())]


def build_ckl_corpus(config: RunConfig,
                     backend: Optional[GeneratorBackend] = None,
                     index: Optional[Index] = None,
                     examples: Optional[Sequence[TaskExample]] = None) -> dict:
    """Mask retrieved passages for retrieval-flagged examples and write the
    CKL corpus JSONL. Passages without entities are counted, not written."""
    pipeline = Pipeline(config, backend=backend, index=index)
    if examples is None:
        examples = load_examples(config)
    tagger = ckl_mod.EntityTagger(gazetteer=frozenset(config.gazetteer))

    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    out_path = out_dir / "ckl_corpus.jsonl"

    written = 0
    skipped = 0
    with out_path.open("w", encoding="utf-8") as f:
        for example in sorted(examples, key=lambda e: e.example_id):
            conf_cfg = pipeline._confidence_config(example)
            closed_book = render_prompt(example, [])
            conf = gate(pipeline.backend, closed_book.text, conf_cfg,
                        example_id=example.example_id)
            flagged = conf.needs_retrieval or config.retrieval_mode == "always"
            if not flagged or config.retrieval_mode == "never":
                continue
            trace = ExampleTrace(example_id=example.example_id,
                                 task=example.task,
                                 family=example.family.value,
                                 input_text=example.input_text,
                                 gold_outputs=list(example.gold_outputs),
                                 options=list(example.options))
            for passage in pipeline._retrieve_candidates(example, trace):
                masked = ckl_mod.mask_passage(passage, tagger)
                if masked.entity_count == 0:
                    skipped += 1
                    continue
                f.write(json.dumps({
                    "passage_id": masked.passage_id,
                    "masked_text": masked.masked_text,
                    "spans": [[j, s] for j, s in masked.spans],
                }, sort_keys=True, ensure_ascii=False) + "\n")
                written += 1
    summary = {"records": written, "skipped_no_entities": skipped,
               "output": str(out_path)}
    (out_dir / "ckl_summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2), encoding="utf-8")
    return summary
