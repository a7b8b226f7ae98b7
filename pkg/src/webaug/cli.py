"""Command-line interface for indexing, retrieval, gating, runs, and reports."""

from __future__ import annotations

import json
import pickle
import sys
from pathlib import Path

import click

from .confidence import gate as gate_fn
from .corpus import RecordError, chunk, ingest_corpus
from .generator import MockModel
from .metrics import Metric
from .pipeline import (Pipeline, RunConfig, build_ckl_corpus,
                       build_index_from_corpus, evaluate_traces,
                       load_run_config, run_batch)
from .reporting import (SweepSpec, entropy_histogram, load_trace_records,
                        run_sweep, write_entropy_report)
from .unify import MixingConfig, load_task_file, render_prompt, sample_mixture


@click.group()
def main():
    """Adaptive web-augmented generation toolkit."""


@main.group()
def index():
    """Local BM25 index operations."""


@index.command("build")
@click.option("--corpus", "corpus_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--passage-size", default=100, show_default=True)
def index_build(corpus_path, out_dir, passage_size):
    """Chunk a JSONL corpus into passages and build the inverted index."""
    idx = build_index_from_corpus(corpus_path, passage_size)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with (out / "index.pkl").open("wb") as f:
        pickle.dump(idx, f)
    click.echo(f"indexed {idx.n_passages} passages "
               f"(avg length {idx.avg_length:.1f}) -> {out / 'index.pkl'}")


def _load_index(index_dir):
    with (Path(index_dir) / "index.pkl").open("rb") as f:
        return pickle.load(f)


@main.command()
@click.option("--index", "index_dir", required=True,
              type=click.Path(exists=True))
@click.option("--query", required=True)
@click.option("-k", default=10, show_default=True)
def retrieve(index_dir, query, k):
    """Query the local index and print ranked passages."""
    from .retrieval import query_index
    idx = _load_index(index_dir)
    for sp in query_index(idx, query, k):
        click.echo(f"{sp.rank:>3}  {sp.score:8.4f}  {sp.passage.passage_id}  "
                   f"{sp.passage.text[:80]}")


@main.command()
@click.option("--examples", "examples_path", required=True,
              type=click.Path(exists=True))
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
def gate(examples_path, config_path):
    """Print the retrieve/skip decision for each example."""
    config = load_run_config(config_path)
    pipeline = Pipeline(config)
    errors = []
    for example in load_task_file(examples_path, errors=errors):
        conf_cfg = pipeline._confidence_config(example)
        prompt = render_prompt(example, [])
        report = gate_fn(pipeline.backend, prompt.text, conf_cfg,
                         example_id=example.example_id)
        decision = "retrieve" if report.needs_retrieval else "skip"
        click.echo(f"{example.example_id}\t{report.criterion.value}"
                   f"\t{report.value:.4f}\t{decision}")
    for err in errors:
        click.echo(f"line {err.line_number}: {err.message}", err=True)


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--resume", is_flag=True, default=False)
def run(config_path, resume):
    """Run the full adaptive pipeline over the configured task files."""
    config = load_run_config(config_path)
    config.resume = config.resume or resume
    summary = run_batch(config)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))
    if summary["failed"]:
        sys.exit(1)


@main.command()
@click.option("--traces", "traces_path", required=True,
              type=click.Path(exists=True))
@click.option("--metric", "metric_name",
              type=click.Choice([m.value for m in Metric]), default=None)
def evaluate(traces_path, metric_name):
    """Recompute metrics from a trace file; no backend needed."""
    metric = Metric(metric_name) if metric_name else None
    reports = evaluate_traces(traces_path, metric)
    width = max((len(r.task) for r in reports), default=4)
    click.echo(f"{'task':<{width}}  {'metric':<8}  {'value':>8}  {'n':>6}")
    for r in reports:
        click.echo(f"{r.task:<{width}}  {r.metric.value:<8}  "
                   f"{r.value:>8.4f}  {r.n_examples:>6}")


@main.group()
def ckl():
    """Continual-knowledge-learning corpus operations."""


@ckl.command("build")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
def ckl_build(config_path):
    """Mask retrieved passages for unconfident examples into a CKL corpus."""
    config = load_run_config(config_path)
    summary = build_ckl_corpus(config)
    click.echo(json.dumps(summary, indent=2, sort_keys=True))


@main.command()
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("-n", "n", required=True, type=int)
@click.option("--out", "out_path", default=None, type=click.Path())
def mix(config_path, n, out_path):
    """Sample a temperature-scaled multi-task mixture of size N."""
    config = load_run_config(config_path)
    datasets = {}
    for task_file in config.task_files:
        for example in load_task_file(task_file):
            datasets.setdefault(example.task, []).append(example)
    mixture = sample_mixture(datasets, config.mixing, n)
    lines = [json.dumps({
        "id": ex.example_id, "task": ex.task, "family": ex.family.value,
        "input": ex.input_text, "options": list(ex.options),
        "outputs": list(ex.gold_outputs),
    }, ensure_ascii=False) for ex in mixture]
    if out_path:
        Path(out_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
        click.echo(f"wrote {len(lines)} examples to {out_path}")
    else:
        for line in lines:
            click.echo(line)


@main.group()
def report():
    """Diagnostic reports over finished runs."""


@report.command("entropy")
@click.option("--traces", "traces_path", required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
def report_entropy(traces_path, out_dir):
    """Entropy histograms split by correct/incorrect, as CSV, text and PNG."""
    records = load_trace_records(traces_path)
    histogram = entropy_histogram(records)
    path = write_entropy_report(histogram, out_dir)
    from .reporting import format_histogram_table
    click.echo(format_histogram_table(histogram), nl=False)
    click.echo(f"written to {path.parent}")


@report.command("sweep")
@click.option("--config", "config_path", required=True,
              type=click.Path(exists=True))
@click.option("--parameter", required=True,
              type=click.Choice(["eta", "top_k_band", "n_samples"]))
@click.option("--values", required=True,
              help="JSON list, e.g. '[0,2,4]' or '[[1,5],[6,10]]'")
def report_sweep(config_path, parameter, values):
    """One full run per value; accuracy and retrieval rate per row."""
    config = load_run_config(config_path)
    parsed = json.loads(values)
    if parameter == "top_k_band":
        parsed = [tuple(v) for v in parsed]
    spec = SweepSpec(parameter=parameter, values=parsed, base_config=config)
    rows = run_sweep(spec)
    from .reporting import format_sweep_table
    click.echo(format_sweep_table(spec, rows), nl=False)


if __name__ == "__main__":
    main()
