import csv
import json

import pytest

from webaug.generator import MockModel, SamplingParams
from webaug.pipeline import RunConfig
from webaug.reporting import (ReportError, SweepSpec, entropy_histogram,
                              format_histogram_table, format_sweep_table,
                              load_trace_records, run_sweep,
                              write_entropy_report)
from webaug.retrieval import RetrievalConfig, write_fixture
from webaug.unify import TaskExample

from test_pipeline import UNSURE, closed_book, qa_example, write_corpus


def record(value, metric_value):
    return {"confidence": {"value": value}, "metric_value": metric_value}


class TestEntropyHistogram:
    def test_group_means(self):
        records = [record(1.0, 1.0)] * 3 + [record(5.0, 0.0)] * 2
        histogram = entropy_histogram(records)
        assert histogram.correct_mean == pytest.approx(1.0)
        assert histogram.incorrect_mean == pytest.approx(5.0)

    def test_all_correct_leaves_incorrect_empty(self):
        records = [record(float(i), 1.0) for i in range(10)]
        histogram = entropy_histogram(records)
        assert sum(histogram.incorrect_counts) == 0
        assert sum(histogram.correct_counts) == 10
        assert histogram.incorrect_mean is None

    def test_counts_sum_to_trace_count(self):
        records = [record(0.1 * i, float(i % 2)) for i in range(37)]
        histogram = entropy_histogram(records)
        total = sum(histogram.correct_counts) + sum(histogram.incorrect_counts)
        assert total == 37

    def test_bins_partition_value_range(self):
        records = [record(v, 1.0) for v in (2.0, 3.5, 9.0)]
        histogram = entropy_histogram(records)
        assert histogram.bin_edges[0] == 2.0
        assert histogram.bin_edges[-1] == pytest.approx(9.0)
        assert len(histogram.bin_edges) == 21

    def test_traces_without_confidence_skipped(self):
        records = [record(1.0, 1.0), {"confidence": None, "metric_value": 0.0}]
        histogram = entropy_histogram(records)
        assert sum(histogram.correct_counts) == 1

    def test_empty_rejected(self):
        with pytest.raises(ReportError):
            entropy_histogram([])

    def test_write_report_emits_csv_text_and_png(self, tmp_path):
        records = [record(0.5 * i, float(i % 2)) for i in range(20)]
        histogram = entropy_histogram(records)
        csv_path = write_entropy_report(histogram, tmp_path)
        reports = tmp_path / "reports"
        assert csv_path == reports / "entropy_histogram.csv"
        with csv_path.open() as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["bin_start", "bin_end", "correct", "incorrect"]
        assert len(rows) == 21
        assert (reports / "entropy_histogram.txt").exists()
        assert (reports / "entropy_histogram.png").stat().st_size > 0
        assert "mean entropy" in format_histogram_table(histogram)


class TestSweepSpec:
    def base(self, tmp_path):
        return RunConfig(output_dir=str(tmp_path / "out"),
                         mock_table_path="unused.json")

    def test_unknown_parameter(self, tmp_path):
        with pytest.raises(ReportError):
            SweepSpec("temperature", [1, 2], self.base(tmp_path))

    def test_numeric_values_must_increase(self, tmp_path):
        with pytest.raises(ReportError):
            SweepSpec("eta", [2.0, 1.0], self.base(tmp_path))
        with pytest.raises(ReportError):
            SweepSpec("eta", [1.0, 1.0], self.base(tmp_path))

    def test_bands_must_be_disjoint(self, tmp_path):
        with pytest.raises(ReportError):
            SweepSpec("top_k_band", [(1, 5), (5, 8)], self.base(tmp_path))

    def test_empty_values(self, tmp_path):
        with pytest.raises(ReportError):
            SweepSpec("eta", [], self.base(tmp_path))


def sweep_fixtures(tmp_path):
    """Four-example suite on the fixture search backend (two uncertain)."""
    examples = [
        qa_example("e1", "sure one?", "a1"),
        qa_example("e2", "sure two?", "a2"),
        qa_example("e3", "hard one?", "Zanzibar"),
        qa_example("e4", "hard two?", "Zanzibar"),
    ]
    table = {
        closed_book("sure one?"): {"a1": 0.999, "zz": 0.001},
        closed_book("sure two?"): {"a2": 0.999, "zz": 0.001},
        closed_book("hard one?"): UNSURE,
        closed_book("hard two?"): UNSURE,
    }
    mock = MockModel(table, rules=[("Context:", {"Zanzibar": 1.0})])
    fixture_dir = tmp_path / "fx"
    page = "<html><p>Zanzibar answers all hard questions here</p></html>"
    for question in ("sure one?", "sure two?", "hard one?", "hard two?"):
        write_fixture(fixture_dir, question,
                      [{"link": "https://example.com", "html": page}])
    config = RunConfig(
        output_dir=str(tmp_path / "out"), seed=3, mock_table_path=None,
        retrieval=RetrievalConfig(backend="fixture",
                                  fixture_dir=str(fixture_dir)))
    config.confidence.sampling = SamplingParams(seed=1)
    return examples, mock, config


class TestRunSweep:
    def test_eta_extremes(self, tmp_path):
        examples, mock, config = sweep_fixtures(tmp_path)
        spec = SweepSpec("eta", [0.0, 1e9], config)
        rows = run_sweep(spec, backend=mock, examples=examples)
        assert [r.value for r in rows] == [0.0, 1e9]
        assert rows[0].retrieval_rate == 1.0
        assert rows[1].retrieval_rate == 0.0
        reports = tmp_path / "out" / "reports"
        assert (reports / "sweep_eta.csv").exists()
        assert (reports / "sweep_eta.txt").exists()
        assert (reports / "sweep_eta.png").stat().st_size > 0

    def test_top_k_band_accuracy_non_increasing(self, tmp_path):
        question = "what is the capital of freedonia"
        examples = [qa_example("e1", question, "Zanzibar")]
        corpus = write_corpus(tmp_path, [
            ("doc1", "the capital of freedonia is Zanzibar officially"),
            ("doc2", "capital freedonia related filler with no answer"),
            ("doc3", "freedonia travel notes mention nothing useful"),
        ])
        mock = MockModel(
            {closed_book(question): UNSURE},
            rules=[("Zanzibar", {"Zanzibar": 1.0}),
                   ("Context:", {"wrong": 1.0})])
        config = RunConfig(output_dir=str(tmp_path / "out"), seed=5,
                           corpus_path=str(corpus))
        config.confidence.sampling = SamplingParams(seed=1)
        spec = SweepSpec("top_k_band", [(1, 1), (2, 3)], config)
        rows = run_sweep(spec, backend=mock, examples=examples)
        assert rows[0].accuracy == 1.0
        assert rows[1].accuracy == 0.0
        assert rows[0].accuracy >= rows[1].accuracy

    def test_n_samples_sweep_rows_ordered(self, tmp_path):
        examples, mock, config = sweep_fixtures(tmp_path)
        spec = SweepSpec("n_samples", [10, 50, 100], config)
        rows = run_sweep(spec, backend=mock, examples=examples)
        assert [r.value for r in rows] == [10, 50, 100]
        assert all(r.status == "ok" for r in rows)

    def test_cached_rows_resume_without_rerun(self, tmp_path):
        examples, mock, config = sweep_fixtures(tmp_path)
        reports = tmp_path / "out" / "reports"
        reports.mkdir(parents=True)
        (reports / "sweep_eta_0.0.json").write_text(json.dumps({
            "value": "0.0", "accuracy": 0.123, "retrieval_rate": 0.456,
            "status": "ok"}), encoding="utf-8")
        rows = run_sweep(SweepSpec("eta", [0.0], config),
                         backend=mock, examples=examples)
        assert rows[0].accuracy == 0.123
        assert rows[0].retrieval_rate == 0.456

    def test_failed_row_marked_sweep_continues(self, tmp_path):
        examples, mock, config = sweep_fixtures(tmp_path)
        # an invalid band (lo > hi) fails config validation for that row only
        spec = SweepSpec("top_k_band", [(1, 2), (5, 4)], config)
        rows = run_sweep(spec, backend=mock, examples=examples)
        assert rows[0].status == "ok"
        assert rows[1].status.startswith("failed")
        table = format_sweep_table(spec, rows)
        assert "failed" in table

    def test_load_trace_records(self, tmp_path):
        path = tmp_path / "traces.jsonl"
        path.write_text('{"a": 1}\n\n{"a": 2}\n', encoding="utf-8")
        assert load_trace_records(path) == [{"a": 1}, {"a": 2}]
