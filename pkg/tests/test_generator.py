import json
import math
import threading
from collections import Counter
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from webaug.generator import (IMPOSSIBLE_LOGPROB, ContractViolation,
                              GenerationSample, GeneratorError, HttpBackend,
                              MockModel, SamplingParams, UnknownPrompt,
                              greedy_text, mean_nll, sample, score)


class TestGenerationSample:
    def test_total_must_match_sum(self):
        with pytest.raises(ContractViolation):
            GenerationSample(text="a", tokens=("a",), token_logprobs=(-1.0,),
                             total_logprob=-2.0)

    def test_alignment_enforced(self):
        with pytest.raises(ContractViolation):
            GenerationSample(text="a b", tokens=("a", "b"),
                             token_logprobs=(-1.0,), total_logprob=-1.0)


class TestMockSample:
    def test_degenerate_distribution(self):
        mock = MockModel({"P": {"yes": 1.0}})
        samples = sample(mock, "P", SamplingParams(n_samples=5))
        assert [s.text for s in samples] == ["yes"] * 5
        assert all(s.total_logprob == 0.0 for s in samples)

    def test_empirical_frequency(self):
        mock = MockModel({"P": {"a": 0.5, "b": 0.5}})
        samples = sample(mock, "P", SamplingParams(n_samples=1000, seed=11))
        freq = Counter(s.text for s in samples)["a"] / 1000
        assert abs(freq - 0.5) < 0.05

    def test_greedy_is_argmax(self):
        mock = MockModel({"P": {"a": 0.7, "b": 0.3}})
        samples = sample(mock, "P", SamplingParams(n_samples=3, temperature=0.0))
        assert [s.text for s in samples] == ["a"] * 3

    def test_seed_reproducible(self):
        mock = MockModel({"P": {"a": 0.3, "b": 0.3, "c": 0.4}})
        params = SamplingParams(n_samples=50, seed=99)
        assert sample(mock, "P", params) == sample(mock, "P", params)

    def test_chi_square_goodness_of_fit(self):
        dist = {"a": 0.2, "b": 0.3, "c": 0.5}
        mock = MockModel({"P": dist})
        n = 10_000
        counts = Counter(
            s.text for s in sample(mock, "P", SamplingParams(n_samples=n, seed=5)))
        chi2 = sum((counts[o] - n * p) ** 2 / (n * p) for o, p in dist.items())
        # chi-square critical value, 2 degrees of freedom, alpha=0.01
        assert chi2 < 9.21

    def test_empty_prompt_rejected(self):
        mock = MockModel({"P": {"a": 1.0}})
        with pytest.raises(ValueError):
            sample(mock, "", SamplingParams())

    def test_unknown_prompt(self):
        mock = MockModel({"P": {"a": 1.0}})
        with pytest.raises(UnknownPrompt):
            sample(mock, "other", SamplingParams())

    def test_rule_fallback(self):
        mock = MockModel({"P": {"a": 1.0}},
                         rules=[("needle", {"b": 1.0})],
                         default={"c": 1.0})
        assert sample(mock, "has needle inside", SamplingParams())[0].text == "b"
        assert sample(mock, "anything else", SamplingParams())[0].text == "c"


class TestMockScore:
    def test_probability_one(self):
        mock = MockModel({"P": {"yes": 1.0}})
        assert score(mock, "P", "yes").total_logprob == 0.0

    def test_half_probability(self):
        mock = MockModel({"P": {"a": 0.5, "b": 0.5}})
        assert score(mock, "P", "a").total_logprob == pytest.approx(
            math.log(0.5), abs=1e-12)

    def test_unsupported_target_floored(self):
        mock = MockModel({"P": {"a": 1.0}})
        assert score(mock, "P", "zzz").total_logprob <= -1e8

    def test_matches_table_exactly(self):
        dist = {"x": 0.25, "y z": 0.75}
        mock = MockModel({"P": dist})
        for target, p in dist.items():
            assert score(mock, "P", target).total_logprob == pytest.approx(
                math.log(p), abs=1e-12)


class TestMeanNll:
    def test_two_token_target(self):
        mock = MockModel({"P": {"a b": 0.25, "c": 0.75}})
        assert mean_nll(mock, "P", "a b") == pytest.approx(
            -math.log(0.25) / 2, abs=1e-9)
        assert mean_nll(mock, "P", "a b") == pytest.approx(0.693147, abs=1e-5)

    def test_probability_one_target(self):
        mock = MockModel({"P": {"sure": 1.0}})
        assert mean_nll(mock, "P", "sure") == 0.0

    def test_matches_direct_table_computation(self):
        dist = {"one": 0.1, "two words": 0.9}
        mock = MockModel({"P": dist})
        for target, p in dist.items():
            m = len(target.split())
            assert mean_nll(mock, "P", target) == pytest.approx(
                -math.log(p) / m, abs=1e-9)


class TestDistributionValidation:
    def test_must_sum_to_one(self):
        with pytest.raises(ValueError):
            MockModel({"P": {"a": 0.5, "b": 0.4}})

    def test_positive_probabilities(self):
        with pytest.raises(ValueError):
            MockModel({"P": {"a": 1.0, "b": 0.0}})

    def test_from_file(self, tmp_path):
        path = tmp_path / "table.json"
        path.write_text(json.dumps({"P": {"a": 1.0}}))
        mock = MockModel.from_file(path)
        assert greedy_text(mock, "P") == "a"


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers["Content-Length"])
        body = json.loads(self.rfile.read(length))
        if self.path == "/sample":
            payload = {"samples": [
                {"text": "ok", "tokens": ["ok"], "token_logprobs": [-0.5]}
                for _ in range(body["n"])
            ]}
        elif self.path == "/score":
            payload = {"text": body["target"],
                       "tokens": body["target"].split(),
                       "token_logprobs": [-0.25] * len(body["target"].split())}
        elif self.path == "/bad-sample":
            payload = {"samples": [{"text": "ok"}]}
        else:
            self.send_response(404)
            self.end_headers()
            return
        data = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture(scope="module")
def http_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_port}"
    server.shutdown()


class TestHttpBackend:
    def test_sample_contract(self, http_server):
        backend = HttpBackend(http_server)
        samples = backend.sample("P", SamplingParams(n_samples=3))
        assert len(samples) == 3
        assert samples[0].total_logprob == -0.5

    def test_score_contract(self, http_server):
        backend = HttpBackend(http_server)
        result = backend.score("P", "two tokens")
        assert result.tokens == ("two", "tokens")
        assert result.total_logprob == pytest.approx(-0.5)

    def test_unreachable_backend(self):
        backend = HttpBackend("http://127.0.0.1:1")
        with pytest.raises(GeneratorError):
            backend.sample("P", SamplingParams())

    def test_missing_logprobs_is_contract_violation(self, http_server):
        backend = HttpBackend(http_server)
        with pytest.raises(ContractViolation):
            backend._parse_sample({"text": "ok"})
