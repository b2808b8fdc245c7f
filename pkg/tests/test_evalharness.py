import itertools
import json
import math

import pytest
from hypothesis import given, settings, strategies as st

from nefkit.evalharness import (
    ConstantResponder,
    EchoResponder,
    EvalArtifact,
    EvalEntry,
    LlmJudge,
    LocalJudge,
    ScriptedResponder,
    artifact_filename,
    judge_score,
    run_iteration,
    run_protocol,
    similarity_f1,
    tokenize,
)
from nefkit.llm import mock_provider
from nefkit.synth import output_blob


def brute_force_similarity(candidate_tokens, reference_tokens, provider):
    """Per-pair cosine with greedy max matching, no vectorization."""
    unique = list(dict.fromkeys([*candidate_tokens, *reference_tokens]))
    vectors = dict(zip(unique, (v.values for v in provider.embed(unique))))

    def cos(a, b):
        if a == b:
            return 1.0
        num = sum(x * y for x, y in zip(vectors[a], vectors[b]))
        den = math.sqrt(
            sum(x * x for x in vectors[a]) * sum(y * y for y in vectors[b])
        )
        return max(-1.0, min(1.0, num / den))

    precision = sum(
        max(cos(c, r) for r in reference_tokens) for c in candidate_tokens
    ) / len(candidate_tokens)
    recall = sum(
        max(cos(c, r) for c in candidate_tokens) for r in reference_tokens
    ) / len(reference_tokens)
    f1 = 0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall)
    return precision, recall, f1


def _eval_set(seed_records, size):
    pairs = []
    for i, rec in zip(range(size), itertools.cycle(seed_records)):
        pairs.append((f"{rec.request} ({i})", output_blob(rec)))
    return pairs


class TestTokenize:
    def test_punctuation_detached(self):
        assert tokenize("get /api/v1/UEs, please!") == [
            "get",
            "/",
            "api",
            "/",
            "v1",
            "/",
            "UEs",
            ",",
            "please",
            "!",
        ]

    def test_empty_text(self):
        assert tokenize("") == []


class TestSimilarityF1:
    def test_identical_lists_score_exactly_one(self):
        provider = mock_provider(seed=3, dim=32)
        tokens = ["read", "active", "subscriptions"]
        assert similarity_f1(tokens, tokens, provider) == (1.0, 1.0, 1.0)

    def test_subset_candidate_perfect_precision(self):
        provider = mock_provider(seed=3, dim=64)
        reference = ["alpha", "beta", "gamma", "delta"]
        candidate = ["alpha", "beta"]
        p, r, f1 = similarity_f1(candidate, reference, provider)
        assert p == 1.0
        assert r < 1.0
        assert 0.0 < f1 < 1.0

    def test_disjoint_lists_match_brute_force(self):
        provider = mock_provider(seed=9, dim=64)
        candidate = ["one", "two", "three"]
        reference = ["four", "five", "six", "seven"]
        got = similarity_f1(candidate, reference, provider)
        expected = brute_force_similarity(candidate, reference, provider)
        for g, e in zip(got, expected):
            assert g == pytest.approx(e, abs=1e-12)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            similarity_f1([], ["a"], mock_provider(seed=1))

    @given(
        candidate=st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=8),
        reference=st.lists(st.sampled_from("abcdefgh"), min_size=1, max_size=8),
    )
    @settings(max_examples=80, deadline=None)
    def test_precision_recall_swap_symmetry(self, candidate, reference):
        provider = mock_provider(seed=17, dim=32)
        p1, r1, _ = similarity_f1(candidate, reference, provider)
        p2, r2, _ = similarity_f1(reference, candidate, provider)
        assert p1 == pytest.approx(r2, abs=1e-12)
        assert r1 == pytest.approx(p2, abs=1e-12)


class TestJudges:
    def test_echoed_prediction_scores_one_under_both_judges(self, seed_records):
        reference = output_blob(seed_records[0])
        assert LocalJudge().score(reference, reference) == 1
        llm = LlmJudge(mock_provider(seed=1, canned={"Reference answer": "CORRECT"}))
        assert llm.score(reference, reference) == 1

    def test_wrong_api_call_scores_zero_locally(self, seed_records):
        reference = output_blob(seed_records[0])
        tampered = json.loads(reference)
        tampered["api_call"] = "/api/v1/fake/endpoint"
        assert LocalJudge().score(reference, json.dumps(tampered)) == 0

    def test_prose_prediction_scores_zero(self, seed_records):
        assert LocalJudge().score(output_blob(seed_records[0]), "no JSON here") == 0

    def test_llm_judge_incorrect_verdict(self):
        judge = LlmJudge(mock_provider(seed=1, canned={"Reference answer": "INCORRECT"}))
        assert judge.score("ref", "pred") == 0

    def test_llm_judge_unparseable_verdict_scores_zero(self, caplog):
        judge = LlmJudge(mock_provider(seed=1, canned={"Reference answer": "maybe?"}))
        with caplog.at_level("WARNING"):
            assert judge.score("ref", "pred") == 0
        assert any("unparseable" in r.message for r in caplog.records)

    def test_judge_score_wrapper_checks_binary(self, seed_records):
        class BadJudge:
            id = "bad"

            def score(self, reference, prediction):
                return 0.5

        from nefkit.errors import PipelineError

        with pytest.raises(PipelineError):
            judge_score("a", "b", BadJudge())


class TestAccuracyArithmetic:
    @pytest.mark.parametrize(
        "correct,expected",
        [(226, 98.2609), (24, 10.4348), (11, 4.7826)],
    )
    def test_counts_over_230_to_four_decimals(self, seed_records, correct, expected):
        eval_set = _eval_set(seed_records, 230)
        responder = ScriptedResponder(eval_set, range(correct))
        provider = mock_provider(seed=5, dim=16)
        artifact = run_iteration(responder, eval_set, LocalJudge(), provider, iteration=1)
        assert artifact.accuracy_0_100 == pytest.approx(expected, abs=1e-4)

    def test_accuracy_is_discrete_over_n(self, seed_records):
        eval_set = _eval_set(seed_records, 23)
        responder = ScriptedResponder(eval_set, range(7))
        provider = mock_provider(seed=5, dim=16)
        artifact = run_iteration(responder, eval_set, LocalJudge(), provider, iteration=1)
        assert artifact.accuracy_0_100 == pytest.approx(100.0 * 7 / 23)
        assert 0.0 <= artifact.accuracy_0_100 <= 100.0


class TestRunIteration:
    def test_echo_responder_is_perfect(self, seed_records):
        eval_set = _eval_set(seed_records, 12)
        artifact = run_iteration(
            EchoResponder(eval_set), eval_set, LocalJudge(), mock_provider(seed=2, dim=16), 1
        )
        assert artifact.accuracy_0_100 == 100.0
        assert artifact.mean_similarity == 1.0

    def test_constant_garbage_scores_zero_accuracy(self, seed_records):
        eval_set = _eval_set(seed_records, 6)
        artifact = run_iteration(
            ConstantResponder(), eval_set, LocalJudge(), mock_provider(seed=2, dim=16), 1
        )
        assert artifact.accuracy_0_100 == 0.0

    def test_artifact_invariants_enforced(self, seed_records):
        eval_set = _eval_set(seed_records, 9)
        artifact = run_iteration(
            EchoResponder(eval_set), eval_set, LocalJudge(), mock_provider(seed=2, dim=16), 3
        )
        total = sum(e.judge_score for e in artifact.entries)
        assert artifact.accuracy_0_100 == 100.0 * total / len(artifact.entries)
        mean_f1 = sum(e.f1 for e in artifact.entries) / len(artifact.entries)
        assert artifact.mean_similarity == pytest.approx(mean_f1)

    def test_empty_eval_set_rejected(self):
        with pytest.raises(ValueError):
            run_iteration(ConstantResponder(), [], LocalJudge(), mock_provider(seed=1), 1)


class TestRunProtocol:
    def test_artifacts_and_summary_written(self, tmp_path, seed_records):
        eval_set = _eval_set(seed_records, 5)
        summary = run_protocol(
            EchoResponder(eval_set),
            eval_set,
            LocalJudge(),
            mock_provider(seed=2, dim=16),
            iterations=2,
            artifact_dir=tmp_path,
        )
        assert (tmp_path / artifact_filename(1)).exists()
        assert (tmp_path / artifact_filename(2)).exists()
        assert (tmp_path / "eval-summary.json").exists()
        assert summary.accuracy_max == summary.accuracy_min == 100.0

    def test_artifact_schema(self, tmp_path, seed_records):
        eval_set = _eval_set(seed_records, 3)
        run_protocol(
            EchoResponder(eval_set),
            eval_set,
            LocalJudge(),
            mock_provider(seed=2, dim=16),
            iterations=1,
            artifact_dir=tmp_path,
        )
        payload = json.loads((tmp_path / artifact_filename(1)).read_text())
        assert payload["iteration"] == 1
        assert set(payload["entries"][0]) == {
            "query",
            "reference",
            "prediction",
            "judge_score",
            "similarity",
        }
        assert set(payload["entries"][0]["similarity"]) == {"p", "r", "f1"}
        assert payload["accuracy_0_100"] == 100.0
        assert payload["metadata"]["similarity_rescaled"] is False

    def test_deterministic_responder_bit_reproducible(self, tmp_path, seed_records):
        eval_set = _eval_set(seed_records, 4)
        dirs = [tmp_path / "one", tmp_path / "two"]
        for d in dirs:
            run_protocol(
                EchoResponder(eval_set),
                eval_set,
                LocalJudge(),
                mock_provider(seed=2, dim=16),
                iterations=3,
                artifact_dir=d,
            )
        for i in range(1, 4):
            a = (dirs[0] / artifact_filename(i)).read_bytes()
            b = (dirs[1] / artifact_filename(i)).read_bytes()
            assert a == b
        assert (dirs[0] / "eval-summary.json").read_bytes() == (
            dirs[1] / "eval-summary.json"
        ).read_bytes()

    def test_summary_extrema_match_brute_force_over_files(self, tmp_path, seed_records):
        eval_set = _eval_set(seed_records, 10)

        class Degrading:
            """Correct on fewer entries each iteration, to spread the metrics."""

            id = "degrading"

            def __init__(self):
                self.calls = 0
                self.eval = dict(eval_set)
                self.queries = [q for q, _ in eval_set]

            def answer(self, query):
                iteration = self.calls // len(eval_set)
                self.calls += 1
                if self.queries.index(query) < len(eval_set) - 3 * iteration:
                    return self.eval[query]
                return "garbage"

        summary = run_protocol(
            Degrading(),
            eval_set,
            LocalJudge(),
            mock_provider(seed=2, dim=16),
            iterations=3,
            artifact_dir=tmp_path,
        )
        accuracies, similarities = [], []
        for i in range(1, 4):
            payload = json.loads((tmp_path / artifact_filename(i)).read_text())
            accuracies.append(payload["accuracy_0_100"])
            similarities.append(payload["mean_similarity"])
        assert summary.accuracy_max == max(accuracies)
        assert summary.accuracy_min == min(accuracies)
        assert summary.similarity_max == max(similarities)
        assert summary.similarity_min == min(similarities)
        assert summary.accuracy_max >= summary.accuracy_min

    def test_summary_file_keyed_by_responder_and_merged(self, tmp_path, seed_records):
        eval_set = _eval_set(seed_records, 4)
        provider = mock_provider(seed=2, dim=16)
        run_protocol(
            EchoResponder(eval_set), eval_set, LocalJudge(), provider, 1, tmp_path
        )
        run_protocol(
            ConstantResponder(), eval_set, LocalJudge(), provider, 1, tmp_path
        )
        summary = json.loads((tmp_path / "eval-summary.json").read_text())
        assert set(summary) == {"echo", "constant"}
        assert summary["echo"]["accuracy_0_100"]["max"] == 100.0
        assert summary["constant"]["accuracy_0_100"]["max"] == 0.0

    def test_zero_iterations_rejected(self, seed_records):
        eval_set = _eval_set(seed_records, 2)
        with pytest.raises(ValueError):
            run_protocol(
                EchoResponder(eval_set), eval_set, LocalJudge(), mock_provider(seed=1), 0
            )
