"""Iterated dual-metric evaluation of responders.

Every responder (fine-tuned model endpoint, retrieval baseline, or test
double) is driven over the eval set for a configurable number of
iterations. Each entry is scored twice: a binary judge verdict of
whether the predicted call matches the reference, and a token-level
greedy-max cosine similarity F1. Per-iteration artifacts and a max/min
summary are persisted as JSON.
"""

from __future__ import annotations

import json
import logging
import re
import statistics
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Protocol, Sequence, Union

import httpx
import numpy as np

from nefkit.errors import GatewayError, PipelineError
from nefkit.llm import ChatRequest, Provider
from nefkit.synth import extract_json_object, OUTPUT_FIELDS

logger = logging.getLogger(__name__)

DEFAULT_ITERATIONS = 25

SIMILARITY_RESCALED = False  # raw cosine scores, no baseline rescaling


class Responder(Protocol):
    """Anything that maps a query to a response text."""

    id: str

    def answer(self, query: str) -> str: ...


class EchoResponder:
    """Returns the reference answer for every known query; the perfect oracle."""

    def __init__(self, eval_set: Sequence[tuple[str, str]]):
        self.id = "echo"
        self._answers = {query: reference for query, reference in eval_set}

    def answer(self, query: str) -> str:
        try:
            return self._answers[query]
        except KeyError:
            raise PipelineError(f"echo responder has no reference for query {query!r}") from None


class ConstantResponder:
    def __init__(self, text: str = "unrelated prose", id: str = "constant"):
        self.id = id
        self._text = text

    def answer(self, query: str) -> str:
        return self._text


class ScriptedResponder:
    """Echoes the reference for a chosen set of query indices, garbage otherwise.

    Useful for pinning accuracy arithmetic: correct on exactly k of N.
    """

    def __init__(self, eval_set: Sequence[tuple[str, str]], correct_indices: Sequence[int]):
        self.id = f"scripted-{len(correct_indices)}"
        correct = set(correct_indices)
        self._answers = {
            query: (reference if i in correct else f"wrong answer {i}")
            for i, (query, reference) in enumerate(eval_set)
        }

    def answer(self, query: str) -> str:
        return self._answers.get(query, "wrong answer")


class HttpResponder:
    """Adapter for a ``POST /answer {"query": ...} -> {"text": ...}`` endpoint."""

    def __init__(self, base_url: str, timeout: float = 60.0):
        self.id = f"http:{base_url}"
        self._client = httpx.Client(base_url=base_url.rstrip("/"), timeout=timeout)

    def answer(self, query: str) -> str:
        try:
            response = self._client.post("/answer", json={"query": query})
        except httpx.HTTPError as exc:
            raise GatewayError(f"responder endpoint unreachable: {exc}") from exc
        if response.status_code != 200:
            raise GatewayError(f"responder endpoint returned HTTP {response.status_code}")
        body = response.json()
        text = body.get("text")
        if not isinstance(text, str):
            raise GatewayError("responder reply missing 'text'")
        return text

    def close(self) -> None:
        self._client.close()


_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


def tokenize(text: str) -> list[str]:
    """Whitespace split with punctuation detached into its own tokens."""
    return _TOKEN_RE.findall(text)


def similarity_f1(
    candidate_tokens: Sequence[str],
    reference_tokens: Sequence[str],
    provider: Provider,
) -> tuple[float, float, float]:
    """Greedy max-cosine token matching aggregated as precision/recall/F1.

    Precision averages, over candidate tokens, the best cosine against
    any reference token; recall is the mirror image; F1 is their
    harmonic mean (0 when both vanish). No alignment constraint.
    """
    if not candidate_tokens or not reference_tokens:
        raise ValueError("token lists must be non-empty")
    unique = list(dict.fromkeys([*candidate_tokens, *reference_tokens]))
    by_token = {
        token: np.asarray(vec.values, dtype=np.float64)
        for token, vec in zip(unique, provider.embed(unique))
    }
    cand = np.stack([by_token[t] for t in candidate_tokens])
    ref = np.stack([by_token[t] for t in reference_tokens])
    cand = cand / np.linalg.norm(cand, axis=1, keepdims=True)
    ref = ref / np.linalg.norm(ref, axis=1, keepdims=True)
    sim = np.clip(cand @ ref.T, -1.0, 1.0)
    # Equal tokens embed to bitwise-equal vectors; pin their cosine to an
    # exact 1.0 so self-similarity is not eroded by float rounding.
    ref_positions: dict[str, list[int]] = {}
    for j, token in enumerate(reference_tokens):
        ref_positions.setdefault(token, []).append(j)
    for i, token in enumerate(candidate_tokens):
        for j in ref_positions.get(token, ()):
            sim[i, j] = 1.0
    precision = float(sim.max(axis=1).mean())
    recall = float(sim.max(axis=0).mean())
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2 * precision * recall / (precision + recall)


JUDGE_PROMPT_VERSION = 1

JUDGE_PROMPT_TEMPLATE = """You are grading an API-call prediction against its reference answer.

Reference answer:
{reference}

Predicted answer:
{prediction}

Reply with exactly one word. Reply CORRECT if the predicted API call, method, and parameters match the reference; reply INCORRECT otherwise."""


class LlmJudge:
    """Binary verdict from a chat model; unparseable verdicts count as 0."""

    def __init__(self, provider: Provider):
        self.id = f"llm-judge-v{JUDGE_PROMPT_VERSION}"
        self._provider = provider

    def score(self, reference: str, prediction: str) -> int:
        request = ChatRequest(
            user_prompt=JUDGE_PROMPT_TEMPLATE.format(reference=reference, prediction=prediction),
            temperature=0.0,
            max_output_tokens=8,
        )
        verdict = self._provider.chat(request).text.strip().upper()
        if verdict.startswith("CORRECT"):
            return 1
        if verdict.startswith("INCORRECT"):
            return 0
        logger.warning("judge verdict unparseable: %r", verdict[:80])
        return 0


class LocalJudge:
    """Deterministic offline judge: exact match of the parsed call fields.

    Both texts are parsed for an embedded JSON object; the five
    non-request fields must be equal. Anything unparseable scores 0.
    """

    id = "local-exact"

    def score(self, reference: str, prediction: str) -> int:
        ref = self._call_fields(reference)
        pred = self._call_fields(prediction)
        if ref is None:
            logger.warning("local judge could not parse the reference answer")
            return 0
        if pred is None:
            return 0
        return int(ref == pred)

    @staticmethod
    def _call_fields(text: str) -> Optional[dict]:
        obj = extract_json_object(text)
        if obj is None:
            return None
        if any(f not in obj for f in OUTPUT_FIELDS):
            return None
        return {f: obj[f] for f in OUTPUT_FIELDS}


class Judge(Protocol):
    id: str

    def score(self, reference: str, prediction: str) -> int: ...


def judge_score(reference: str, prediction: str, judge: Judge) -> int:
    verdict = judge.score(reference, prediction)
    if verdict not in (0, 1):
        raise PipelineError(f"judge returned non-binary verdict {verdict!r}")
    return verdict


@dataclass(frozen=True)
class EvalEntry:
    query: str
    reference: str
    prediction: str
    judge_score: int
    precision: float
    recall: float
    f1: float

    def to_mapping(self) -> dict:
        return {
            "query": self.query,
            "reference": self.reference,
            "prediction": self.prediction,
            "judge_score": self.judge_score,
            "similarity": {"p": self.precision, "r": self.recall, "f1": self.f1},
        }


@dataclass(frozen=True)
class EvalArtifact:
    iteration: int
    entries: tuple[EvalEntry, ...]
    accuracy_0_100: float
    mean_similarity: float

    @classmethod
    def from_entries(cls, iteration: int, entries: Sequence[EvalEntry]) -> "EvalArtifact":
        if not entries:
            raise ValueError("an artifact needs at least one entry")
        accuracy = 100.0 * sum(e.judge_score for e in entries) / len(entries)
        mean_sim = statistics.fmean(e.f1 for e in entries)
        return cls(
            iteration=iteration,
            entries=tuple(entries),
            accuracy_0_100=accuracy,
            mean_similarity=mean_sim,
        )

    def to_mapping(self) -> dict:
        return {
            "iteration": self.iteration,
            "entries": [e.to_mapping() for e in self.entries],
            "accuracy_0_100": self.accuracy_0_100,
            "mean_similarity": self.mean_similarity,
            "metadata": {"similarity_rescaled": SIMILARITY_RESCALED},
        }


@dataclass(frozen=True)
class EvalSummary:
    responder_id: str
    iterations: int
    accuracy_max: float
    accuracy_min: float
    similarity_max: float
    similarity_min: float

    def to_mapping(self) -> dict:
        return {
            "iterations": self.iterations,
            "accuracy_0_100": {"max": self.accuracy_max, "min": self.accuracy_min},
            "mean_similarity": {"max": self.similarity_max, "min": self.similarity_min},
        }


def run_iteration(
    responder: Responder,
    eval_set: Sequence[tuple[str, str]],
    judge: Judge,
    provider: Provider,
    iteration: int,
) -> EvalArtifact:
    """Score the responder once over the whole eval set; pure compute."""
    if not eval_set:
        raise ValueError("eval_set must be non-empty")
    entries: list[EvalEntry] = []
    for query, reference in eval_set:
        prediction = responder.answer(query)
        verdict = judge_score(reference, prediction, judge)
        cand = tokenize(prediction)
        ref = tokenize(reference)
        if cand and ref:
            p, r, f1 = similarity_f1(cand, ref, provider)
            f1 = max(0.0, f1)  # artifact entries keep similarity within [0, 1]
        else:
            logger.warning("empty token list for query %r; similarity scored 0", query[:60])
            p, r, f1 = 0.0, 0.0, 0.0
        entries.append(
            EvalEntry(
                query=query,
                reference=reference,
                prediction=prediction,
                judge_score=verdict,
                precision=p,
                recall=r,
                f1=f1,
            )
        )
    return EvalArtifact.from_entries(iteration, entries)


def artifact_filename(iteration: int) -> str:
    return f"eval-iter-{iteration:03d}.json"


SUMMARY_FILENAME = "eval-summary.json"


def run_protocol(
    responder: Responder,
    eval_set: Sequence[tuple[str, str]],
    judge: Judge,
    provider: Provider,
    iterations: int = DEFAULT_ITERATIONS,
    artifact_dir: Union[str, Path, None] = None,
) -> EvalSummary:
    """Run the full iterated protocol and persist artifacts plus the summary.

    Iterations run sequentially and each artifact is written before the
    next starts, so a failure retains everything completed so far.
    """
    if iterations < 1:
        raise ValueError("iterations must be >= 1")
    out_dir: Optional[Path] = None
    if artifact_dir is not None:
        out_dir = Path(artifact_dir)
        out_dir.mkdir(parents=True, exist_ok=True)

    artifacts: list[EvalArtifact] = []
    for i in range(1, iterations + 1):
        artifact = run_iteration(responder, eval_set, judge, provider, iteration=i)
        if out_dir is not None:
            _write_json(out_dir / artifact_filename(i), artifact.to_mapping())
        artifacts.append(artifact)

    summary = EvalSummary(
        responder_id=responder.id,
        iterations=iterations,
        accuracy_max=max(a.accuracy_0_100 for a in artifacts),
        accuracy_min=min(a.accuracy_0_100 for a in artifacts),
        similarity_max=max(a.mean_similarity for a in artifacts),
        similarity_min=min(a.mean_similarity for a in artifacts),
    )
    if out_dir is not None:
        summary_path = out_dir / SUMMARY_FILENAME
        merged: dict = {}
        if summary_path.exists():
            try:
                merged = json.loads(summary_path.read_text(encoding="utf-8"))
            except (json.JSONDecodeError, OSError):
                merged = {}
        merged[responder.id] = summary.to_mapping()
        _write_json(summary_path, merged)
    return summary


def _write_json(path: Path, payload: Mapping) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    tmp.replace(path)
