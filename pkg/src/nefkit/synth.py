"""Seed-record generation, validation, scaling, splitting, and export.

A corpus record pairs one natural-language request with the structured
API call that answers it (path, description, method, operation id, and
example parameter values). Records come back from a chat model as JSON,
get validated mechanically against the flattened spec, are scaled into
many request phrasings, and finally land in Instruct/Output CSV files
for the trainer.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import random
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, IO, Iterable, Mapping, Optional, Sequence, Union

from nefkit.errors import CsvFormatError, GatewayError, PipelineError, ScalingAborted
from nefkit.llm import (
    ChatRequest,
    Provider,
    RESPONSE_STRICT_STRUCTURED,
)
from nefkit.specs import ApiSpec, EndpointDef, match_path, spec_to_yaml

logger = logging.getLogger(__name__)

RECORD_FIELDS = ("request", "api_call", "description", "method", "operation", "parameters")
OUTPUT_FIELDS = ("api_call", "description", "method", "operation", "parameters")

CSV_HEADER = ("instruct", "output")

VIOLATION_UNKNOWN_PATH = "unknown-path"
VIOLATION_METHOD_MISMATCH = "method-mismatch"
VIOLATION_OPERATION_MISMATCH = "operation-mismatch"
VIOLATION_UNKNOWN_PARAMETER = "unknown-parameter"
VIOLATION_MISSING_REQUIRED = "missing-required-parameter"
VIOLATION_MALFORMED = "malformed-record"


@dataclass(frozen=True)
class SyntheticRecord:
    """One query-to-call pair with the six corpus fields."""

    request: str
    api_call: str
    description: str
    method: str
    operation: str
    parameters: Mapping[str, str]

    def __post_init__(self) -> None:
        if not self.request:
            raise ValueError("request must be non-empty")
        if not self.api_call:
            raise ValueError("api_call must be non-empty")
        if self.method != self.method.lower():
            raise ValueError(f"method must be lowercase, got {self.method!r}")

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any]) -> "SyntheticRecord":
        missing = [f for f in RECORD_FIELDS if f not in data]
        if missing:
            raise ValueError(f"record missing field(s): {', '.join(missing)}")
        raw_params = data["parameters"]
        if not isinstance(raw_params, Mapping):
            raise ValueError("parameters must be an object")
        return cls(
            request=str(data["request"]),
            api_call=str(data["api_call"]),
            description=str(data["description"]),
            method=str(data["method"]).lower(),
            operation=str(data["operation"]),
            parameters={str(k): str(v) for k, v in raw_params.items()},
        )

    def to_mapping(self) -> dict[str, Any]:
        return {
            "request": self.request,
            "api_call": self.api_call,
            "description": self.description,
            "method": self.method,
            "operation": self.operation,
            "parameters": dict(self.parameters),
        }

    def with_request(self, request: str) -> "SyntheticRecord":
        return SyntheticRecord(
            request=request,
            api_call=self.api_call,
            description=self.description,
            method=self.method,
            operation=self.operation,
            parameters=dict(self.parameters),
        )


@dataclass
class ValidationReport:
    record_index: int
    verdict: str
    violations: list[tuple[str, str]] = field(default_factory=list)

    @property
    def valid(self) -> bool:
        return self.verdict == "valid"

    def to_mapping(self) -> dict[str, Any]:
        return {
            "record_index": self.record_index,
            "verdict": self.verdict,
            "violations": [{"code": c, "message": m} for c, m in self.violations],
        }


@dataclass
class DatasetSplit:
    train: list[SyntheticRecord]
    eval: list[SyntheticRecord]
    ratio: float
    shuffle_seed: int


@dataclass(frozen=True)
class InstructOutputPair:
    instruct: str
    output: str

    def parsed_output(self) -> dict[str, Any]:
        return parse_output_blob(self.output)


SEED_PROMPT_SYSTEM = (
    "You are an expert assistant for 5G Network Exposure Function (NEF) REST APIs."
)

_SEED_PROMPT_TEMPLATE = """Generate synthetic data in JSON format from the API specification given below.

Produce an array of JSON objects, one for each API endpoint defined in the specification. Each object must contain exactly these six fields:
  "request": a natural-language user query that the endpoint answers,
  "api_call": the endpoint path,
  "description": what the endpoint does,
  "method": the lowercase HTTP method,
  "operation": the operation id,
  "parameters": an object mapping each parameter name to an example value.

Return solely real data taken from the specification. Do not invent endpoints, methods, operations, or parameters that the specification does not define.

API specification:
{spec_text}"""

SCALING_PROMPT_TEMPLATE = """Understand the given JSON object and generate the request parameter in {n} different ways. All of them must be unique and not redundant.
    {json_object}

You may also use the document provided as context to understand more. Feel free to rephrase the request parameter.
{context}

The format of output must be an array of {n} values in the following format:
[request1, request2, ..., request{n}]
"""

GENERATION_TEMPERATURE = 0.7


def build_seed_prompt(spec: ApiSpec, temperature: float = GENERATION_TEMPERATURE) -> ChatRequest:
    """Prompt asking for one six-field record per endpoint of the spec."""
    if not spec.endpoints:
        raise PipelineError("cannot build a seed prompt for a spec with no endpoints")
    return ChatRequest(
        user_prompt=_SEED_PROMPT_TEMPLATE.format(spec_text=spec_to_yaml(spec)),
        system_prompt=SEED_PROMPT_SYSTEM,
        temperature=temperature,
        response_format=RESPONSE_STRICT_STRUCTURED,
    )


def build_scaling_prompt(
    rec: SyntheticRecord,
    context: str,
    n: int,
    temperature: float = GENERATION_TEMPERATURE,
) -> ChatRequest:
    """Prompt asking for ``n`` unique rephrasings of the record's request."""
    if n < 1:
        raise ValueError("n must be >= 1")
    prompt = SCALING_PROMPT_TEMPLATE.format(
        n=n,
        json_object=json.dumps(rec.to_mapping(), indent=2, ensure_ascii=False),
        context=context,
    )
    return ChatRequest(
        user_prompt=prompt,
        system_prompt=SEED_PROMPT_SYSTEM,
        temperature=temperature,
        response_format=RESPONSE_STRICT_STRUCTURED,
    )


_FENCE_RE = re.compile(r"^```[a-zA-Z0-9_-]*\s*$", re.MULTILINE)


def _strip_code_fences(text: str) -> str:
    return _FENCE_RE.sub("", text)


def _scan_balanced(text: str, start: int, open_ch: str, close_ch: str) -> Optional[int]:
    """Index one past the bracket closing ``text[start]``, string-aware."""
    depth = 0
    in_string = False
    escaped = False
    for i in range(start, len(text)):
        ch = text[i]
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == open_ch:
            depth += 1
        elif ch == close_ch:
            depth -= 1
            if depth == 0:
                return i + 1
    return None


def extract_json_array(text: str) -> Optional[list[Any]]:
    """Best-effort: the outermost JSON array embedded in a model reply.

    Strips code fences, then tries the first balanced ``[...]`` block;
    falls back to wrapping bare comma-separated objects, then to a
    single object.
    """
    cleaned = _strip_code_fences(text).strip()
    start = cleaned.find("[")
    while start != -1:
        end = _scan_balanced(cleaned, start, "[", "]")
        if end is not None:
            try:
                value = json.loads(cleaned[start:end])
                if isinstance(value, list):
                    return value
            except json.JSONDecodeError:
                pass
        start = cleaned.find("[", start + 1)
    obj_start = cleaned.find("{")
    if obj_start != -1:
        # A bare `{...}, {...}` sequence with no array brackets.
        try:
            value = json.loads(f"[{cleaned[obj_start:].rstrip().rstrip(',')}]")
            if isinstance(value, list):
                return value
        except json.JSONDecodeError:
            pass
        end = _scan_balanced(cleaned, obj_start, "{", "}")
        if end is not None:
            try:
                return [json.loads(cleaned[obj_start:end])]
            except json.JSONDecodeError:
                pass
    return None


def extract_json_object(text: str) -> Optional[dict[str, Any]]:
    """Best-effort: the first JSON object embedded in a model reply."""
    cleaned = _strip_code_fences(text).strip()
    start = cleaned.find("{")
    while start != -1:
        end = _scan_balanced(cleaned, start, "{", "}")
        if end is not None:
            try:
                value = json.loads(cleaned[start:end])
                if isinstance(value, dict):
                    return value
            except json.JSONDecodeError:
                pass
        start = cleaned.find("{", start + 1)
    return None


def parse_seed_response(text: str) -> tuple[list[SyntheticRecord], list[Any]]:
    """Parse a model reply into records plus a side list of malformed items.

    Objects missing any of the six fields (or non-object array entries)
    are returned in the malformed list rather than silently dropped.
    Raises :class:`PipelineError` when no array can be located at all.
    """
    items = extract_json_array(text)
    if items is None:
        raise PipelineError("no parseable JSON array found in model reply")
    records: list[SyntheticRecord] = []
    malformed: list[Any] = []
    for item in items:
        if not isinstance(item, Mapping):
            malformed.append(item)
            continue
        try:
            records.append(SyntheticRecord.from_mapping(item))
        except ValueError:
            malformed.append(dict(item))
    return records, malformed


def _body_field_names(endpoint: EndpointDef) -> set[str]:
    return {p.name for p in endpoint.parameters if p.location == "body-field"}


def validate_record(spec: ApiSpec, rec: SyntheticRecord, record_index: int = 0) -> ValidationReport:
    """Check one record against the flattened spec.

    Checks run in a fixed order: path resolution (template-aware),
    method, operation id, undeclared parameters, missing required
    parameters. Violations are data, not exceptions.
    """
    violations: list[tuple[str, str]] = []

    candidates = match_path(spec, rec.api_call)
    if not candidates:
        violations.append(
            (VIOLATION_UNKNOWN_PATH, f"no endpoint matches path {rec.api_call!r}")
        )
        return ValidationReport(record_index, "invalid", violations)

    endpoint = next((ep for ep in candidates if ep.method == rec.method), None)
    if endpoint is None:
        endpoint = candidates[0]
        declared = sorted({ep.method for ep in candidates})
        violations.append(
            (
                VIOLATION_METHOD_MISMATCH,
                f"path {rec.api_call!r} supports {declared}, record says {rec.method!r}",
            )
        )

    if rec.operation != endpoint.operation_id:
        violations.append(
            (
                VIOLATION_OPERATION_MISMATCH,
                f"expected operation {endpoint.operation_id!r}, record says {rec.operation!r}",
            )
        )

    declared_names = {p.name for p in endpoint.parameters}
    for name in rec.parameters:
        if name not in declared_names:
            violations.append(
                (
                    VIOLATION_UNKNOWN_PARAMETER,
                    f"parameter {name!r} is not declared on {endpoint.method.upper()} {endpoint.path}",
                )
            )
    for name in endpoint.required_parameter_names():
        if name not in rec.parameters:
            violations.append(
                (
                    VIOLATION_MISSING_REQUIRED,
                    f"required parameter {name!r} is missing",
                )
            )

    verdict = "valid" if not violations else "invalid"
    return ValidationReport(record_index, verdict, violations)


def refine(
    spec: ApiSpec, recs: Sequence[SyntheticRecord]
) -> tuple[list[SyntheticRecord], list[ValidationReport]]:
    """Keep spec-faithful records, reporting every input.

    Valid records are kept in input order and then deduplicated by
    (api_call, method), first occurrence winning.
    """
    kept: list[SyntheticRecord] = []
    reports: list[ValidationReport] = []
    seen: set[tuple[str, str]] = set()
    for i, rec in enumerate(recs):
        report = validate_record(spec, rec, record_index=i)
        reports.append(report)
        if not report.valid:
            continue
        key = (rec.api_call, rec.method)
        if key in seen:
            continue
        seen.add(key)
        kept.append(rec)
    return kept, reports


def normalize_request(text: str) -> str:
    """Equality key for request dedup: trim, collapse whitespace, casefold."""
    return " ".join(text.split()).casefold()


def _variations_from_reply(text: str) -> list[str]:
    items = extract_json_array(text)
    if items is None:
        return []
    out: list[str] = []
    for item in items:
        if isinstance(item, str) and item.strip():
            out.append(item.strip())
    return out


def scale_dataset(
    provider: Provider,
    spec: ApiSpec,
    seeds: Sequence[SyntheticRecord],
    n: int,
    include_seeds: bool = False,
    context: str = "",
) -> list[SyntheticRecord]:
    """Expand each seed into up to ``n`` request variations.

    Every variation copies its seed's five non-request fields verbatim.
    The combined output is deduplicated on the normalized request text;
    seeds are appended at the end when ``include_seeds``. A provider
    failure aborts with the number of completed records; a seed that
    yields zero usable variations is only a warning.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    for i, seed in enumerate(seeds):
        report = validate_record(spec, seed, record_index=i)
        if not report.valid:
            raise PipelineError(
                f"seed {i} is not valid against the spec: "
                + "; ".join(m for _, m in report.violations)
            )

    prompts = [build_scaling_prompt(seed, context, n) for seed in seeds]
    replies: list[str] = []
    completed_records = 0
    max_workers = max(1, min(4, len(prompts)))
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        futures = [pool.submit(provider.chat, p) for p in prompts]
        for i, future in enumerate(futures):
            try:
                replies.append(future.result().text)
            except GatewayError as exc:
                for later in futures[i + 1:]:
                    later.cancel()
                raise ScalingAborted(i, completed_records, exc) from exc
            completed_records += 1

    out: list[SyntheticRecord] = []
    seen: set[str] = set()

    def add(record: SyntheticRecord) -> None:
        key = normalize_request(record.request)
        if key in seen:
            return
        seen.add(key)
        out.append(record)

    for i, (seed, reply) in enumerate(zip(seeds, replies)):
        variations = _variations_from_reply(reply)[:n]
        if not variations:
            logger.warning("seed %d produced no usable variations", i)
            continue
        for text in variations:
            add(seed.with_request(text))
    if include_seeds:
        for seed in seeds:
            add(seed)

    for rec in out:
        if not validate_record(spec, rec).valid:  # copied fields make this unreachable
            raise PipelineError(f"scaled record unexpectedly invalid: {rec.request!r}")
    return out


def split_dataset(
    recs: Sequence[SyntheticRecord], ratio: float, shuffle_seed: int
) -> DatasetSplit:
    """Seeded shuffle, then the first floor(ratio * N) records go to train."""
    if not 0 < ratio < 1:
        raise ValueError("ratio must be inside (0, 1)")
    if not recs:
        raise ValueError("cannot split an empty record list")
    indices = list(range(len(recs)))
    random.Random(shuffle_seed).shuffle(indices)
    cut = math.floor(ratio * len(recs))
    return DatasetSplit(
        train=[recs[i] for i in indices[:cut]],
        eval=[recs[i] for i in indices[cut:]],
        ratio=ratio,
        shuffle_seed=shuffle_seed,
    )


def output_blob(rec: SyntheticRecord) -> str:
    """Canonical single-line serialization of the five non-request fields."""
    payload = {name: rec.to_mapping()[name] for name in OUTPUT_FIELDS}
    return json.dumps(payload, ensure_ascii=False)


def parse_output_blob(text: str) -> dict[str, Any]:
    """Inverse of :func:`output_blob`; raises ValueError when unparseable."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"output blob is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ValueError("output blob must be a JSON object")
    missing = [f for f in OUTPUT_FIELDS if f not in data]
    if missing:
        raise ValueError(f"output blob missing field(s): {', '.join(missing)}")
    return data


SinkType = Union[str, Path, IO[bytes]]


def _open_sink(sink: SinkType) -> tuple[IO[bytes], bool]:
    if isinstance(sink, (str, Path)):
        return open(sink, "wb"), True
    return sink, False


def _open_source(source: SinkType) -> tuple[IO[bytes], bool]:
    if isinstance(source, (str, Path)):
        return open(source, "rb"), True
    return source, False


def export_instruct_csv(recs: Sequence[SyntheticRecord], sink: SinkType) -> int:
    """Write instruct/output rows (RFC-4180 quoting); returns the row count."""
    stream, owned = _open_sink(sink)
    try:
        wrapper = io.TextIOWrapper(stream, encoding="utf-8", newline="")
        writer = csv.writer(wrapper)
        writer.writerow(CSV_HEADER)
        for rec in recs:
            writer.writerow([rec.request, output_blob(rec)])
        wrapper.flush()
        wrapper.detach()
    finally:
        if owned:
            stream.close()
    return len(recs)


def import_instruct_csv(source: SinkType) -> list[InstructOutputPair]:
    """Read instruct/output rows back; inverse of export on its own output."""
    stream, owned = _open_source(source)
    try:
        wrapper = io.TextIOWrapper(stream, encoding="utf-8", newline="")
        reader = csv.reader(wrapper)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvFormatError("file is empty, expected an instruct,output header") from None
        if tuple(header) != CSV_HEADER:
            raise CsvFormatError(f"unexpected header {header!r}, expected {list(CSV_HEADER)}")
        pairs: list[InstructOutputPair] = []
        for row in reader:
            if not row:
                continue
            if len(row) != 2:
                raise CsvFormatError(
                    f"expected 2 fields, found {len(row)}", line=reader.line_num
                )
            pairs.append(InstructOutputPair(instruct=row[0], output=row[1]))
        wrapper.detach()
        return pairs
    finally:
        if owned:
            stream.close()


def write_records_jsonl(recs: Iterable[SyntheticRecord], sink: SinkType) -> int:
    stream, owned = _open_sink(sink)
    count = 0
    try:
        for rec in recs:
            line = json.dumps(rec.to_mapping(), ensure_ascii=False) + "\n"
            stream.write(line.encode("utf-8"))
            count += 1
    finally:
        if owned:
            stream.close()
    return count


def read_records_jsonl(source: SinkType) -> list[SyntheticRecord]:
    stream, owned = _open_source(source)
    try:
        records = []
        for lineno, raw in enumerate(stream.read().decode("utf-8").splitlines(), start=1):
            if not raw.strip():
                continue
            try:
                records.append(SyntheticRecord.from_mapping(json.loads(raw)))
            except (json.JSONDecodeError, ValueError) as exc:
                raise PipelineError(f"bad record on line {lineno}: {exc}") from exc
        return records
    finally:
        if owned:
            stream.close()
