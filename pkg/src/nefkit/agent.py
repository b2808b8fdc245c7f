"""Deterministic planner and executor for validated corpus records.

The agent turns one record into a concrete HTTP call chain (an OAuth2
password login first when the endpoint needs a bearer token), runs it
against a base URL, and reports per-step outcomes. No model sits in the
execution loop: nondeterminism belongs to record generation, not to the
executor, which keeps failures attributable.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Any, Mapping, Optional, Sequence
from urllib.parse import quote

import httpx

from nefkit.errors import PlanError, ServerUnreachableError
from nefkit.specs import ApiSpec, lookup_endpoint, security_token_path
from nefkit.synth import SyntheticRecord, validate_record

BODY_EXCERPT_LIMIT = 200


@dataclass(frozen=True)
class Credentials:
    username: str
    password: str
    grant_type: str = "password"

    def as_form(self) -> dict[str, str]:
        return {
            "grant_type": self.grant_type,
            "username": self.username,
            "password": self.password,
        }


@dataclass(frozen=True)
class PlanStep:
    method: str
    path: str
    query: Mapping[str, str] = field(default_factory=dict)
    body: Optional[Mapping[str, Any]] = None
    form: Optional[Mapping[str, str]] = None
    headers: Mapping[str, str] = field(default_factory=dict)
    needs_auth: bool = False
    is_auth_step: bool = False


@dataclass(frozen=True)
class ExecutionPlan:
    steps: tuple[PlanStep, ...]
    source_record: SyntheticRecord


@dataclass(frozen=True)
class StepResult:
    method: str
    path: str
    status_code: int
    latency_s: float
    body_excerpt: str


@dataclass
class ExecutionReport:
    steps: list[StepResult]
    verdict: str  # success | failure
    failure_reason: Optional[str] = None

    @property
    def success(self) -> bool:
        return self.verdict == "success"

    def to_mapping(self) -> dict[str, Any]:
        return {
            "verdict": self.verdict,
            "failure_reason": self.failure_reason,
            "steps": [
                {
                    "method": s.method,
                    "path": s.path,
                    "status_code": s.status_code,
                    "latency_s": s.latency_s,
                    "body_excerpt": s.body_excerpt,
                }
                for s in self.steps
            ],
        }


def plan(rec: SyntheticRecord, spec: ApiSpec, credentials: Credentials) -> ExecutionPlan:
    """Build the call chain for one record.

    Path placeholders are substituted from the record's parameters; the
    rest are routed by declared location (query, form or JSON body,
    header). When the record targets the token endpoint itself, the
    supplied credentials replace the record's placeholder values so the
    call is actually executable.
    """
    endpoint = lookup_endpoint(spec, rec.api_call, rec.method)
    if endpoint is not None:
        # Placeholder gaps get the specific error before full validation.
        for placeholder in endpoint.path_placeholders():
            if placeholder not in rec.parameters:
                raise PlanError(f"no value for path placeholder {placeholder!r}")
    report = validate_record(spec, rec)
    if not report.valid:
        raise PlanError(
            "record fails validation: " + "; ".join(m for _, m in report.violations)
        )
    if endpoint is None:  # unreachable after validation; defensive
        raise PlanError(f"no endpoint for {rec.method.upper()} {rec.api_call}")

    concrete = endpoint.path
    for placeholder in endpoint.path_placeholders():
        concrete = concrete.replace(
            "{" + placeholder + "}", quote(str(rec.parameters[placeholder]), safe="")
        )

    token_path = security_token_path(spec)
    is_token_endpoint = token_path is not None and endpoint.path == token_path

    query: dict[str, str] = {}
    body: dict[str, Any] = {}
    headers: dict[str, str] = {}
    path_names = set(endpoint.path_placeholders())
    for name, value in rec.parameters.items():
        if name in path_names:
            continue
        param = endpoint.parameter(name)
        location = param.location if param is not None else "query"
        if location == "query":
            query[name] = str(value)
        elif location == "header":
            headers[name] = str(value)
        else:
            body[name] = value

    uses_form = endpoint.body_media_type == "application/x-www-form-urlencoded"
    if is_token_endpoint:
        body.update(credentials.as_form())
        uses_form = True

    steps: list[PlanStep] = []
    if endpoint.requires_auth:
        if token_path is None:
            raise PlanError(
                f"{endpoint.method.upper()} {endpoint.path} requires auth "
                "but the spec declares no password-flow token endpoint"
            )
        steps.append(
            PlanStep(
                method="post",
                path=token_path,
                form=credentials.as_form(),
                is_auth_step=True,
            )
        )
    steps.append(
        PlanStep(
            method=endpoint.method,
            path=concrete,
            query=query,
            body=None if (uses_form or not body) else body,
            form=({str(k): str(v) for k, v in body.items()} if uses_form and body else None),
            headers=headers,
            needs_auth=endpoint.requires_auth,
        )
    )
    return ExecutionPlan(steps=tuple(steps), source_record=rec)


class AgentSession:
    """Shared state for executing many plans: one login, one cached token."""

    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.token: Optional[str] = None
        self.client = httpx.Client(base_url=self.base_url, timeout=timeout)

    def close(self) -> None:
        self.client.close()

    def __enter__(self) -> "AgentSession":
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.close()


def execute(
    plan_: ExecutionPlan,
    base_url: str,
    session: Optional[AgentSession] = None,
    timeout: float = 10.0,
) -> ExecutionReport:
    """Run the plan's steps in order, stopping at the first failure.

    The token from a successful auth step is carried into the
    Authorization header of later steps. With a session, an already
    cached token lets the auth step be skipped entirely. Transport-level
    unreachability raises; HTTP-level failure is a report, not an error.
    """
    own_client = session is None
    client = session.client if session is not None else httpx.Client(
        base_url=base_url.rstrip("/"), timeout=timeout
    )
    token = session.token if session is not None else None
    results: list[StepResult] = []
    try:
        for step in plan_.steps:
            if step.is_auth_step and token is not None:
                continue
            headers = dict(step.headers)
            if step.needs_auth and token is not None:
                headers["Authorization"] = f"Bearer {token}"
            started = time.perf_counter()
            try:
                response = client.request(
                    step.method.upper(),
                    step.path,
                    params=dict(step.query) or None,
                    data=dict(step.form) if step.form else None,
                    json=dict(step.body) if step.body else None,
                    headers=headers or None,
                )
            except httpx.HTTPError as exc:
                raise ServerUnreachableError(
                    f"{step.method.upper()} {step.path} against {base_url}: {exc}"
                ) from exc
            latency = time.perf_counter() - started
            results.append(
                StepResult(
                    method=step.method,
                    path=step.path,
                    status_code=response.status_code,
                    latency_s=latency,
                    body_excerpt=response.text[:BODY_EXCERPT_LIMIT],
                )
            )
            ok = 200 <= response.status_code < 300
            if not ok:
                return ExecutionReport(
                    steps=results,
                    verdict="failure",
                    failure_reason=(
                        f"step {len(results)} {step.method.upper()} {step.path} "
                        f"returned HTTP {response.status_code}"
                    ),
                )
            if step.is_auth_step:
                token = _token_from_body(response.text)
                if token is None:
                    return ExecutionReport(
                        steps=results,
                        verdict="failure",
                        failure_reason="auth step returned no access_token",
                    )
                if session is not None:
                    session.token = token
        if not results:
            return ExecutionReport(steps=results, verdict="failure", failure_reason="no steps executed")
        return ExecutionReport(steps=results, verdict="success")
    finally:
        if own_client:
            client.close()


def _token_from_body(text: str) -> Optional[str]:
    try:
        data = json.loads(text)
    except json.JSONDecodeError:
        return None
    token = data.get("access_token") if isinstance(data, dict) else None
    return token if isinstance(token, str) and token else None


def run_records(
    recs: Sequence[SyntheticRecord],
    spec: ApiSpec,
    base_url: str,
    credentials: Credentials,
    timeout: float = 10.0,
) -> list[tuple[SyntheticRecord, ExecutionReport]]:
    """Plan and execute every record with one shared login session.

    Records that cannot be planned yield failure reports instead of
    aborting the batch.
    """
    results: list[tuple[SyntheticRecord, ExecutionReport]] = []
    with AgentSession(base_url, timeout=timeout) as session:
        for rec in recs:
            try:
                p = plan(rec, spec, credentials)
            except PlanError as exc:
                results.append(
                    (rec, ExecutionReport(steps=[], verdict="failure", failure_reason=str(exc)))
                )
                continue
            results.append((rec, execute(p, base_url, session=session, timeout=timeout)))
    return results


def pass_rate(results: Sequence[tuple[SyntheticRecord, ExecutionReport]]) -> float:
    if not results:
        return 0.0
    return sum(1 for _, report in results if report.success) / len(results)
