import socket

import pytest

from nefkit.agent import (
    AgentSession,
    Credentials,
    ExecutionPlan,
    PlanStep,
    execute,
    pass_rate,
    plan,
    run_records,
)
from nefkit.errors import PlanError, ServerUnreachableError
from nefkit.mockserver import serve
from nefkit.synth import SyntheticRecord

CREDS = Credentials(username="admin", password="admin")


@pytest.fixture()
def server(nef_spec):
    handle = serve(nef_spec)
    yield handle
    handle.stop()


def _subscriptions_record(seed_records, scs="SCS1"):
    base = seed_records[1]
    return SyntheticRecord(
        request=base.request,
        api_call=base.api_call,
        description=base.description,
        method=base.method,
        operation=base.operation,
        parameters={"scsAsId": scs},
    )


class TestPlan:
    def test_bearer_endpoint_gets_login_prefix(self, nef_spec, seed_records):
        built = plan(_subscriptions_record(seed_records), nef_spec, CREDS)
        assert len(built.steps) == 2
        login, target = built.steps
        assert login.is_auth_step and login.method == "post"
        assert login.path == "/api/v1/login/access-token"
        assert login.form["username"] == "admin"
        assert target.method == "get"
        assert target.path == "/api/v1/3gpp-as-session-with-qos/v1/SCS1/subscriptions"
        assert target.needs_auth

    def test_login_record_is_single_step(self, nef_spec, seed_records):
        built = plan(seed_records[0], nef_spec, CREDS)
        assert len(built.steps) == 1
        (step,) = built.steps
        assert not step.needs_auth
        assert step.form["username"] == "admin"  # credentials replace placeholders
        assert step.form["password"] == "admin"

    def test_missing_placeholder_named(self, nef_spec, seed_records):
        base = seed_records[1]
        rec = SyntheticRecord(
            request=base.request,
            api_call=base.api_call,
            description=base.description,
            method=base.method,
            operation=base.operation,
            parameters={},
        )
        with pytest.raises(PlanError, match="scsAsId"):
            plan(rec, nef_spec, CREDS)

    def test_invalid_record_rejected(self, nef_spec):
        rec = SyntheticRecord(
            request="r",
            api_call="/api/v1/fake/endpoint",
            description="d",
            method="get",
            operation="op",
            parameters={},
        )
        with pytest.raises(PlanError, match="validation"):
            plan(rec, nef_spec, CREDS)

    def test_query_parameters_routed(self, nef_spec, seed_records):
        built = plan(seed_records[3], nef_spec, CREDS)  # UEs with skip/limit
        target = built.steps[-1]
        assert target.query == {"skip": "0", "limit": "100"}
        assert target.body is None

    def test_json_body_fields_routed(self, nef_spec, seed_records):
        built = plan(seed_records[5], nef_spec, CREDS)  # monitoring create
        target = built.steps[-1]
        assert target.body is not None
        assert target.body["externalId"] == "123456789@domain.com"
        assert "scsAsId" not in target.body
        assert target.path.endswith("/SCS1/subscriptions")


class TestExecute:
    def test_subscriptions_chain_succeeds(self, nef_spec, seed_records, server):
        built = plan(_subscriptions_record(seed_records), nef_spec, CREDS)
        report = execute(built, server.base_url)
        assert report.success
        assert [s.status_code for s in report.steps] == [200, 200]

    def test_fabricated_path_fails_with_404(self, nef_spec, seed_records, server):
        built = ExecutionPlan(
            steps=(PlanStep(method="get", path="/api/v1/fake/endpoint"),),
            source_record=seed_records[0],
        )
        report = execute(built, server.base_url)
        assert not report.success
        assert report.steps[-1].status_code == 404
        assert "404" in report.failure_reason

    def test_wrong_credentials_fail_at_login(self, nef_spec, seed_records, server):
        bad = Credentials(username="admin", password="wrong")
        built = plan(_subscriptions_record(seed_records), nef_spec, bad)
        report = execute(built, server.base_url)
        assert not report.success
        assert len(report.steps) == 1
        assert report.steps[0].status_code == 401

    def test_replay_yields_same_statuses(self, nef_spec, seed_records, server):
        built = plan(_subscriptions_record(seed_records), nef_spec, CREDS)
        first = [s.status_code for s in execute(built, server.base_url).steps]
        second = [s.status_code for s in execute(built, server.base_url).steps]
        assert first == second

    def test_unreachable_server_raises(self, nef_spec, seed_records):
        probe = socket.socket()
        probe.bind(("127.0.0.1", 0))
        port = probe.getsockname()[1]
        probe.close()
        built = plan(seed_records[0], nef_spec, CREDS)
        with pytest.raises(ServerUnreachableError):
            execute(built, f"http://127.0.0.1:{port}")


class TestBatch:
    def test_all_fixture_seeds_succeed(self, nef_spec, seed_records, server):
        results = run_records(seed_records, nef_spec, server.base_url, CREDS)
        assert len(results) == 7
        for rec, report in results:
            assert report.success, (rec.api_call, report.failure_reason)
        assert pass_rate(results) == 1.0

    def test_shared_session_logs_in_once(self, nef_spec, seed_records, server):
        run_records(seed_records, nef_spec, server.base_url, CREDS)
        log = server.request_log()
        assert len(log) == len(seed_records) + 1  # one session login plus one call each
        logins = [e for e in log if e[1] == "/api/v1/login/access-token"]
        # the login seed record accounts for the second token call
        assert len(logins) == 2

    def test_unplannable_record_reported_not_raised(self, nef_spec, seed_records, server):
        bad = SyntheticRecord(
            request="r",
            api_call="/api/v1/fake/endpoint",
            description="d",
            method="get",
            operation="op",
            parameters={},
        )
        results = run_records([bad, seed_records[0]], nef_spec, server.base_url, CREDS)
        assert not results[0][1].success
        assert results[1][1].success
        assert pass_rate(results) == 0.5

    def test_session_reuses_cached_token(self, nef_spec, seed_records, server):
        with AgentSession(server.base_url) as session:
            built = plan(_subscriptions_record(seed_records), nef_spec, CREDS)
            first = execute(built, server.base_url, session=session)
            second = execute(built, server.base_url, session=session)
        assert first.success and second.success
        assert len(first.steps) == 2
        assert len(second.steps) == 1  # login skipped, token cached
