import httpx
import pytest

from nefkit.mockserver import default_fixtures, schema_example, serve


def _shape_ok(instance, schema):
    """Minimal response-shape check: types, required keys, array items."""
    stype = schema.get("type")
    if stype == "object" or "properties" in schema:
        if not isinstance(instance, dict):
            return False
        for required in schema.get("required", []):
            if required not in instance:
                return False
        for key, value in instance.items():
            prop = schema.get("properties", {}).get(key)
            if prop is not None and not _shape_ok(value, prop):
                return False
        return True
    if stype == "array":
        return isinstance(instance, list) and all(
            _shape_ok(item, schema.get("items", {})) for item in instance
        )
    if stype == "string":
        return isinstance(instance, str)
    if stype == "integer":
        return isinstance(instance, int) and not isinstance(instance, bool)
    if stype == "number":
        return isinstance(instance, (int, float)) and not isinstance(instance, bool)
    if stype == "boolean":
        return isinstance(instance, bool)
    return True


@pytest.fixture()
def server(nef_spec):
    handle = serve(nef_spec)
    yield handle
    handle.stop()


def _login(server):
    return httpx.post(
        server.base_url + "/api/v1/login/access-token",
        data={"grant_type": "password", "username": "admin", "password": "admin"},
    )


class TestLogin:
    def test_correct_credentials_yield_token(self, server):
        response = _login(server)
        assert response.status_code == 200
        body = response.json()
        assert body["token_type"] == "bearer"
        assert body["access_token"]

    def test_wrong_credentials_rejected(self, server):
        response = httpx.post(
            server.base_url + "/api/v1/login/access-token",
            data={"grant_type": "password", "username": "admin", "password": "nope"},
        )
        assert response.status_code == 401

    def test_wrong_grant_type_rejected(self, server):
        response = httpx.post(
            server.base_url + "/api/v1/login/access-token",
            data={"grant_type": "client_credentials", "username": "admin", "password": "admin"},
        )
        assert response.status_code == 401

    def test_get_on_login_path_is_405(self, server):
        assert httpx.get(server.base_url + "/api/v1/login/access-token").status_code == 405


class TestAuth:
    def test_subscriptions_without_token_is_401(self, server):
        url = server.base_url + "/api/v1/3gpp-as-session-with-qos/v1/SCS1/subscriptions"
        assert httpx.get(url).status_code == 401

    def test_garbage_token_rejected(self, server):
        url = server.base_url + "/api/v1/users/me"
        response = httpx.get(url, headers={"Authorization": "Bearer forged"})
        assert response.status_code == 401

    def test_issued_token_stays_valid(self, server):
        token = _login(server).json()["access_token"]
        url = server.base_url + "/api/v1/users/me"
        for _ in range(3):
            response = httpx.get(url, headers={"Authorization": f"Bearer {token}"})
            assert response.status_code == 200


class TestRouting:
    def test_unknown_path_is_404(self, server):
        assert httpx.get(server.base_url + "/api/v1/fake/endpoint").status_code == 404

    def test_fixture_subscriptions_returned_for_known_scs(self, server):
        token = _login(server).json()["access_token"]
        url = server.base_url + "/api/v1/3gpp-as-session-with-qos/v1/SCS1/subscriptions"
        body = httpx.get(url, headers={"Authorization": f"Bearer {token}"}).json()
        assert body == default_fixtures()["subscriptions"]["SCS1"]

    def test_unknown_scs_gets_empty_list(self, server):
        token = _login(server).json()["access_token"]
        url = server.base_url + "/api/v1/3gpp-as-session-with-qos/v1/OTHER/subscriptions"
        body = httpx.get(url, headers={"Authorization": f"Bearer {token}"}).json()
        assert body == []

    def test_every_2xx_body_matches_response_schema(self, server, nef_spec):
        token = _login(server).json()["access_token"]
        headers = {"Authorization": f"Bearer {token}"}
        calls = [
            ("get", "/api/v1/users/me", None),
            ("get", "/api/v1/UEs", None),
            ("get", "/api/v1/Cells", None),
            ("get", "/api/v1/3gpp-as-session-with-qos/v1/SCS1/subscriptions", None),
            (
                "post",
                "/api/v1/3gpp-monitoring-event/v1/SCS1/subscriptions",
                {
                    "externalId": "x@d.com",
                    "notificationDestination": "http://cb",
                    "monitoringType": "LOCATION_REPORTING",
                },
            ),
            ("get", "/api/v1/3gpp-monitoring-event/v1/SCS1/subscriptions/5", None),
        ]
        for method, path, body in calls:
            template = path.replace("/SCS1/", "/{scsAsId}/")
            if template.endswith("/subscriptions/5"):
                template = template[: -len("/5")] + "/{subscriptionId}"
            response = httpx.request(
                method.upper(), server.base_url + path, json=body, headers=headers
            )
            assert response.status_code == 200, path
            op = nef_spec.document["paths"][template][method]
            schema = op["responses"]["200"]["content"]["application/json"]["schema"]
            assert _shape_ok(response.json(), schema), path


class TestRequestLog:
    def test_fresh_server_has_empty_log(self, server):
        assert server.request_log() == []

    def test_one_login_one_entry(self, server):
        _login(server)
        assert server.request_log() == [("post", "/api/v1/login/access-token", 200)]

    def test_log_is_chronological_and_includes_failures(self, server):
        httpx.get(server.base_url + "/nope")
        _login(server)
        log = server.request_log()
        assert log[0] == ("get", "/nope", 404)
        assert log[1][2] == 200


class TestSchemaExample:
    def test_object_fills_all_properties(self):
        schema = {
            "type": "object",
            "required": ["a"],
            "properties": {"a": {"type": "string"}, "b": {"type": "integer"}},
        }
        example = schema_example(schema)
        assert example == {"a": "string", "b": 0}
        assert _shape_ok(example, schema)

    def test_array_of_objects(self):
        schema = {"type": "array", "items": {"type": "object", "properties": {"x": {"type": "number"}}}}
        assert schema_example(schema) == [{"x": 0.0}]

    def test_default_and_enum_preferred(self):
        assert schema_example({"type": "string", "default": "dft"}) == "dft"
        assert schema_example({"type": "string", "enum": ["one", "two"]}) == "one"
