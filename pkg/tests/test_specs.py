import io
import json

import pytest
import yaml

from nefkit.errors import (
    ReferenceCycleError,
    SpecError,
    SpecSyntaxError,
    UnresolvedReferenceError,
)
from nefkit.fixtures import fixture_dir, fixture_path
from nefkit.specs import (
    RawSpecDocument,
    count_reference_markers,
    endpoint_catalog,
    flatten,
    lookup_endpoint,
    make_directory_resolver,
    parse_spec,
    parse_spec_file,
    security_token_path,
    spec_to_yaml,
)


def _scan_for_refs(node):
    # independent of count_reference_markers on purpose
    found = 0
    if isinstance(node, dict):
        for k, v in node.items():
            found += (k == "$ref") + _scan_for_refs(v)
    elif isinstance(node, list):
        for v in node:
            found += _scan_for_refs(v)
    return found


class TestParseSpec:
    def test_minimal_json_document(self):
        doc = parse_spec(b'{"openapi":"3.0.0","paths":{}}')
        assert doc.body["openapi"] == "3.0.0"
        assert len(doc.body["paths"]) == 0

    def test_fixture_has_seven_path_entries(self):
        doc = parse_spec_file(fixture_path("nef_main.yaml"))
        assert len(doc.body["paths"]) == 7

    def test_truncated_yaml_reports_position(self):
        bad = b"paths:\n  /a:\n   get: [unclosed"
        with pytest.raises(SpecSyntaxError) as excinfo:
            parse_spec(bad)
        assert excinfo.value.line is not None

    def test_empty_document_rejected(self):
        with pytest.raises(SpecError, match="empty"):
            parse_spec(b"")

    def test_accepts_binary_stream(self):
        doc = parse_spec(io.BytesIO(b'{"openapi":"3.1.0","paths":{}}'))
        assert doc.body["openapi"] == "3.1.0"

    def test_json_hint_reports_json_position(self):
        with pytest.raises(SpecSyntaxError):
            parse_spec(b'{"broken": ', format_hint="json")


class TestFlatten:
    def test_local_reference_inlined(self):
        body = {
            "openapi": "3.0.0",
            "info": {"title": "t", "version": "1"},
            "paths": {
                "/token": {
                    "post": {
                        "operationId": "make_token",
                        "responses": {
                            "200": {
                                "content": {
                                    "application/json": {
                                        "schema": {"$ref": "#/components/schemas/Token"}
                                    }
                                }
                            }
                        },
                    }
                }
            },
            "components": {
                "schemas": {"Token": {"type": "object", "properties": {"v": {"type": "string"}}}}
            },
        }
        spec = flatten(RawSpecDocument("inline.json", body))
        schema = spec.document["paths"]["/token"]["post"]["responses"]["200"]["content"][
            "application/json"
        ]["schema"]
        assert schema["type"] == "object"
        assert _scan_for_refs(spec.document) == 0

    def test_cross_file_fixture_flattens_clean(self, nef_spec):
        assert _scan_for_refs(nef_spec.document) == 0
        assert count_reference_markers(nef_spec.document) == 0
        assert nef_spec.title == "NEF Northbound API"

    def test_flatten_is_idempotent_on_fixture(self, nef_spec):
        again = flatten(RawSpecDocument("flat.yaml", nef_spec.document))
        assert again.document == nef_spec.document
        assert endpoint_catalog(again) == endpoint_catalog(nef_spec)

    def test_cycle_detected_with_named_path(self):
        root = parse_spec_file(fixture_path("cyclic_a.yaml"))
        with pytest.raises(ReferenceCycleError) as excinfo:
            flatten(root, make_directory_resolver(fixture_dir()))
        cycle = excinfo.value.cycle
        assert cycle[0] == cycle[-1]
        assert any("cyclic_a.yaml" in hop for hop in cycle)
        assert any("cyclic_b.yaml" in hop for hop in cycle)

    def test_unresolved_reference_names_target(self):
        body = {
            "openapi": "3.0.0",
            "paths": {},
            "components": {"schemas": {"X": {"$ref": "#/components/schemas/Missing"}}},
        }
        with pytest.raises(UnresolvedReferenceError, match="Missing"):
            flatten(RawSpecDocument("u.json", body))

    def test_missing_sibling_names_file(self):
        body = {
            "openapi": "3.0.0",
            "paths": {},
            "components": {"schemas": {"X": {"$ref": "nowhere.yaml#/components/schemas/Y"}}},
        }
        with pytest.raises(UnresolvedReferenceError, match="nowhere.yaml"):
            flatten(RawSpecDocument("u.json", body), make_directory_resolver(fixture_dir()))

    def test_reference_into_scalar_rejected(self):
        body = {
            "openapi": "3.0.0",
            "paths": {},
            "components": {"schemas": {"X": {"$ref": "#/openapi/nope"}}},
        }
        with pytest.raises(UnresolvedReferenceError):
            flatten(RawSpecDocument("u.json", body))

    def test_scalar_reference_target_rejected(self):
        body = {
            "openapi": "3.0.0",
            "paths": {},
            "components": {"schemas": {"X": {"$ref": "#/openapi"}}},
        }
        with pytest.raises(UnresolvedReferenceError, match="not a tree node"):
            flatten(RawSpecDocument("u.json", body))

    def test_duplicate_operation_ids_rejected(self):
        body = {
            "openapi": "3.0.0",
            "paths": {
                "/a": {"get": {"operationId": "same", "responses": {}}},
                "/b": {"get": {"operationId": "same", "responses": {}}},
            },
        }
        with pytest.raises(SpecError, match="duplicate operation id"):
            flatten(RawSpecDocument("dup.json", body))

    def test_non_standard_methods_kept_in_document_only(self):
        body = {
            "openapi": "3.0.0",
            "paths": {
                "/a": {
                    "get": {"operationId": "get_a", "responses": {}},
                    "options": {"operationId": "opt_a", "responses": {}},
                }
            },
        }
        spec = flatten(RawSpecDocument("m.json", body))
        assert [ep.method for ep in spec.endpoints] == ["get"]
        assert "options" in spec.document["paths"]["/a"]


class TestEndpointInvariants:
    def test_path_placeholders_match_path_parameters(self, nef_spec):
        for ep in nef_spec.endpoints:
            declared = {p.name for p in ep.parameters if p.location == "path"}
            assert set(ep.path_placeholders()) == declared

    def test_path_parameters_are_required(self, nef_spec):
        for ep in nef_spec.endpoints:
            for p in ep.parameters:
                if p.location == "path":
                    assert p.required

    def test_body_fields_extracted_with_required_flags(self, nef_spec):
        login = lookup_endpoint(nef_spec, "/api/v1/login/access-token", "post")
        fields = {p.name: p for p in login.parameters if p.location == "body-field"}
        assert set(fields) == {
            "grant_type",
            "username",
            "password",
            "scope",
            "client_id",
            "client_secret",
        }
        assert fields["username"].required and fields["password"].required
        assert not fields["scope"].required

    def test_auth_flags_follow_security_declarations(self, nef_spec):
        assert not lookup_endpoint(nef_spec, "/api/v1/login/access-token", "post").requires_auth
        assert lookup_endpoint(nef_spec, "/api/v1/users/me", "get").requires_auth


class TestCatalog:
    def test_empty_spec_has_empty_catalog(self):
        spec = flatten(RawSpecDocument("e.json", {"openapi": "3.0.0", "paths": {}}))
        assert endpoint_catalog(spec) == []

    def test_fixture_catalog_has_seven_entries(self, nef_spec):
        catalog = endpoint_catalog(nef_spec)
        assert len(catalog) == 7
        assert (
            "/api/v1/login/access-token",
            "post",
            "login_access_token_api_v1_login_access_token_post",
        ) in catalog

    def test_method_fanout_yields_two_entries(self):
        body = {
            "openapi": "3.0.0",
            "paths": {
                "/x": {
                    "get": {"operationId": "get_x", "responses": {}},
                    "post": {"operationId": "post_x", "responses": {}},
                }
            },
        }
        spec = flatten(RawSpecDocument("f.json", body))
        assert len(endpoint_catalog(spec)) == 2

    def test_catalog_is_deterministic(self, nef_spec):
        assert endpoint_catalog(nef_spec) == endpoint_catalog(nef_spec)
        assert endpoint_catalog(nef_spec) == sorted(
            endpoint_catalog(nef_spec), key=lambda t: (t[0], t[1])
        )


class TestLookup:
    def test_literal_lookup(self, nef_spec):
        ep = lookup_endpoint(nef_spec, "/api/v1/login/access-token", "post")
        assert ep is not None
        assert ep.operation_id == "login_access_token_api_v1_login_access_token_post"

    def test_template_lookup(self, nef_spec):
        ep = lookup_endpoint(
            nef_spec, "/api/v1/3gpp-as-session-with-qos/v1/SCS1/subscriptions", "get"
        )
        assert ep is not None
        assert ep.path == "/api/v1/3gpp-as-session-with-qos/v1/{scsAsId}/subscriptions"

    def test_template_text_matches_itself(self, nef_spec):
        ep = lookup_endpoint(
            nef_spec, "/api/v1/3gpp-as-session-with-qos/v1/{scsAsId}/subscriptions", "get"
        )
        assert ep is not None

    def test_absent_endpoint_is_none(self, nef_spec):
        assert lookup_endpoint(nef_spec, "/nonexistent", "get") is None

    def test_method_must_match_exactly(self, nef_spec):
        assert lookup_endpoint(nef_spec, "/api/v1/login/access-token", "get") is None

    def test_literal_match_beats_template(self):
        body = {
            "openapi": "3.0.0",
            "paths": {
                "/items/{id}": {"get": {"operationId": "by_template", "responses": {}}},
                "/items/special": {"get": {"operationId": "literal", "responses": {}}},
            },
        }
        spec = flatten(RawSpecDocument("lit.json", body))
        assert lookup_endpoint(spec, "/items/special", "get").operation_id == "literal"
        assert lookup_endpoint(spec, "/items/42", "get").operation_id == "by_template"

    def test_security_token_path(self, nef_spec):
        assert security_token_path(nef_spec) == "/api/v1/login/access-token"


class TestSerialization:
    def test_yaml_round_trip_preserves_content_and_order(self, nef_spec):
        text = spec_to_yaml(nef_spec)
        loaded = yaml.safe_load(text)
        assert loaded == json.loads(json.dumps(nef_spec.document))
        assert list(loaded["paths"].keys()) == list(nef_spec.document["paths"].keys())
