"""In-memory NEF service double for end-to-end agent validation.

Serves the fixture endpoints of a flattened spec: the OAuth2
password-flow login issues bearer tokens, the QoS subscription listing
returns seeded fixture data, and every other known endpoint answers
with a canned body shaped by its declared response schema. Unknown
paths get 404, known paths with the wrong method get 405. Every request
is appended to a linearizable (method, path, status) log.
"""

from __future__ import annotations

import json
import secrets
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Mapping, Optional
from urllib.parse import parse_qs, urlsplit

from nefkit.specs import ApiSpec, EndpointDef, match_path, security_token_path

DEFAULT_CREDENTIALS = {"username": "admin", "password": "admin"}


@dataclass
class ServerState:
    credentials: Mapping[str, str]
    subscriptions: Mapping[str, list]
    issued_tokens: set[str] = field(default_factory=set)
    request_log: list[tuple[str, str, int]] = field(default_factory=list)
    lock: threading.Lock = field(default_factory=threading.Lock)


def default_fixtures() -> dict[str, Any]:
    """Test credentials plus one seeded QoS subscription list."""
    return {
        "credentials": dict(DEFAULT_CREDENTIALS),
        "subscriptions": {
            "SCS1": [
                {
                    "link": "/api/v1/3gpp-as-session-with-qos/v1/SCS1/subscriptions/1",
                    "ipv4Addr": "10.0.0.1",
                    "qosReference": 9,
                    "notificationDestination": "http://callback.local/qos",
                }
            ]
        },
    }


def schema_example(schema: Optional[Mapping[str, Any]]) -> Any:
    """A minimal instance shaped by a (flattened) JSON schema."""
    if not isinstance(schema, Mapping):
        return None
    if "example" in schema:
        return schema["example"]
    if "default" in schema:
        return schema["default"]
    if isinstance(schema.get("enum"), list) and schema["enum"]:
        return schema["enum"][0]
    stype = schema.get("type")
    if stype == "object" or "properties" in schema:
        props = schema.get("properties")
        if isinstance(props, Mapping):
            return {name: schema_example(p) for name, p in props.items()}
        return {}
    if stype == "array":
        return [schema_example(schema.get("items"))]
    if stype == "integer":
        return 0
    if stype == "number":
        return 0.0
    if stype == "boolean":
        return False
    return "string"


def _response_schema(spec: ApiSpec, endpoint: EndpointDef) -> Optional[Mapping[str, Any]]:
    paths = spec.document.get("paths", {})
    op = paths.get(endpoint.path, {}).get(endpoint.method, {})
    responses = op.get("responses", {}) if isinstance(op, Mapping) else {}
    for status in ("200", "201", 200, 201):
        response = responses.get(status)
        if not isinstance(response, Mapping):
            continue
        content = response.get("content")
        if not isinstance(content, Mapping):
            continue
        media = content.get("application/json")
        if isinstance(media, Mapping) and isinstance(media.get("schema"), Mapping):
            return media["schema"]
    return None


class _Handler(BaseHTTPRequestHandler):
    server_version = "NefMock/1.0"
    protocol_version = "HTTP/1.1"

    # set by the server factory
    spec: ApiSpec
    state: ServerState
    token_path: Optional[str]

    def log_message(self, fmt: str, *args: Any) -> None:  # silence stderr chatter
        pass

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def _send(self, status: int, payload: Any, path: str, method: str) -> None:
        body = json.dumps(payload).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)
        with self.state.lock:
            self.state.request_log.append((method, path, status))

    def _bearer_token(self) -> Optional[str]:
        header = self.headers.get("Authorization", "")
        if header.lower().startswith("bearer "):
            return header[7:].strip()
        return None

    def _handle(self, method: str) -> None:
        path = urlsplit(self.path).path
        # Drain the body up front: with keep-alive, unread bytes would be
        # misparsed as the next request on the connection.
        body_raw = self._read_body()
        candidates = match_path(self.spec, path)
        if not candidates:
            self._send(404, {"detail": "Not Found"}, path, method)
            return
        endpoint = next((ep for ep in candidates if ep.method == method), None)
        if endpoint is None:
            self._send(405, {"detail": "Method Not Allowed"}, path, method)
            return

        if self.token_path is not None and endpoint.path == self.token_path:
            self._handle_login(path, method, body_raw)
            return

        if endpoint.requires_auth:
            token = self._bearer_token()
            with self.state.lock:
                authorized = token in self.state.issued_tokens
            if not authorized:
                self._send(401, {"detail": "Not authenticated"}, path, method)
                return

        values = _bind_placeholders(endpoint.path, path)
        if endpoint.path.endswith("/subscriptions") and method == "get" and "scsAsId" in values:
            subs = list(self.state.subscriptions.get(values["scsAsId"], []))
            self._send(200, subs, path, method)
            return

        self._send(200, schema_example(_response_schema(self.spec, endpoint)), path, method)

    def _handle_login(self, path: str, method: str, raw: bytes) -> None:
        content_type = (self.headers.get("Content-Type") or "").split(";")[0].strip()
        form: dict[str, str] = {}
        if content_type == "application/x-www-form-urlencoded":
            form = {k: v[0] for k, v in parse_qs(raw.decode("utf-8")).items()}
        elif content_type == "application/json" and raw:
            try:
                data = json.loads(raw)
                if isinstance(data, dict):
                    form = {str(k): str(v) for k, v in data.items()}
            except json.JSONDecodeError:
                form = {}
        expected = self.state.credentials
        grant_type = form.get("grant_type", "password")
        if (
            grant_type == "password"
            and form.get("username") == expected.get("username")
            and form.get("password") == expected.get("password")
        ):
            token = secrets.token_hex(16)
            with self.state.lock:
                self.state.issued_tokens.add(token)
            self._send(200, {"access_token": token, "token_type": "bearer"}, path, method)
        else:
            self._send(401, {"detail": "Incorrect username or password"}, path, method)

    def do_GET(self) -> None:
        self._handle("get")

    def do_POST(self) -> None:
        self._handle("post")

    def do_PUT(self) -> None:
        self._handle("put")

    def do_DELETE(self) -> None:
        self._handle("delete")

    def do_PATCH(self) -> None:
        self._handle("patch")


def _bind_placeholders(template: str, concrete: str) -> dict[str, str]:
    t_segs = template.strip("/").split("/")
    c_segs = concrete.strip("/").split("/")
    values: dict[str, str] = {}
    if len(t_segs) != len(c_segs):
        return values
    for t, c in zip(t_segs, c_segs):
        if t.startswith("{") and t.endswith("}"):
            values[t[1:-1]] = c
    return values


class NefMockServer:
    """A started server handle: base_url, request_log(), stop()."""

    def __init__(self, spec: ApiSpec, host: str, port: int, fixtures: Mapping[str, Any]):
        self.state = ServerState(
            credentials=fixtures.get("credentials", DEFAULT_CREDENTIALS),
            subscriptions=fixtures.get("subscriptions", {}),
        )
        handler = type(
            "BoundHandler",
            (_Handler,),
            {"spec": spec, "state": self.state, "token_path": security_token_path(spec)},
        )
        self._httpd = ThreadingHTTPServer((host, port), handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)

    def start(self) -> "NefMockServer":
        self._thread.start()
        return self

    @property
    def base_url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def request_log(self) -> list[tuple[str, str, int]]:
        with self.state.lock:
            return list(self.state.request_log)

    def stop(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        self._thread.join(timeout=5)

    def __enter__(self) -> "NefMockServer":
        return self

    def __exit__(self, *exc_info: Any) -> None:
        self.stop()


def serve(
    spec: ApiSpec,
    bind_address: tuple[str, int] = ("127.0.0.1", 0),
    fixtures: Optional[Mapping[str, Any]] = None,
) -> NefMockServer:
    """Bind and start serving; port 0 picks a free port."""
    server = NefMockServer(spec, bind_address[0], bind_address[1], fixtures or default_fixtures())
    return server.start()
