"""OpenAPI parsing, reference flattening, and endpoint lookup.

The pipeline consumes a *flattened* spec: every ``$ref`` (local or
cross-file) replaced by an inlined copy of its target, so downstream
stages never chase references. Flattening duplicates shared targets on
purpose; the result is a plain tree.

Accepts OpenAPI 3.0.x and 3.1.x documents, ignoring keywords the
pipeline does not use. Remote URL references and OpenAPI 2.x are out of
scope.
"""

from __future__ import annotations

import copy
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, IO, Mapping, Optional, Union

import yaml

from nefkit.errors import (
    ReferenceCycleError,
    SpecError,
    SpecSyntaxError,
    UnresolvedReferenceError,
)

STANDARD_METHODS = ("get", "post", "put", "delete", "patch")

_PLACEHOLDER_RE = re.compile(r"\{([^{}/]+)\}")


@dataclass(frozen=True)
class RawSpecDocument:
    """A parsed but not yet flattened specification document."""

    source_path: str
    body: Any


@dataclass(frozen=True)
class ParameterDef:
    """One input of an endpoint, including request-body object fields."""

    name: str
    location: str  # path | query | header | body-field
    required: bool
    value_type: str  # string | integer | number | boolean | object | array

    def __post_init__(self) -> None:
        if self.location == "path" and not self.required:
            raise SpecError(f"path parameter {self.name!r} must be required")


@dataclass(frozen=True)
class EndpointDef:
    """A single (path, method) operation of the flattened spec."""

    path: str
    method: str
    operation_id: str
    description: str
    parameters: tuple[ParameterDef, ...]
    request_body_schema: Optional[Mapping[str, Any]] = None
    body_media_type: Optional[str] = None
    requires_auth: bool = False

    def __post_init__(self) -> None:
        if not self.path.startswith("/"):
            raise SpecError(f"endpoint path must start with '/': {self.path!r}")
        names = [p.name for p in self.parameters]
        if len(names) != len(set(names)):
            dupes = sorted({n for n in names if names.count(n) > 1})
            raise SpecError(
                f"duplicate parameter name(s) {dupes} on {self.method.upper()} {self.path}"
            )
        declared = {p.name for p in self.parameters if p.location == "path"}
        placeholders = set(self.path_placeholders())
        if placeholders != declared:
            raise SpecError(
                f"path placeholders {sorted(placeholders)} do not match declared "
                f"path parameters {sorted(declared)} on {self.method.upper()} {self.path}"
            )

    def path_placeholders(self) -> list[str]:
        return _PLACEHOLDER_RE.findall(self.path)

    def parameter(self, name: str) -> Optional[ParameterDef]:
        for p in self.parameters:
            if p.name == name:
                return p
        return None

    def required_parameter_names(self) -> list[str]:
        return [p.name for p in self.parameters if p.required]


@dataclass(frozen=True)
class ApiSpec:
    """A self-contained, reference-free specification."""

    title: str
    version: str
    endpoints: tuple[EndpointDef, ...]
    components: Mapping[str, Any]
    document: Mapping[str, Any] = field(repr=False, default_factory=dict)


SourceType = Union[bytes, str, IO[bytes]]


def parse_spec(
    source: SourceType,
    format_hint: Optional[str] = None,
    source_path: str = "<memory>",
) -> RawSpecDocument:
    """Parse UTF-8 YAML or JSON text into a document tree.

    Format is auto-detected when no hint is given: JSON first, then
    YAML. Raises :class:`SpecSyntaxError` with the best-known position
    on malformed input, and :class:`SpecError` on an empty document.
    """
    if hasattr(source, "read"):
        data = source.read()
    else:
        data = source
    if isinstance(data, bytes):
        try:
            text = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SpecSyntaxError(f"{source_path}: not valid UTF-8: {exc}") from exc
    else:
        text = data

    body: Any = None
    if format_hint == "json":
        body = _parse_json(text, source_path)
    elif format_hint == "yaml":
        body = _parse_yaml(text, source_path)
    else:
        try:
            body = json.loads(text)
        except json.JSONDecodeError:
            body = _parse_yaml(text, source_path)

    if body is None:
        raise SpecError(f"{source_path}: empty document")
    return RawSpecDocument(source_path=source_path, body=body)


def _parse_json(text: str, source_path: str) -> Any:
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise SpecSyntaxError(f"{source_path}: {exc.msg}", exc.lineno, exc.colno) from exc


def _parse_yaml(text: str, source_path: str) -> Any:
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        column = mark.column + 1 if mark is not None else None
        problem = getattr(exc, "problem", None) or str(exc)
        raise SpecSyntaxError(f"{source_path}: {problem}", line, column) from exc


def parse_spec_file(path: Union[str, Path], format_hint: Optional[str] = None) -> RawSpecDocument:
    p = Path(path)
    hint = format_hint
    if hint is None and p.suffix.lower() == ".json":
        hint = "json"
    elif hint is None and p.suffix.lower() in (".yaml", ".yml"):
        hint = "yaml"
    return parse_spec(p.read_bytes(), format_hint=hint, source_path=str(p))


def make_directory_resolver(base_dir: Union[str, Path]) -> Callable[[str], RawSpecDocument]:
    """Resolve sibling file ids against one directory, with caching."""
    base = Path(base_dir)
    cache: dict[str, RawSpecDocument] = {}

    def resolve(file_id: str) -> RawSpecDocument:
        if file_id not in cache:
            target = base / file_id
            if not target.is_file():
                raise FileNotFoundError(f"no sibling document {file_id!r} in {base}")
            cache[file_id] = parse_spec_file(target)
        return cache[file_id]

    return resolve


def _walk_pointer(body: Any, pointer: str, ref_text: str) -> Any:
    """Follow a '#/a/b' JSON pointer through a document tree."""
    node = body
    if pointer in ("", "/"):
        return node
    for raw in pointer.lstrip("/").split("/"):
        key = raw.replace("~1", "/").replace("~0", "~")
        if isinstance(node, Mapping):
            if key not in node:
                raise UnresolvedReferenceError(ref_text, f"no key {key!r}")
            node = node[key]
        elif isinstance(node, list):
            try:
                node = node[int(key)]
            except (ValueError, IndexError):
                raise UnresolvedReferenceError(ref_text, f"bad list index {key!r}") from None
        else:
            raise UnresolvedReferenceError(
                ref_text, f"segment {key!r} points into a non-tree node"
            )
    return node


def flatten(
    root: RawSpecDocument,
    sibling_resolver: Optional[Callable[[str], RawSpecDocument]] = None,
) -> ApiSpec:
    """Inline every local and cross-file reference and build the endpoint table.

    Shared targets are duplicated at each use site so the result is a
    pure tree. Reference cycles are hard errors naming the cycle path.
    Flattening an already flattened document is the identity on content.
    """
    if not isinstance(root.body, Mapping):
        raise SpecError(f"{root.source_path}: document root must be a mapping")

    root_id = Path(root.source_path).name or root.source_path
    documents: dict[str, Any] = {root_id: root.body}

    def load_document(file_id: str, ref_text: str) -> Any:
        if file_id not in documents:
            if sibling_resolver is None:
                raise UnresolvedReferenceError(ref_text, "no sibling resolver configured")
            try:
                doc = sibling_resolver(file_id)
            except UnresolvedReferenceError:
                raise
            except Exception as exc:
                raise UnresolvedReferenceError(ref_text, str(exc)) from exc
            documents[file_id] = doc.body
        return documents[file_id]

    def expand(node: Any, doc_id: str, stack: tuple[str, ...]) -> Any:
        if isinstance(node, Mapping):
            if "$ref" in node:
                ref = node["$ref"]
                if not isinstance(ref, str):
                    raise SpecError(f"$ref value must be a string, got {type(ref).__name__}")
                file_part, _, pointer = ref.partition("#")
                target_doc = file_part or doc_id
                canonical = f"{target_doc}#{pointer}"
                if canonical in stack:
                    cycle = list(stack[stack.index(canonical):]) + [canonical]
                    raise ReferenceCycleError(cycle)
                body = load_document(target_doc, ref)
                target = _walk_pointer(body, pointer, ref)
                if not isinstance(target, (Mapping, list)):
                    raise UnresolvedReferenceError(ref, "target is not a tree node")
                return expand(copy.deepcopy(target), target_doc, stack + (canonical,))
            return {k: expand(v, doc_id, stack) for k, v in node.items()}
        if isinstance(node, list):
            return [expand(v, doc_id, stack) for v in node]
        return node

    document = expand(root.body, root_id, ())
    remaining = count_reference_markers(document)
    if remaining:
        raise SpecError(f"flattening left {remaining} unresolved reference marker(s)")

    info = document.get("info", {}) if isinstance(document.get("info"), Mapping) else {}
    title = str(info.get("title", ""))
    version = str(info.get("version", ""))
    components: Mapping[str, Any] = {}
    comps = document.get("components")
    if isinstance(comps, Mapping) and isinstance(comps.get("schemas"), Mapping):
        components = comps["schemas"]

    global_security = bool(document.get("security"))
    endpoints = _build_endpoints(document, global_security)

    seen_ops: dict[str, str] = {}
    for ep in endpoints:
        where = f"{ep.method.upper()} {ep.path}"
        if ep.operation_id in seen_ops:
            raise SpecError(
                f"duplicate operation id {ep.operation_id!r} "
                f"({seen_ops[ep.operation_id]} and {where})"
            )
        seen_ops[ep.operation_id] = where

    return ApiSpec(
        title=title,
        version=version,
        endpoints=tuple(endpoints),
        components=components,
        document=document,
    )


def _build_endpoints(document: Mapping[str, Any], global_security: bool) -> list[EndpointDef]:
    endpoints: list[EndpointDef] = []
    paths = document.get("paths")
    if not isinstance(paths, Mapping):
        return endpoints
    for path, item in paths.items():
        if not isinstance(item, Mapping):
            continue
        shared_params = item.get("parameters", [])
        for method, op in item.items():
            if method not in STANDARD_METHODS or not isinstance(op, Mapping):
                continue  # non-standard verbs stay in the document only
            endpoints.append(_build_endpoint(str(path), method, op, shared_params, global_security))
    return endpoints


def _build_endpoint(
    path: str,
    method: str,
    op: Mapping[str, Any],
    shared_params: Any,
    global_security: bool,
) -> EndpointDef:
    params: list[ParameterDef] = []
    raw_params = list(shared_params or []) + list(op.get("parameters", []) or [])
    for raw in raw_params:
        if not isinstance(raw, Mapping) or "name" not in raw:
            continue
        location = str(raw.get("in", "query"))
        schema = raw.get("schema") if isinstance(raw.get("schema"), Mapping) else {}
        params.append(
            ParameterDef(
                name=str(raw["name"]),
                location=location,
                required=bool(raw.get("required", False)) or location == "path",
                value_type=str(schema.get("type", "string")),
            )
        )

    body_schema: Optional[Mapping[str, Any]] = None
    body_media: Optional[str] = None
    request_body = op.get("requestBody")
    if isinstance(request_body, Mapping):
        content = request_body.get("content")
        if isinstance(content, Mapping) and content:
            for preferred in ("application/json", "application/x-www-form-urlencoded"):
                if preferred in content:
                    body_media = preferred
                    break
            else:
                body_media = next(iter(content))
            media = content.get(body_media)
            if isinstance(media, Mapping) and isinstance(media.get("schema"), Mapping):
                body_schema = media["schema"]
    if body_schema is not None:
        required_fields = set(body_schema.get("required", []) or [])
        properties = body_schema.get("properties")
        if isinstance(properties, Mapping):
            known = {p.name for p in params}
            for name, prop in properties.items():
                if name in known:
                    continue
                prop_schema = prop if isinstance(prop, Mapping) else {}
                params.append(
                    ParameterDef(
                        name=str(name),
                        location="body-field",
                        required=name in required_fields,
                        value_type=str(prop_schema.get("type", "string")),
                    )
                )

    # Undeclared path placeholders are synthesized as required string params
    # so sloppy-but-common specs still satisfy the path/parameter coherence rule.
    declared_path = {p.name for p in params if p.location == "path"}
    for placeholder in _PLACEHOLDER_RE.findall(path):
        if placeholder not in declared_path:
            params.append(
                ParameterDef(name=placeholder, location="path", required=True, value_type="string")
            )
            declared_path.add(placeholder)

    if "security" in op:
        requires_auth = bool(op.get("security"))
    else:
        requires_auth = global_security

    description = str(op.get("description") or op.get("summary") or "")
    operation_id = op.get("operationId")
    if not operation_id:
        slug = re.sub(r"[^a-zA-Z0-9]+", "_", path).strip("_")
        operation_id = f"{method}_{slug}"

    return EndpointDef(
        path=path,
        method=method,
        operation_id=str(operation_id),
        description=description,
        parameters=tuple(params),
        request_body_schema=body_schema,
        body_media_type=body_media,
        requires_auth=requires_auth,
    )


def count_reference_markers(tree: Any) -> int:
    """Count '$ref' keys anywhere in a document tree."""
    count = 0
    if isinstance(tree, Mapping):
        for key, value in tree.items():
            if key == "$ref":
                count += 1
            count += count_reference_markers(value)
    elif isinstance(tree, list):
        for value in tree:
            count += count_reference_markers(value)
    return count


def endpoint_catalog(spec: ApiSpec) -> list[tuple[str, str, str]]:
    """(path, method, operation_id) triples, ordered by path then method."""
    triples = [(ep.path, ep.method, ep.operation_id) for ep in spec.endpoints]
    return sorted(triples, key=lambda t: (t[0], t[1]))


def _segments(path: str) -> list[str]:
    return path.strip("/").split("/")


def _template_matches(template: str, concrete: str) -> bool:
    t_segs = _segments(template)
    c_segs = _segments(concrete)
    if len(t_segs) != len(c_segs):
        return False
    for t, c in zip(t_segs, c_segs):
        if _PLACEHOLDER_RE.fullmatch(t):
            if not c:
                return False
        elif t != c:
            return False
    return True


def match_path(spec: ApiSpec, path: str) -> list[EndpointDef]:
    """Endpoints whose path matches literally or by template unification.

    Literal matches come first; template matches follow, fewest
    placeholders first, then catalog order. A placeholder segment
    matches exactly one non-empty concrete segment.
    """
    ordered = sorted(spec.endpoints, key=lambda ep: (ep.path, ep.method))
    literal = [ep for ep in ordered if ep.path == path]
    template = [
        ep
        for ep in ordered
        if ep.path != path and _template_matches(ep.path, path)
    ]
    template.sort(key=lambda ep: (len(ep.path_placeholders()), ep.path, ep.method))
    return literal + template


def lookup_endpoint(spec: ApiSpec, path: str, method: str) -> Optional[EndpointDef]:
    """Find the endpoint for a concrete or template path and exact method."""
    method = method.lower()
    for ep in match_path(spec, path):
        if ep.method == method:
            return ep
    return None


def security_token_path(spec: ApiSpec) -> Optional[str]:
    """The OAuth2 password-flow token URL declared by the spec, if any."""
    comps = spec.document.get("components")
    if not isinstance(comps, Mapping):
        return None
    schemes = comps.get("securitySchemes")
    if not isinstance(schemes, Mapping):
        return None
    for scheme in schemes.values():
        if not isinstance(scheme, Mapping) or scheme.get("type") != "oauth2":
            continue
        flows = scheme.get("flows")
        if not isinstance(flows, Mapping):
            continue
        password = flows.get("password")
        if isinstance(password, Mapping) and password.get("tokenUrl"):
            return str(password["tokenUrl"])
    return None


def spec_to_yaml(spec: ApiSpec) -> str:
    """Serialize the flattened document as YAML, preserving key order."""
    return yaml.safe_dump(_plain(spec.document), sort_keys=False, allow_unicode=True)


def spec_to_json(spec: ApiSpec, indent: int = 2) -> str:
    return json.dumps(_plain(spec.document), indent=indent, ensure_ascii=False) + "\n"


def _plain(node: Any) -> Any:
    if isinstance(node, Mapping):
        return {k: _plain(v) for k, v in node.items()}
    if isinstance(node, list):
        return [_plain(v) for v in node]
    return node
