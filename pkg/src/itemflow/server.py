"""The single process with write authority: sessions, wire API, HTTP adapter.

Every request funnels through ``Server.handle_request(op, params, token)``;
the HTTP layer is a thin route table over it. Responses are plain dicts
(JSON on the wire); outcome/schema documents travel verbatim as XML
strings inside them. Errors map to stable machine-readable codes.

Mutating requests may carry a client-generated ``request_id``; replaying
one returns the original response without a second event. The cache is
in-memory and bounded; a retry that lands after a restart is
indistinguishable from a first attempt.
"""

from __future__ import annotations

import json
import re
import secrets
import threading
import time
from collections import OrderedDict
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any
from urllib.parse import parse_qs, unquote, urlparse

from .bootstrap import verify_credential
from .descriptions import KINDS
from .errors import AuthFailed, KernelError, NotFound
from .exchange import export_descriptions, import_descriptions, parse_exchange, serialize_exchange
from .execution import Kernel, PREDEFINED_STEPS
from .items import Item, resolve_viewpoint

SESSION_TTL_SECONDS = 8 * 3600
REQUEST_CACHE_LIMIT = 50_000

ERROR_STATUS = {
    "AuthFailed": 401,
    "Unauthorized": 403,
    "NotFound": 404,
    "NoSuchView": 404,
    "NoSuchActivity": 404,
    "NoSuchDescription": 404,
    "NoSuchVersion": 404,
    "DuplicateId": 409,
    "DuplicateName": 409,
    "IllegalTransition": 409,
    "SlotOccupied": 409,
    "SlotEmpty": 409,
    "HistoryOverwrite": 409,
    "FragmentOverwrite": 409,
}


class Sessions:
    def __init__(self) -> None:
        self._tokens: dict[str, tuple[str, float]] = {}
        self._lock = threading.Lock()

    def open(self, agent_id: str) -> str:
        token = secrets.token_urlsafe(24)
        with self._lock:
            self._tokens[token] = (agent_id, time.time() + SESSION_TTL_SECONDS)
        return token

    def agent_for(self, token: str | None) -> str:
        if not token:
            raise AuthFailed("missing session token")
        with self._lock:
            entry = self._tokens.get(token)
            if entry is None:
                raise AuthFailed("unknown session token")
            agent_id, expires = entry
            if time.time() > expires:
                del self._tokens[token]
                raise AuthFailed("session expired")
            return agent_id


def item_summary(item: Item) -> dict[str, Any]:
    summary: dict[str, Any] = {
        "id": item.id,
        "name": item.name,
        "type": item.type_name,
        "properties": [{"name": p.name, "value": p.value, "mutable": p.mutable}
                       for p in item.properties.values()],
        "collections": [{
            "name": c.name,
            "version": c.version,
            "slots": [{"id": s.id, "member": s.member,
                       "constraints": [list(pair) for pair in s.constraints]}
                      for s in c.slots],
        } for c in item.collections.values()],
        "viewpoints": [{"schema": s, "view": v, "event": vp.event_id}
                       for (s, v), vp in sorted(item.viewpoints.items())],
        "history_length": len(item.history),
    }
    if item.workflow is not None:
        summary["workflow"] = {
            "states": item.workflow.state_snapshot(),
            "enabled": sorted(item.workflow.enabled_activities()),
            "terminal": item.workflow.terminal_reached,
        }
    else:
        summary["workflow"] = None
    return summary


def event_payload(event) -> dict[str, Any]:
    payload = {
        "id": event.id,
        "timestamp": event.timestamp,
        "agent": event.agent_id,
        "activity": event.activity_path,
        "transition": event.transition,
        "predefined": event.predefined,
    }
    if event.outcome_ref is not None:
        payload["outcome"] = {"schema": event.outcome_ref.schema_name,
                              "version": event.outcome_ref.schema_version,
                              "event": event.outcome_ref.event_id}
    if event.view_name is not None:
        payload["view"] = event.view_name
    return payload


class Server:
    def __init__(self, kernel: Kernel):
        self.kernel = kernel
        self.sessions = Sessions()
        self._request_cache: OrderedDict[str, dict[str, Any]] = OrderedDict()
        self._cache_lock = threading.Lock()

    # --- idempotent retries -----------------------------------------------------

    def _cached(self, request_id: str | None) -> dict[str, Any] | None:
        if not request_id:
            return None
        with self._cache_lock:
            return self._request_cache.get(request_id)

    def _remember(self, request_id: str | None, response: dict[str, Any]) -> None:
        if not request_id:
            return
        with self._cache_lock:
            self._request_cache[request_id] = response
            while len(self._request_cache) > REQUEST_CACHE_LIMIT:
                self._request_cache.popitem(last=False)

    # --- the wire operation ------------------------------------------------------

    def handle_request(self, op: str, params: dict[str, Any],
                       token: str | None = None) -> dict[str, Any]:
        try:
            return self._dispatch(op, params, token)
        except KernelError as exc:
            return {"ok": False, "error": exc.code, "message": exc.message}

    def _dispatch(self, op: str, params: dict[str, Any],
                  token: str | None) -> dict[str, Any]:
        if op == "ping":
            return {"ok": True, "server": "itemflow"}
        if op == "login":
            return self._login(params)
        agent_id = self.sessions.agent_for(token)
        handler = getattr(self, f"_op_{op}", None)
        if handler is None:
            raise NotFound(f"unknown operation {op!r}")
        mutating = op in ("execute", "step", "instantiate", "import_descriptions", "apply")
        request_id = params.get("request_id") if mutating else None
        if request_id:
            cached = self._cached(request_id)
            if cached is not None:
                return cached
        response = handler(params, agent_id)
        if request_id:
            self._remember(request_id, response)
        return response

    def _login(self, params: dict[str, Any]) -> dict[str, Any]:
        name = params.get("agent", "")
        secret = params.get("secret", "")
        try:
            agent = self.kernel.item_by_name(
                name if name.startswith("/") else f"/agents/{name}")
        except NotFound:
            raise AuthFailed("unknown agent") from None
        stored = agent.property_value("CredentialHash") or ""
        if not stored or not verify_credential(secret, stored):
            raise AuthFailed("bad credentials")
        token = self.sessions.open(agent.id)
        return {"ok": True, "token": token, "agent_id": agent.id,
                "roles": sorted(self.kernel.agent_roles(agent.id))}

    # --- reads ----------------------------------------------------------------------

    def _op_list_items(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        prefix = params.get("prefix", "/")
        limit = int(params.get("limit", 0) or 0)
        found = self.kernel.directory.prefix(prefix)
        if limit:
            found = found[:limit]
        entries = [{"name": name, "id": iid,
                    "type": self.kernel.directory.record(iid).type_name}
                   for name, iid in found]
        return {"ok": True, "items": entries}

    def _op_lookup(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        item_id = self.kernel.directory.lookup(params.get("name", ""))
        return {"ok": True, "id": item_id}

    def _resolve_item(self, params: dict[str, Any]) -> Item:
        ref = params.get("item", "")
        if ref.startswith("/"):
            ref = self.kernel.directory.lookup(ref)
        return self.kernel.load_item(ref)

    def _op_summary(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        return {"ok": True, "item": item_summary(self._resolve_item(params))}

    def _op_history(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        item = self._resolve_item(params)
        return {"ok": True, "item_id": item.id,
                "events": [event_payload(e) for e in item.history]}

    def _op_outcome(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        item = self._resolve_item(params)
        key = (params.get("schema", ""), int(params.get("version", 0)),
               int(params.get("event", 0)))
        outcome = item.outcomes.get(key)
        if outcome is None:
            raise NotFound(f"no outcome {key!r} on item {item.id!r}")
        return {"ok": True, "schema": outcome.schema_name,
                "version": outcome.schema_version, "event": outcome.event_id,
                "document": outcome.document.decode("utf-8")}

    def _op_viewpoint(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        item = self._resolve_item(params)
        outcome = resolve_viewpoint(item, params.get("schema", ""),
                                    params.get("view", "last"))
        return {"ok": True, "schema": outcome.schema_name,
                "version": outcome.schema_version, "event": outcome.event_id,
                "document": outcome.document.decode("utf-8")}

    def _op_jobs(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        item_ref = params.get("item")
        if item_ref and item_ref.startswith("/"):
            item_ref = self.kernel.directory.lookup(item_ref)
        jobs = self.kernel.list_jobs(agent_id, item_id=item_ref,
                                     prefix=params.get("prefix"))
        return {"ok": True, "jobs": [{
            "item_id": j.item_id, "item_name": j.item_name,
            "activity": j.activity_path, "transition": j.transition,
            "required_role": j.required_role,
            "outcome_schema": (list(j.outcome_schema) if j.outcome_schema else None),
            "issued_at": j.issued_at,
        } for j in jobs]}

    def _op_description(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        kind = params.get("kind", "")
        if kind not in KINDS:
            raise NotFound(f"unknown description kind {kind!r}")
        selector = params.get("version", "last")
        if selector != "last":
            selector = int(selector)
        document, version = self.kernel.source().payload(
            kind, params.get("name", ""), selector)
        return {"ok": True, "kind": kind, "name": params.get("name", ""),
                "version": version, "document": document.decode("utf-8")}

    # --- writes ---------------------------------------------------------------------

    def _op_execute(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        item = self._resolve_item(params)
        outcome = params.get("outcome")
        event = self.kernel.execute_transition(
            item.id, params.get("activity", ""), params.get("transition", ""),
            agent_id, outcome=outcome.encode("utf-8") if outcome else None,
            view=params.get("view"))
        return {"ok": True, "item_id": item.id, "event": event_payload(event)}

    def _op_step(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        item = self._resolve_item(params)
        step = params.get("step", "")
        if step not in PREDEFINED_STEPS:
            raise NotFound(f"no predefined step {step!r}")
        payload = params.get("payload", "").encode("utf-8")
        with self.kernel.lock(item.id):
            from .execution import Transaction
            txn = Transaction(self.kernel)
            try:
                event, info = self.kernel._step_in_txn(txn, item.id, step,
                                                       payload, agent_id)
                txn.commit()
            except BaseException:
                txn.abort()
                raise
        response = {"ok": True, "item_id": item.id, "event": event_payload(event)}
        response.update(info)
        return response

    def _op_instantiate(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        selector = params.get("version", "last")
        if selector != "last":
            selector = int(selector)
        event, created_id = self.kernel.instantiate(
            params.get("type", ""), selector, params.get("name", ""), agent_id,
            initial_properties=params.get("properties") or {})
        created = self.kernel.load_item(created_id)
        return {"ok": True, "item_id": created_id, "name": created.name,
                "event": event_payload(event)}

    def _op_import_descriptions(self, params: dict[str, Any],
                                agent_id: str) -> dict[str, Any]:
        exchange = parse_exchange(params.get("file", ""))
        report = import_descriptions(self.kernel, exchange, agent_id)
        return {"ok": True, "report": report}

    def _op_export_descriptions(self, params: dict[str, Any],
                                agent_id: str) -> dict[str, Any]:
        self.kernel.require_maintainer(agent_id)
        selector = params.get("version", "last")
        if selector != "last":
            selector = int(selector)
        exchange = export_descriptions(self.kernel, params.get("type", ""), selector)
        return {"ok": True, "file": serialize_exchange(exchange).decode("utf-8")}

    def _op_apply(self, params: dict[str, Any], agent_id: str) -> dict[str, Any]:
        selector = params.get("script_version", "last")
        if selector != "last":
            selector = int(selector)
        loader_source = self.kernel.source()
        data, version = loader_source.payload("script", params.get("script", ""),
                                              selector)
        from .scripting import parse_script_definition
        script = parse_script_definition(data, name=params.get("script", ""),
                                         version=version)
        report = self.kernel.bulk_apply(script, params.get("selector", ""), agent_id)
        return {"ok": True, "report": report}


# --- HTTP adapter -----------------------------------------------------------------

_ROUTES: list[tuple[str, re.Pattern[str], str, dict[str, int]]] = [
    ("POST", re.compile(r"^/api/login$"), "login", {}),
    ("GET", re.compile(r"^/api/ping$"), "ping", {}),
    ("GET", re.compile(r"^/api/items$"), "list_items", {}),
    ("GET", re.compile(r"^/api/lookup$"), "lookup", {}),
    ("GET", re.compile(r"^/api/items/([^/]+)$"), "summary", {"item": 1}),
    ("GET", re.compile(r"^/api/items/([^/]+)/history$"), "history", {"item": 1}),
    ("GET", re.compile(r"^/api/items/([^/]+)/outcome/([^/]+)/([^/]+)/([^/]+)$"),
     "outcome", {"item": 1, "schema": 2, "version": 3, "event": 4}),
    ("GET", re.compile(r"^/api/items/([^/]+)/viewpoint/([^/]+)/([^/]+)$"),
     "viewpoint", {"item": 1, "schema": 2, "view": 3}),
    ("GET", re.compile(r"^/api/jobs$"), "jobs", {}),
    ("GET", re.compile(r"^/api/descriptions/([^/]+)/([^/]+)$"), "description",
     {"kind": 1, "name": 2}),
    ("POST", re.compile(r"^/api/items/([^/]+)/execute$"), "execute", {"item": 1}),
    ("POST", re.compile(r"^/api/items/([^/]+)/step$"), "step", {"item": 1}),
    ("POST", re.compile(r"^/api/instantiate$"), "instantiate", {}),
    ("POST", re.compile(r"^/api/descriptions/import$"), "import_descriptions", {}),
    ("GET", re.compile(r"^/api/descriptions/export$"), "export_descriptions", {}),
    ("POST", re.compile(r"^/api/apply$"), "apply", {}),
]


class _Handler(BaseHTTPRequestHandler):
    server_version = "itemflow/0.1"
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt: str, *args: Any) -> None:  # quiet by default
        if getattr(self.server, "verbose", False):
            super().log_message(fmt, *args)

    def _respond(self, response: dict[str, Any]) -> None:
        status = 200
        if not response.get("ok", False):
            status = ERROR_STATUS.get(str(response.get("error")), 400)
        body = json.dumps(response).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def _token(self) -> str | None:
        header = self.headers.get("Authorization", "")
        if header.startswith("Bearer "):
            return header[len("Bearer "):]
        return None

    def _run(self, method: str) -> None:
        parsed = urlparse(self.path)
        for route_method, pattern, op, groups in _ROUTES:
            if route_method != method:
                continue
            match = pattern.match(parsed.path)
            if match is None:
                continue
            params: dict[str, Any] = {}
            for key, values in parse_qs(parsed.query).items():
                params[key] = values[0]
            for key, index in groups.items():
                params[key] = unquote(match.group(index))
            if method == "POST":
                length = int(self.headers.get("Content-Length", "0") or "0")
                raw = self.rfile.read(length) if length else b""
                if raw:
                    content_type = self.headers.get("Content-Type", "")
                    if "json" in content_type:
                        try:
                            body = json.loads(raw.decode("utf-8"))
                        except json.JSONDecodeError:
                            self._respond({"ok": False, "error": "BadRequest",
                                           "message": "request body is not JSON"})
                            return
                        if isinstance(body, dict):
                            params.update(body)
                    else:
                        params["file"] = raw.decode("utf-8")
            api = self.server.api  # type: ignore[attr-defined]
            self._respond(api.handle_request(op, params, self._token()))
            return
        self._respond({"ok": False, "error": "NotFound",
                       "message": f"no route {method} {parsed.path}"})

    def do_GET(self) -> None:
        self._run("GET")

    def do_POST(self) -> None:
        self._run("POST")


class HttpServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, address: tuple[str, int], api: Server, verbose: bool = False):
        super().__init__(address, _Handler)
        self.api = api
        self.verbose = verbose


def serve(kernel: Kernel, host: str = "127.0.0.1", port: int = 8137,
          verbose: bool = False) -> HttpServer:
    """Bind and return the HTTP server; caller runs serve_forever()."""
    return HttpServer((host, port), Server(kernel), verbose=verbose)
