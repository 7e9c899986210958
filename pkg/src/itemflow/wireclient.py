"""HTTP client for the wire API; the CLI and tests are built on this."""

from __future__ import annotations

import uuid
from typing import Any
from urllib.parse import quote

import requests

from .errors import KernelError, error_for_code


class WireError(Exception):
    """Transport-level failure (server unreachable, bad payload)."""


class Client:
    def __init__(self, base_url: str, token: str | None = None, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self.token = token
        self.timeout = timeout
        self._http = requests.Session()

    # --- plumbing ---------------------------------------------------------------

    def _headers(self) -> dict[str, str]:
        headers = {}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        return headers

    def _unwrap(self, response: requests.Response) -> dict[str, Any]:
        try:
            payload = response.json()
        except ValueError as exc:
            raise WireError(f"non-JSON response ({response.status_code})") from exc
        if not payload.get("ok", False):
            raise error_for_code(payload.get("error", "KernelError"),
                                 payload.get("message", ""))
        return payload

    def _get(self, path: str, params: dict[str, Any] | None = None) -> dict[str, Any]:
        try:
            response = self._http.get(self.base_url + path, params=params or {},
                                      headers=self._headers(), timeout=self.timeout)
        except requests.RequestException as exc:
            raise WireError(str(exc)) from exc
        return self._unwrap(response)

    def _post(self, path: str, body: dict[str, Any] | None = None,
              raw: bytes | None = None) -> dict[str, Any]:
        try:
            if raw is not None:
                response = self._http.post(self.base_url + path, data=raw,
                                           headers={**self._headers(),
                                                    "Content-Type": "application/xml"},
                                           timeout=self.timeout)
            else:
                response = self._http.post(self.base_url + path, json=body or {},
                                           headers=self._headers(), timeout=self.timeout)
        except requests.RequestException as exc:
            raise WireError(str(exc)) from exc
        return self._unwrap(response)

    @staticmethod
    def request_id() -> str:
        return uuid.uuid4().hex

    @staticmethod
    def _ref(item: str) -> str:
        return quote(item, safe="")

    # --- operations --------------------------------------------------------------

    def ping(self) -> bool:
        return bool(self._get("/api/ping").get("ok"))

    def login(self, agent: str, secret: str) -> dict[str, Any]:
        payload = self._post("/api/login", {"agent": agent, "secret": secret})
        self.token = payload["token"]
        return payload

    def list_items(self, prefix: str = "/", limit: int = 0) -> list[dict[str, str]]:
        return self._get("/api/items", {"prefix": prefix, "limit": limit})["items"]

    def lookup(self, name: str) -> str:
        return self._get("/api/lookup", {"name": name})["id"]

    def summary(self, item: str) -> dict[str, Any]:
        return self._get(f"/api/items/{self._ref(item)}")["item"]

    def history(self, item: str) -> list[dict[str, Any]]:
        return self._get(f"/api/items/{self._ref(item)}/history")["events"]

    def outcome(self, item: str, schema: str, version: int, event: int) -> str:
        return self._get(f"/api/items/{self._ref(item)}/outcome/{schema}/{version}/{event}")["document"]

    def viewpoint(self, item: str, schema: str, view: str = "last") -> dict[str, Any]:
        return self._get(f"/api/items/{self._ref(item)}/viewpoint/{schema}/{view}")

    def jobs(self, item: str | None = None, prefix: str | None = None) -> list[dict[str, Any]]:
        params: dict[str, Any] = {}
        if item:
            params["item"] = item
        if prefix:
            params["prefix"] = prefix
        return self._get("/api/jobs", params)["jobs"]

    def description(self, kind: str, name: str, version: str = "last") -> dict[str, Any]:
        return self._get(f"/api/descriptions/{kind}/{name}", {"version": version})

    def execute(self, item: str, activity: str, transition: str,
                outcome: str | None = None, view: str | None = None,
                request_id: str | None = None) -> dict[str, Any]:
        body: dict[str, Any] = {"activity": activity, "transition": transition}
        if outcome is not None:
            body["outcome"] = outcome
        if view is not None:
            body["view"] = view
        if request_id is not None:
            body["request_id"] = request_id
        return self._post(f"/api/items/{self._ref(item)}/execute", body)

    def step(self, item: str, step: str, payload: str,
             request_id: str | None = None) -> dict[str, Any]:
        body: dict[str, Any] = {"step": step, "payload": payload}
        if request_id is not None:
            body["request_id"] = request_id
        return self._post(f"/api/items/{self._ref(item)}/step", body)

    def instantiate(self, type_name: str, name: str, version: str = "last",
                    properties: dict[str, str] | None = None,
                    request_id: str | None = None) -> dict[str, Any]:
        body: dict[str, Any] = {"type": type_name, "name": name, "version": version}
        if properties:
            body["properties"] = properties
        if request_id is not None:
            body["request_id"] = request_id
        return self._post("/api/instantiate", body)

    def import_descriptions(self, file_bytes: bytes) -> list[dict[str, Any]]:
        return self._post("/api/descriptions/import", raw=file_bytes)["report"]

    def export_descriptions(self, type_name: str, version: str = "last") -> bytes:
        payload = self._get("/api/descriptions/export",
                            {"type": type_name, "version": version})
        return payload["file"].encode("utf-8")

    def apply(self, script: str, selector: str, script_version: str = "last",
              request_id: str | None = None) -> list[dict[str, Any]]:
        body: dict[str, Any] = {"script": script, "selector": selector,
                                "script_version": script_version}
        if request_id is not None:
            body["request_id"] = request_id
        return self._post("/api/apply", body)["report"]


__all__ = ["Client", "WireError", "KernelError"]
