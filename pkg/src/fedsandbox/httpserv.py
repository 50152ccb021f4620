"""Minimal JSON-over-HTTP routing on top of ``http.server``.

Every service in the package (data node, annotator tools, orchestrator
status API) is a :class:`App` served by a threading server.
"""

from __future__ import annotations

import json
import logging
import re
import threading
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Callable
from urllib.parse import parse_qs, urlsplit

log = logging.getLogger(__name__)


@dataclass
class Request:
    method: str
    path: str
    query: dict[str, str]
    body: bytes
    params: dict[str, str] = field(default_factory=dict)

    def json(self) -> Any:
        if not self.body:
            raise HTTPError(400, "Bad Request", "request body required")
        try:
            return json.loads(self.body.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise HTTPError(400, "Bad Request", f"malformed JSON: {exc}") from None

    def int_param(self, name: str, default: int, lo: int, hi: int | None = None) -> int:
        raw = self.query.get(name)
        if raw is None:
            return default
        try:
            value = int(raw)
        except ValueError:
            raise HTTPError(400, "Bad Request", f"{name} must be an integer") from None
        if value < lo or (hi is not None and value > hi):
            bound = f"{lo}..{hi}" if hi is not None else f">= {lo}"
            raise HTTPError(400, "Bad Request", f"{name} must be in {bound}")
        return value


@dataclass
class Response:
    status: int = 200
    body: Any = None
    headers: dict[str, str] = field(default_factory=dict)
    content_type: str = "application/json"

    def encode(self) -> bytes:
        if self.body is None:
            return b""
        if isinstance(self.body, bytes):
            return self.body
        if isinstance(self.body, str):
            return self.body.encode("utf-8")
        return json.dumps(self.body, ensure_ascii=False, sort_keys=True).encode("utf-8")


class HTTPError(Exception):
    def __init__(self, status: int, title: str, detail: str = ""):
        super().__init__(f"{status} {title}: {detail}")
        self.status, self.title, self.detail = status, title, detail

    def response(self) -> Response:
        return error_response(self.status, self.title, self.detail)


def error_response(status: int, title: str, detail: str = "") -> Response:
    return Response(status, {"status": status, "title": title, "detail": detail})


def redirect(location: str) -> Response:
    return Response(302, None, {"Location": location})


Handler = Callable[[Request], Response]


class App:
    def __init__(self, name: str) -> None:
        self.name = name
        self._routes: list[tuple[str, re.Pattern[str], Handler]] = []
        self.request_log: list[tuple[str, str]] = []
        self._log_lock = threading.Lock()

    def route(self, method: str, pattern: str) -> Callable[[Handler], Handler]:
        # "{name}" segments match one path component
        regex = re.compile("^" + re.sub(r"\{(\w+)\}", r"(?P<\1>[^/]+)", pattern) + "$")

        def deco(fn: Handler) -> Handler:
            self._routes.append((method, regex, fn))
            return fn

        return deco

    def dispatch(self, method: str, target: str, body: bytes) -> Response:
        parts = urlsplit(target)
        path = parts.path.rstrip("/") or "/"
        query = {k: v[-1] for k, v in parse_qs(parts.query).items()}
        with self._log_lock:
            self.request_log.append((method, path))
        allowed = False
        for m, regex, fn in self._routes:
            match = regex.match(path)
            if not match:
                continue
            if m != method:
                allowed = True
                continue
            req = Request(method, path, query, body, match.groupdict())
            try:
                return fn(req)
            except HTTPError as exc:
                return exc.response()
            except Exception as exc:  # noqa: BLE001
                log.exception("%s: unhandled error on %s %s", self.name, method, path)
                return error_response(500, "Internal Server Error", type(exc).__name__)
        if allowed:
            return error_response(405, "Method Not Allowed", f"{method} {path}")
        return error_response(404, "Not Found", f"no resource at {path}")


def _make_handler(app: App) -> type[BaseHTTPRequestHandler]:
    class _Handler(BaseHTTPRequestHandler):
        protocol_version = "HTTP/1.1"
        disable_nagle_algorithm = True  # headers and body go out in separate writes
        server_version = app.name

        def _handle(self) -> None:
            length = int(self.headers.get("Content-Length") or 0)
            body = self.rfile.read(length) if length else b""
            resp = app.dispatch(self.command, self.path, body)
            payload = resp.encode()
            self.send_response(resp.status)
            self.send_header("Content-Type", f"{resp.content_type}; charset=utf-8")
            for k, v in resp.headers.items():
                self.send_header(k, v)
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            if self.command != "HEAD":
                self.wfile.write(payload)

        do_GET = do_POST = do_DELETE = do_PUT = do_HEAD = _handle

        def log_message(self, format: str, *args: Any) -> None:
            log.debug("%s %s", app.name, format % args)

    return _Handler


class _Server(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True


class ServiceHandle:
    """A running server; ``url`` is the scheme://host:port root."""

    def __init__(self, app: App, host: str = "127.0.0.1", port: int = 0) -> None:
        self.app = app
        self.server = _Server((host, port), _make_handler(app))
        self.host, self.port = self.server.server_address[:2]
        self._thread: threading.Thread | None = None

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}"

    def start(self) -> "ServiceHandle":
        self._thread = threading.Thread(target=self.server.serve_forever, name=self.app.name, daemon=True)
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self.server.serve_forever()

    def stop(self) -> None:
        self.server.shutdown()
        self.server.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "ServiceHandle":
        return self.start() if self._thread is None else self

    def __exit__(self, *exc: Any) -> None:
        self.stop()


def serve(app: App, host: str = "127.0.0.1", port: int = 0) -> ServiceHandle:
    return ServiceHandle(app, host, port).start()
