"""
HopLink Mock SPARQL Server
Serves a fixture table over the SPARQL protocol so the HTTP client can be
exercised end to end without a real triple store.
"""

import json
import logging
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Optional
from urllib.parse import parse_qs, urlparse

from pipelines.sparql import MockSparqlEndpoint


class _SparqlHandler(BaseHTTPRequestHandler):
    server: "_FixtureHTTPServer"

    def log_message(self, format, *args):
        self.server.logger.debug(f"{self.address_string()} {format % args}")

    def _reply(self, status: int, body: str, content_type: str) -> None:
        payload = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", content_type)
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def _answer(self, query: Optional[str]) -> None:
        if not query:
            self._reply(400, "Missing 'query' parameter", "text/plain; charset=utf-8")
            return
        fixtures = self.server.fixtures
        fixtures._count()
        entry = fixtures.lookup(query)
        if entry.get("timeout"):
            self._reply(504, "Query timed out", "text/plain; charset=utf-8")
            return
        status = entry.get("status")
        if status is not None and int(status) >= 400:
            self._reply(int(status), str(entry.get("error", "")), "text/plain; charset=utf-8")
            return
        self._reply(200, json.dumps(entry), "application/sparql-results+json")

    def do_GET(self):
        params = parse_qs(urlparse(self.path).query)
        self._answer(params.get("query", [None])[0])

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = self.rfile.read(length).decode("utf-8")
        content_type = self.headers.get("Content-Type", "")
        if content_type.startswith("application/sparql-query"):
            self._answer(body)
        else:
            self._answer(parse_qs(body).get("query", [None])[0])


class _FixtureHTTPServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, fixtures: MockSparqlEndpoint, logger: logging.Logger):
        self.fixtures = fixtures
        self.logger = logger
        super().__init__(address, _SparqlHandler)


class MockSparqlServer:
    """HTTP front for a MockSparqlEndpoint fixture table"""

    def __init__(self, fixtures: MockSparqlEndpoint, host: str = "127.0.0.1", port: int = 0):
        self.fixtures = fixtures
        self.host = host
        self.port = port
        self.httpd: Optional[_FixtureHTTPServer] = None
        self._thread: Optional[threading.Thread] = None
        self.running = False
        self.logger = logging.getLogger(__name__)

    @property
    def url(self) -> str:
        return f"http://{self.host}:{self.port}/sparql"

    def _bind(self) -> None:
        self.httpd = _FixtureHTTPServer((self.host, self.port), self.fixtures, self.logger)
        # port 0 asks the OS for a free one
        self.port = self.httpd.server_address[1]
        self.running = True
        self.logger.info(f"Mock SPARQL server listening on {self.url} ({len(self.fixtures.table)} fixtures)")

    def start(self) -> None:
        """Serve until stop() is called (blocking)"""
        self._bind()
        try:
            self.httpd.serve_forever()
        finally:
            self.running = False

    def start_background(self) -> str:
        """Serve on a daemon thread; returns the endpoint URL"""
        self._bind()
        self._thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self._thread.start()
        return self.url

    def stop(self) -> None:
        if self.httpd is None:
            return
        if self._thread is not None:
            self.httpd.shutdown()
            self._thread.join(timeout=5)
            self._thread = None
        self.httpd.server_close()
        self.httpd = None
        self.running = False
        self.logger.info("Mock SPARQL server stopped")
