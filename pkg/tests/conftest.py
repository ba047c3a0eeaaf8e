from __future__ import annotations

import json
import sys
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bladediag.dataset import synthesize_dataset  # noqa: E402


@pytest.fixture
def small_dataset(tmp_path):
    return synthesize_dataset(tmp_path / "imgs", 3, seed=11)


class _Handler(BaseHTTPRequestHandler):
    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length) or b"null")
        server = self.server
        server.requests.append({"body": body, "headers": dict(self.headers)})
        status, payload = server.responder(body, len(server.requests))
        data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def http_server():
    """Local JSON endpoint; set ``.responder(body, n) -> (status, payload)``."""
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.requests = []
    server.responder = lambda body, n: (200, {})
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    server.url = f"http://127.0.0.1:{server.server_address[1]}/"
    yield server
    server.shutdown()
    server.server_close()


# criterion name -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
