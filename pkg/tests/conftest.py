from __future__ import annotations

import hashlib
import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from zonescore.llm_analysis import RuleBasedLlm


class StubState:
    """Shared knobs and counters for the stub embedding/completion service."""

    def __init__(self, dimension: int = 32):
        self.dimension = dimension
        self.fail_next = 0
        self.fail_status = 503
        self.embed_requests: list[list[str]] = []
        self.prompts: list[str] = []
        self.llm = RuleBasedLlm()
        self.wrong_dimension = False
        self.lock = threading.Lock()

    def vector(self, text: str) -> list[float]:
        seed = int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")
        dim = self.dimension + (1 if self.wrong_dimension else 0)
        return np.random.default_rng(seed).normal(size=dim).round(12).tolist()


def _handler(state: StubState):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, *args):
            pass

        def _send(self, status: int, body: dict | None = None):
            payload = json.dumps(body or {}).encode()
            self.send_response(status)
            self.send_header("Content-Type", "application/json")
            self.send_header("Content-Length", str(len(payload)))
            self.end_headers()
            self.wfile.write(payload)

        def do_POST(self):
            data = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
            with state.lock:
                if state.fail_next > 0:
                    state.fail_next -= 1
                    self._send(state.fail_status, {"error": "try again"})
                    return
            if self.path == "/embed":
                with state.lock:
                    state.embed_requests.append(list(data["texts"]))
                self._send(200, {"embeddings": [state.vector(t) for t in data["texts"]]})
            elif self.path == "/complete":
                assert data.get("temperature") == 0
                with state.lock:
                    state.prompts.append(data["prompt"])
                self._send(200, {"text": state.llm.complete(data["prompt"])})
            else:
                self._send(404)

    return Handler


@pytest.fixture
def stub_service():
    state = StubState()
    server = ThreadingHTTPServer(("127.0.0.1", 0), _handler(state))
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    state.url = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        yield state
    finally:
        server.shutdown()
        server.server_close()


@pytest.fixture(scope="session")
def fixture_root(tmp_path_factory):
    from zonescore.fixture import write_fixture

    return write_fixture(tmp_path_factory.mktemp("fixture"))


ACCEPTANCE_LINES: list[tuple[int, str]] = []


@pytest.fixture
def acceptance():
    """Collects one verdict line per acceptance criterion for the terminal summary."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
