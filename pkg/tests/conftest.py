"""Shared fixtures: a scripted mock model server and the acceptance summary."""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

_CHUNK = re.compile(r"\s*\S+")


class MockModelServer:
    """Scripted HTTP server speaking the completions/embeddings wire shape.

    Tests preload exact responses: completions keyed by prompt, scoring
    responses keyed by the concatenated prompt+continuation text, and
    embeddings keyed by input text. ``fail_first[route]`` makes the next N
    requests to that route return HTTP 500 (for retry tests);
    ``raw_response[route]`` short-circuits with an arbitrary body.
    """

    def __init__(self):
        self.completions: dict[tuple[str | None, str], str] = {}
        self.scoring: dict[tuple[str | None, str], dict] = {}
        self.embeddings: dict[str, list[float]] = {}
        self.fail_first: dict[str, int] = {}
        self.raw_response: dict[str, dict] = {}
        self.requests: list[tuple[str, dict]] = []
        self._lock = threading.Lock()
        self._httpd: ThreadingHTTPServer | None = None
        self._thread: threading.Thread | None = None

    # -- scripting helpers ----------------------------------------------

    def script_completion(self, prompt: str, text: str, model: str | None = None):
        self.completions[(model, prompt)] = text

    def script_scoring(
        self,
        prompt: str,
        continuation: str,
        logprobs: list[float],
        model: str | None = None,
    ):
        """Store an echo-mode response with the prompt unscored.

        The continuation is chunked into one token per logprob (leading
        whitespace attached), mimicking how a real tokenizer's offsets fall.
        """
        chunks = _CHUNK.findall(continuation)
        assert len(chunks) == len(logprobs), (
            f"{len(chunks)} continuation chunks vs {len(logprobs)} logprobs"
        )
        offsets = [0]
        tokens = [prompt]
        position = len(prompt)
        for chunk in chunks:
            offsets.append(position)
            tokens.append(chunk)
            position += len(chunk)
        self.scoring[(model, prompt + continuation)] = {
            "tokens": tokens,
            "token_logprobs": [None] + list(logprobs),
            "text_offset": offsets,
        }

    def script_embedding(self, text: str, vector: list[float]):
        self.embeddings[text] = list(vector)

    def _lookup(self, table: dict, model: str, key: str):
        hit = table.get((model, key))
        return hit if hit is not None else table.get((None, key))

    # -- lifecycle --------------------------------------------------------

    def start(self):
        server = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length) or b"{}")
                route = self.path
                with server._lock:
                    server.requests.append((route, payload))
                    remaining = server.fail_first.get(route, 0)
                    if remaining > 0:
                        server.fail_first[route] = remaining - 1
                        self._reply(500, {"error": "scripted failure"})
                        return
                if route in server.raw_response:
                    self._reply(200, server.raw_response[route])
                    return
                if route.endswith("/embeddings"):
                    texts = payload.get("input") or []
                    data = []
                    for text in texts:
                        if text not in server.embeddings:
                            self._reply(400, {"error": f"no embedding scripted for {text!r}"})
                            return
                        data.append({"embedding": server.embeddings[text]})
                    self._reply(200, {"data": data})
                    return
                if route.endswith("/completions"):
                    prompt = payload.get("prompt", "")
                    model = payload.get("model", "")
                    if payload.get("echo") and payload.get("max_tokens") == 0:
                        script = server._lookup(server.scoring, model, prompt)
                        if script is None:
                            self._reply(400, {"error": "no scoring scripted"})
                            return
                        self._reply(
                            200,
                            {"choices": [{"text": prompt, "logprobs": script}]},
                        )
                        return
                    text = server._lookup(server.completions, model, prompt)
                    if text is None:
                        self._reply(400, {"error": "no completion scripted"})
                        return
                    self._reply(
                        200,
                        {
                            "choices": [{"text": text}],
                            "usage": {"completion_tokens": len(text.split())},
                        },
                    )
                    return
                self._reply(404, {"error": f"unknown route {route}"})

            def _reply(self, status: int, body: dict):
                encoded = json.dumps(body).encode("utf-8")
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(encoded)))
                self.end_headers()
                self.wfile.write(encoded)

        self._httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self._thread = threading.Thread(target=self._httpd.serve_forever, daemon=True)
        self._thread.start()

    @property
    def url(self) -> str:
        assert self._httpd is not None
        return f"http://127.0.0.1:{self._httpd.server_address[1]}/v1"

    def stop(self):
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)


@pytest.fixture
def mock_server():
    server = MockModelServer()
    server.start()
    yield server
    server.stop()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One PASS/FAIL line per acceptance criterion at the end of the run."""
    lines = []
    for status, label in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for report in terminalreporter.stats.get(status, []):
            if "test_acceptance" not in report.nodeid:
                continue
            name = report.nodeid.split("::")[-1]
            lines.append((name, f"{label}  {name}"))
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
