import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest

from bibensemble.generation import GenerationConfig
from bibensemble.provider import CompletionRequest, ProviderProfile


@pytest.fixture
def profile():
    return ProviderProfile(
        name="gen", base_url="http://127.0.0.1:9/v1", model="test-model", api_key_env="TEST_API_KEY",
        supports_top_k=True, max_retries=3, timeout=5,
    )


@pytest.fixture
def request_():
    return CompletionRequest("sys", "write things", GenerationConfig(temperature=0.2, top_p=0.95, top_k=40), 64)


class StubServer:
    """Local chat-completions server driven by a responder callable.

    ``responder(payload) -> (status, body_dict_or_text)``; every payload is logged.
    """

    def __init__(self, responder):
        self.responder = responder
        self.requests = []
        self.headers = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                payload = json.loads(self.rfile.read(length))
                stub.requests.append((self.path, payload))
                stub.headers.append(dict(self.headers))
                status, body = stub.responder(payload)
                raw = body if isinstance(body, str) else json.dumps(body)
                data = raw.encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *args):
                pass

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)

    @property
    def base_url(self):
        return f"http://127.0.0.1:{self.server.server_address[1]}/v1"

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


def chat_body(text):
    return {"choices": [{"message": {"role": "assistant", "content": text}}], "usage": {"total_tokens": 3}}


@pytest.fixture
def stub_server():
    return StubServer


# -- acceptance summary ---------------------------------------------------------

_CRITERIA: dict[str, list[str]] = {}


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    if "criterion" not in props:
        return
    outcomes = _CRITERIA.setdefault(props["criterion"], [])
    if report.when == "call" or report.outcome == "failed":
        outcomes.append(report.outcome)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda n: int(n.split()[0])):
        outcomes = _CRITERIA[name]
        status = "PASS" if outcomes and all(o == "passed" for o in outcomes) else "FAIL"
        terminalreporter.write_line(f"{status}  criterion {name}")
