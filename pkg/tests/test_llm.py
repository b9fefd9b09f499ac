import json
import threading
from concurrent.futures import ThreadPoolExecutor
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from alertpilot.errors import InputError, NoScriptMatch, TransportError
from alertpilot.llm import (
    HttpLlm,
    LlmRequest,
    LlmUsage,
    ScriptedLlm,
    ScriptRule,
    estimate_tokens,
    extract_json_block,
    fenced_blocks,
)


def test_substring_rule():
    llm = ScriptedLlm([ScriptRule("gateway_id", "```dsl\nWHERE a = \"1\"\n```")])
    assert "WHERE" in llm.complete(LlmRequest("reasoning", "filter by gateway_id please"))


def test_no_match_raises():
    llm = ScriptedLlm([ScriptRule("gateway_id", "x")])
    with pytest.raises(NoScriptMatch):
        llm.complete(LlmRequest("reasoning", "something else"))


def test_identical_requests_are_deterministic_and_counted():
    llm = ScriptedLlm([ScriptRule("q", "answer")])
    req = LlmRequest("fast", "q?")
    assert llm.complete(req) == llm.complete(req) == "answer"
    assert llm.usage().calls == 2


def test_first_match_wins_and_role_filter():
    llm = ScriptedLlm([
        ScriptRule("x", "fast-only", role="fast"),
        ScriptRule("x", "any-role"),
        ScriptRule("x", "never"),
    ])
    assert llm.complete(LlmRequest("reasoning", "x")) == "any-role"
    assert llm.complete(LlmRequest("fast", "x")) == "fast-only"


def test_regex_rules_are_anchored():
    llm = ScriptedLlm([ScriptRule(r"# Task.*code", "hit", regex=True)])
    assert llm.complete(LlmRequest("reasoning", "# Task\nmulti-line\ncode")) == "hit"
    with pytest.raises(NoScriptMatch):
        llm.complete(LlmRequest("reasoning", "preamble # Task code"))


def test_fresh_usage_is_zero():
    assert ScriptedLlm([]).usage() == LlmUsage(0, 0, 0)


def test_mock_token_estimate():
    llm = ScriptedLlm([ScriptRule("a", "b" * 10)])
    llm.complete(LlmRequest("reasoning", "a" * 400))
    u = llm.usage()
    assert u.prompt_tokens == 100 and u.response_tokens == 3 and u.calls == 1


def test_estimate_tokens_counts_bytes():
    assert estimate_tokens("") == 0
    assert estimate_tokens("abcde") == 2
    assert estimate_tokens("é") == 1  # 2 bytes


def test_usage_is_monotone_and_a_copy():
    llm = ScriptedLlm([ScriptRule("", "ok")])
    seen = []
    for n in range(1, 6):
        llm.complete(LlmRequest("fast", "p" * n))
        seen.append(llm.usage())
    for a, b in zip(seen, seen[1:]):
        assert b.calls > a.calls and b.prompt_tokens >= a.prompt_tokens and b.response_tokens >= a.response_tokens
    snapshot = llm.usage()
    snapshot.calls = 0
    assert llm.usage().calls == 5


def test_concurrent_counting():
    llm = ScriptedLlm([ScriptRule("", "ok")])
    with ThreadPoolExecutor(8) as pool:
        list(pool.map(lambda _: llm.complete(LlmRequest("fast", "abcd")), range(400)))
    u = llm.usage()
    assert u.calls == 400 and u.prompt_tokens == 400


def test_cost():
    u = LlmUsage(prompt_tokens=69_730, response_tokens=8_080, calls=5)
    assert u.cost() == pytest.approx(0.0740, abs=5e-4)
    assert u.cost(1.0, 0.0) == pytest.approx(0.06973)


def test_request_validation():
    with pytest.raises(ValueError):
        LlmRequest("creative", "x")
    with pytest.raises(ValueError):
        LlmRequest("fast", "")
    with pytest.raises(ValueError):
        LlmRequest("fast", "x", temperature=-1)
    with pytest.raises(ValueError):
        ScriptRule("x", "y", role="slow")


def test_scenario_file(tmp_path):
    path = tmp_path / "s.json"
    path.write_text(json.dumps([
        {"match": "^hello", "regex": True, "role": "fast", "response": "R1"},
        {"match": "bye", "response": "R2"},
    ]))
    llm = ScriptedLlm.from_file(path)
    assert llm.complete(LlmRequest("fast", "hello there")) == "R1"
    assert llm.complete(LlmRequest("reasoning", "goodbye")) == "R2"


@pytest.mark.parametrize("content", ["not json", "{}", '[{"response": "x"}]', '[{"match": "(", "regex": true, "response": ""}]'])
def test_bad_scenario_file(tmp_path, content):
    path = tmp_path / "s.json"
    path.write_text(content)
    with pytest.raises(InputError):
        ScriptedLlm.from_file(path)


def test_fenced_blocks_and_json_extraction():
    text = 'prose {"a": 1}\n```dsl\nWHERE x = "1"\n```\nmore\n```json\n[1]\n```\n```JSON\n{"ok": true}\n```'
    assert [lang for lang, _ in fenced_blocks(text)] == ["dsl", "json", "json"]
    assert extract_json_block(text) == {"ok": True}
    assert extract_json_block("no blocks {\"a\": 1}") is None


# --------------------------------------------------------------------------
# HTTP backend against a local stub server


class _Handler(BaseHTTPRequestHandler):
    seen: list = []

    def do_POST(self):  # noqa: N802
        body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
        _Handler.seen.append((body, self.headers.get("Authorization")))
        reply = {
            "choices": [{"message": {"content": f"model={body['model']}"}}],
            "usage": {"prompt_tokens": 11, "completion_tokens": 7},
        }
        data = json.dumps(reply).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    server = HTTPServer(("127.0.0.1", 0), _Handler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    _Handler.seen = []
    yield f"http://127.0.0.1:{server.server_port}/v1/chat/completions"
    server.shutdown()


def test_http_backend(stub_server, monkeypatch):
    monkeypatch.setenv("ALERTPILOT_LLM_URL", stub_server)
    monkeypatch.setenv("ALERTPILOT_LLM_MODEL_REASONING", "big")
    monkeypatch.setenv("ALERTPILOT_LLM_MODEL_FAST", "small")
    monkeypatch.setenv("ALERTPILOT_LLM_KEY", "k")
    llm = HttpLlm.from_env()
    assert llm.complete(LlmRequest("reasoning", "hi", system="sys")) == "model=big"
    assert llm.complete(LlmRequest("fast", "hi")) == "model=small"
    body, auth = _Handler.seen[0]
    assert auth == "Bearer k"
    assert body["messages"] == [{"role": "system", "content": "sys"}, {"role": "user", "content": "hi"}]
    assert llm.usage() == LlmUsage(22, 14, 2)


def test_http_backend_transport_error():
    llm = HttpLlm("http://127.0.0.1:9/none", {"reasoning": "m", "fast": "m"}, timeout=2)
    with pytest.raises(TransportError):
        llm.complete(LlmRequest("fast", "hi"))


def test_http_backend_needs_url(monkeypatch):
    monkeypatch.delenv("ALERTPILOT_LLM_URL", raising=False)
    with pytest.raises(InputError):
        HttpLlm.from_env()
