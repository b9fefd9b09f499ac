"""LLM client abstraction: a scripted backend for tests and an HTTP chat backend."""

from __future__ import annotations

import json
import math
import os
import re
import threading
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass
from pathlib import Path

from .errors import InputError, NoScriptMatch, TransportError

ROLES = ("reasoning", "fast")

# USD per million tokens; chosen so a typical alert lands near $0.07.
DEFAULT_PROMPT_PRICE = 0.80
DEFAULT_RESPONSE_PRICE = 2.25


@dataclass(frozen=True)
class LlmRequest:
    role: str
    user: str
    system: str = ""
    temperature: float = 0.0
    max_response_bytes: int = 32_768

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"unknown role {self.role!r}")
        if not self.user:
            raise ValueError("user prompt must be non-empty")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass
class LlmUsage:
    prompt_tokens: int = 0
    response_tokens: int = 0
    calls: int = 0

    def cost(self, prompt_price: float = DEFAULT_PROMPT_PRICE,
             response_price: float = DEFAULT_RESPONSE_PRICE) -> float:
        return (self.prompt_tokens * prompt_price + self.response_tokens * response_price) / 1e6

    def to_json(self) -> dict:
        return asdict(self)


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text.encode("utf-8")) / 4)


class LlmClient:
    """Base class; subclasses implement ``_complete``. Usage counters are thread-safe."""

    def __init__(self):
        self._usage = LlmUsage()
        self._lock = threading.Lock()
        self.history: list[tuple[str, str]] = []

    def complete(self, req: LlmRequest) -> str:
        text, prompt_tokens, response_tokens = self._complete(req)
        with self._lock:
            self._usage.prompt_tokens += prompt_tokens
            self._usage.response_tokens += response_tokens
            self._usage.calls += 1
            self.history.append((req.role, req.user))
        return text

    def usage(self) -> LlmUsage:
        with self._lock:
            return LlmUsage(**asdict(self._usage))

    def _complete(self, req: LlmRequest) -> tuple[str, int, int]:
        raise NotImplementedError


@dataclass(frozen=True)
class ScriptRule:
    match: str
    response: str
    regex: bool = False
    role: str = "any"

    def __post_init__(self):
        if self.role not in ROLES + ("any",):
            raise ValueError(f"unknown role filter {self.role!r}")
        if self.regex:
            object.__setattr__(self, "_pattern", re.compile(self.match, re.DOTALL))

    def applies(self, req: LlmRequest) -> bool:
        if self.role != "any" and self.role != req.role:
            return False
        if self.regex:
            return self._pattern.match(req.user) is not None
        return self.match in req.user


class ScriptedLlm(LlmClient):
    """Deterministic backend: the first rule whose matcher fits the user prompt wins.

    Regex rules are anchored at the start of the prompt (``re.match``) with DOTALL.
    """

    def __init__(self, rules: list[ScriptRule] | None = None):
        super().__init__()
        self.rules = list(rules or [])

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedLlm":
        try:
            doc = json.loads(Path(path).read_text())
        except OSError as exc:
            raise InputError(f"cannot read scenario file {path}: {exc}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"scenario file {path} is not JSON: {exc}") from None
        if not isinstance(doc, list):
            raise InputError("scenario file must be a JSON list of rules")
        try:
            rules = [
                ScriptRule(
                    match=str(r["match"]),
                    response=str(r["response"]),
                    regex=bool(r.get("regex", False)),
                    role=str(r.get("role", "any")),
                )
                for r in doc
            ]
        except (KeyError, TypeError, ValueError, re.error) as exc:
            raise InputError(f"bad scenario rule in {path}: {exc}") from None
        return cls(rules)

    def _complete(self, req: LlmRequest) -> tuple[str, int, int]:
        for rule in self.rules:
            if rule.applies(req):
                return (
                    rule.response,
                    estimate_tokens(req.system + req.user),
                    estimate_tokens(rule.response),
                )
        head = req.user[:120].replace("\n", " ")
        raise NoScriptMatch(f"no scripted rule matches {req.role} prompt: {head!r}...")


class HttpLlm(LlmClient):
    """OpenAI-compatible chat-completions backend."""

    def __init__(self, url: str, models: dict[str, str], api_key: str | None = None,
                 timeout: float = 120.0):
        super().__init__()
        self.url = url
        self.models = models
        self.api_key = api_key
        self.timeout = timeout

    @classmethod
    def from_env(cls) -> "HttpLlm":
        url = os.environ.get("ALERTPILOT_LLM_URL")
        if not url:
            raise InputError("ALERTPILOT_LLM_URL is not set (or pass --mock-scenarios)")
        reasoning = os.environ.get("ALERTPILOT_LLM_MODEL_REASONING", "")
        fast = os.environ.get("ALERTPILOT_LLM_MODEL_FAST", reasoning)
        return cls(url, {"reasoning": reasoning, "fast": fast}, os.environ.get("ALERTPILOT_LLM_KEY"))

    def _complete(self, req: LlmRequest) -> tuple[str, int, int]:
        messages = []
        if req.system:
            messages.append({"role": "system", "content": req.system})
        messages.append({"role": "user", "content": req.user})
        body = json.dumps({
            "model": self.models[req.role],
            "messages": messages,
            "temperature": req.temperature,
        }).encode()
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        http_req = urllib.request.Request(self.url, data=body, headers=headers, method="POST")
        try:
            with urllib.request.urlopen(http_req, timeout=self.timeout) as resp:
                payload = json.loads(resp.read())
        except (urllib.error.URLError, OSError, json.JSONDecodeError) as exc:
            raise TransportError(f"chat completion failed: {exc}") from None
        try:
            text = payload["choices"][0]["message"]["content"] or ""
        except (KeyError, IndexError, TypeError):
            raise TransportError(f"malformed chat completion payload: {str(payload)[:200]}") from None
        text = text.encode()[: req.max_response_bytes].decode("utf-8", "ignore")
        usage = payload.get("usage") or {}
        return (
            text,
            int(usage.get("prompt_tokens", estimate_tokens(req.system + req.user))),
            int(usage.get("completion_tokens", estimate_tokens(text))),
        )


_FENCE = re.compile(r"```([A-Za-z0-9_-]*)[ \t]*\n(.*?)```", re.DOTALL)


def fenced_blocks(text: str) -> list[tuple[str, str]]:
    """All ```lang ... ``` blocks as (lang, body) pairs, in order."""
    return [(m.group(1).lower(), m.group(2)) for m in _FENCE.finditer(text)]


def extract_json_block(text: str) -> dict | None:
    """First fenced block that holds a JSON object; prose outside blocks is ignored."""
    for lang, body in fenced_blocks(text):
        if lang not in ("", "json"):
            continue
        try:
            doc = json.loads(body)
        except json.JSONDecodeError:
            continue
        if isinstance(doc, dict):
            return doc
    return None
