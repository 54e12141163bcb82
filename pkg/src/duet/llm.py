"""Completion backends: OpenAI-compatible HTTP client and scripted replay."""

from __future__ import annotations

import json
import logging
import os
import random
import re
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx

from .errors import ConfigError, InvalidInput, ProtocolError, ReplayDivergence, ScriptExhausted, TransportError
from .messages import ChatMessage, ToolDescriptor, ToolInvocation, canonical_json

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    endpoint_url: str = "https://api.openai.com/v1"
    model_name: str = "gpt-5"
    api_key_env_var_name: str = "OPENAI_API_KEY"
    request_timeout: float = 300.0
    max_retries: int = 3
    temperature: float = 0.0
    backoff_base: float = 1.0

    def __post_init__(self):
        if self.max_retries < 0:
            raise ConfigError("max_retries must be >= 0")
        if self.request_timeout <= 0:
            raise ConfigError("request_timeout must be > 0")


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    tool_descriptors: tuple[ToolDescriptor, ...] = ()
    config: ModelConfig | None = None

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "tool_descriptors", tuple(self.tool_descriptors))
        if not self.messages:
            raise InvalidInput("a chat request needs at least one message")
        names = [d.name for d in self.tool_descriptors]
        if len(names) != len(set(names)):
            raise InvalidInput(f"duplicate tool names in request: {names}")


class CompletionBackend(Protocol):
    def complete(self, request: ChatRequest) -> ChatMessage: ...


# -- wire format ------------------------------------------------------------

def message_to_wire(m: ChatMessage) -> dict:
    d: dict[str, Any] = {"role": m.role}
    if m.role == "assistant" and m.tool_invocations:
        d["content"] = m.content or None
        d["tool_calls"] = [
            {
                "id": inv.id,
                "type": "function",
                "function": {"name": inv.tool_name, "arguments": canonical_json(dict(inv.arguments))},
            }
            for inv in m.tool_invocations
        ]
    else:
        d["content"] = m.content
    if m.role == "tool":
        d["tool_call_id"] = m.tool_outcome_for
    return d


def parse_tool_arguments(raw: Any) -> dict:
    """Decode a provider's tool-argument string, tolerating common quirks."""
    if raw is None or raw == "":
        return {}
    if isinstance(raw, Mapping):
        return dict(raw)
    if not isinstance(raw, str):
        raise ProtocolError(f"tool arguments are neither text nor object: {raw!r}")
    text = raw.strip()
    fenced = re.match(r"^```(?:json)?\s*(.*?)\s*```$", text, re.S)
    if fenced:
        text = fenced.group(1)
    try:
        value = json.loads(text)
    except json.JSONDecodeError:
        try:
            value, _ = json.JSONDecoder().raw_decode(text)
        except json.JSONDecodeError:
            raise ProtocolError(f"unparseable tool arguments: {raw[:200]!r}") from None
    if isinstance(value, str):
        return parse_tool_arguments(value)
    if not isinstance(value, dict):
        raise ProtocolError(f"tool arguments must decode to an object: {raw[:200]!r}")
    return value


def message_from_wire(d: Mapping[str, Any]) -> ChatMessage:
    try:
        role = d["role"]
    except (KeyError, TypeError):
        raise ProtocolError(f"message without role: {str(d)[:200]}") from None
    calls = []
    for tc in d.get("tool_calls") or ():
        try:
            fn = tc["function"]
            calls.append(ToolInvocation(str(tc["id"]), fn["name"], parse_tool_arguments(fn.get("arguments"))))
        except (KeyError, TypeError):
            raise ProtocolError(f"malformed tool_call: {str(tc)[:200]}") from None
    content = d.get("content") or ""
    if isinstance(content, list):
        content = "".join(part.get("text", "") for part in content if isinstance(part, Mapping))
    try:
        return ChatMessage(role, content, tuple(calls), d.get("tool_call_id"))
    except InvalidInput as exc:
        raise ProtocolError(f"{exc}: {str(d)[:200]}") from None


def request_to_wire(request: ChatRequest) -> dict:
    cfg = request.config or ModelConfig()
    body: dict[str, Any] = {
        "model": cfg.model_name,
        "messages": [message_to_wire(m) for m in request.messages],
        "temperature": cfg.temperature,
    }
    if request.tool_descriptors:
        body["tools"] = [{"type": "function", "function": d.to_dict()} for d in request.tool_descriptors]
    return body


def request_from_wire(body: Mapping[str, Any], config: ModelConfig | None = None) -> ChatRequest:
    tools = tuple(ToolDescriptor.from_dict(t["function"]) for t in body.get("tools") or ())
    messages = tuple(message_from_wire(m) for m in body.get("messages") or ())
    return ChatRequest(messages, tools, config)


def response_from_wire(payload: Any) -> ChatMessage:
    try:
        msg = payload["choices"][0]["message"]
    except (KeyError, IndexError, TypeError):
        raise ProtocolError(f"no choices[0].message in payload: {str(payload)[:300]}") from None
    msg = dict(msg)
    msg.setdefault("role", "assistant")
    return message_from_wire(msg)


# -- HTTP backend -----------------------------------------------------------

_TRANSIENT_STATUS = {408, 409, 429, 500, 502, 503, 504}


class HTTPBackend:
    """Chat-completions client; the API key is read from the environment on first use."""

    def __init__(self, config: ModelConfig, environ: Mapping[str, str] | None = None,
                 client: httpx.Client | None = None, sleep=time.sleep):
        self.config = config
        self._environ = os.environ if environ is None else environ
        self._client = client
        self._sleep = sleep

    def _api_key(self) -> str:
        name = self.config.api_key_env_var_name
        key = self._environ.get(name)
        if not key:
            raise ConfigError(f"environment variable {name} is not set")
        return key

    def complete(self, request: ChatRequest) -> ChatMessage:
        if request.config is None:
            request = ChatRequest(request.messages, request.tool_descriptors, self.config)
        body = request_to_wire(request)
        headers = {"Authorization": f"Bearer {self._api_key()}"}
        url = self.config.endpoint_url.rstrip("/") + "/chat/completions"
        client = self._client or httpx.Client(timeout=self.config.request_timeout)
        last_error = ""
        try:
            for attempt in range(self.config.max_retries + 1):
                if attempt:
                    delay = self.config.backoff_base * 2 ** (attempt - 1)
                    self._sleep(delay * random.uniform(0.5, 1.0))
                try:
                    resp = client.post(url, json=body, headers=headers)
                except httpx.TransportError as exc:
                    last_error = f"{type(exc).__name__}: {exc}"
                    logger.warning("chat request failed (attempt %d): %s", attempt + 1, last_error)
                    continue
                if resp.status_code in _TRANSIENT_STATUS:
                    last_error = f"HTTP {resp.status_code}: {resp.text[:200]}"
                    logger.warning("chat request failed (attempt %d): %s", attempt + 1, last_error)
                    continue
                if resp.status_code >= 400:
                    raise TransportError(f"HTTP {resp.status_code}: {resp.text[:300]}")
                try:
                    payload = resp.json()
                except ValueError:
                    raise ProtocolError(f"response is not JSON: {resp.text[:300]!r}") from None
                return response_from_wire(payload)
        finally:
            if self._client is None:
                client.close()
        raise TransportError(f"giving up after {self.config.max_retries + 1} attempts: {last_error}")


# -- scripted backend -------------------------------------------------------

@dataclass(frozen=True)
class ScriptedResponse:
    response: ChatMessage
    expected_last_message_digest: str | None = None


@dataclass
class ScriptedBackend:
    """Releases pre-recorded responses strictly in order."""

    responses: list[ScriptedResponse] = field(default_factory=list)
    position: int = 0

    def complete(self, request: ChatRequest) -> ChatMessage:
        if self.position >= len(self.responses):
            raise ScriptExhausted(f"script exhausted after {len(self.responses)} responses")
        item = self.responses[self.position]
        if item.expected_last_message_digest is not None:
            actual = request.messages[-1].digest()
            if actual != item.expected_last_message_digest:
                raise ReplayDivergence(self.position, item.expected_last_message_digest, actual)
        self.position += 1
        return item.response

    @property
    def remaining(self) -> int:
        return len(self.responses) - self.position

    @classmethod
    def from_messages(cls, messages: Iterable[ChatMessage]) -> "ScriptedBackend":
        return cls([ScriptedResponse(m) for m in messages])

    @classmethod
    def from_jsonl(cls, text: str) -> "ScriptedBackend":
        items = []
        for lineno, line in enumerate(text.split("\n"), 1):
            if not line.strip():
                continue
            try:
                d = json.loads(line)
                items.append(ScriptedResponse(ChatMessage.from_dict(d["response"]), d.get("expected_last_message_digest")))
            except (json.JSONDecodeError, KeyError, InvalidInput) as exc:
                raise ProtocolError(f"fixture line {lineno}: {exc}") from None
        return cls(items)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))


def fixture_line(response: ChatMessage, request: ChatRequest | None = None, guard: bool = True) -> str:
    d: dict[str, Any] = {"response": response.to_dict()}
    if request is not None:
        d["request"] = [m.to_dict() for m in request.messages]
        if guard:
            d["expected_last_message_digest"] = request.messages[-1].digest()
    return canonical_json(d) + "\n"


def record(request: ChatRequest, response: ChatMessage, store: str | Path) -> None:
    """Append one request/response exchange to a replayable fixture file."""
    path = Path(store)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(fixture_line(response, request))


class RecordingBackend:
    """Wraps a backend and records every exchange to ``store``."""

    def __init__(self, inner: CompletionBackend, store: str | Path):
        self.inner = inner
        self.store = Path(store)
        self.store.parent.mkdir(parents=True, exist_ok=True)
        self.store.touch()

    def complete(self, request: ChatRequest) -> ChatMessage:
        response = self.inner.complete(request)
        record(request, response, self.store)
        return response


def write_script(responses: Sequence[ChatMessage], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(fixture_line(r) for r in responses), encoding="utf-8")
    return path
