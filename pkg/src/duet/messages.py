"""Chat message types and the append-only transcript.

A transcript line in ``transcript.jsonl`` is one JSON object per message::

    {"role": "assistant", "content": "...",
     "tool_calls": [{"id": "call_1", "name": "simulation", "arguments": {...}}]}
    {"role": "tool", "tool_call_id": "call_1", "content": "..."}

Keys with empty values are omitted and keys are sorted, so a transcript has
exactly one byte representation.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

from .errors import InvalidInput, ProtocolError

ROLES = ("system", "user", "assistant", "tool")


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class ToolInvocation:
    id: str
    tool_name: str
    arguments: Mapping[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.tool_name, "arguments": dict(self.arguments)}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ToolInvocation":
        try:
            return cls(id=str(d["id"]), tool_name=str(d["name"]), arguments=dict(d.get("arguments") or {}))
        except KeyError as exc:
            raise ProtocolError(f"tool call missing field {exc.args[0]!r}: {d!r}") from None


@dataclass(frozen=True)
class ToolDescriptor:
    """Name, description and JSON-schema parameters of a callable tool."""

    name: str
    description: str
    parameter_schema: Mapping[str, Any] = field(
        default_factory=lambda: {"type": "object", "properties": {}, "required": []}
    )

    @property
    def required(self) -> tuple[str, ...]:
        return tuple(self.parameter_schema.get("required", ()))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "description": self.description,
            "parameters": json.loads(json.dumps(self.parameter_schema)),
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ToolDescriptor":
        return cls(name=d["name"], description=d.get("description", ""), parameter_schema=d.get("parameters", {}))


@dataclass(frozen=True)
class ToolOutcome:
    invocation_id: str
    content: str
    is_error: bool = False
    duration_ms: int = 0


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str = ""
    tool_invocations: tuple[ToolInvocation, ...] = ()
    tool_outcome_for: str | None = None

    def __post_init__(self):
        if self.role not in ROLES:
            raise InvalidInput(f"unknown role {self.role!r}")
        if not isinstance(self.tool_invocations, tuple):
            object.__setattr__(self, "tool_invocations", tuple(self.tool_invocations))
        if self.tool_invocations and self.role != "assistant":
            raise InvalidInput("only assistant messages carry tool invocations")
        if (self.tool_outcome_for is None) != (self.role != "tool"):
            raise InvalidInput("tool messages, and only tool messages, reference an invocation id")
        if not self.content and not self.tool_invocations:
            raise InvalidInput(f"{self.role} message has neither content nor tool invocations")

    @classmethod
    def system(cls, content: str) -> "ChatMessage":
        return cls("system", content)

    @classmethod
    def user(cls, content: str) -> "ChatMessage":
        return cls("user", content)

    @classmethod
    def assistant(cls, content: str = "", tool_invocations: Iterable[ToolInvocation] = ()) -> "ChatMessage":
        return cls("assistant", content, tuple(tool_invocations))

    @classmethod
    def tool(cls, invocation_id: str, content: str) -> "ChatMessage":
        return cls("tool", content, (), invocation_id)

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"role": self.role}
        if self.content:
            d["content"] = self.content
        if self.tool_invocations:
            d["tool_calls"] = [inv.to_dict() for inv in self.tool_invocations]
        if self.tool_outcome_for is not None:
            d["tool_call_id"] = self.tool_outcome_for
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ChatMessage":
        if "role" not in d:
            raise ProtocolError(f"message missing 'role': {d!r}")
        calls = tuple(ToolInvocation.from_dict(c) for c in d.get("tool_calls") or ())
        return cls(d["role"], d.get("content") or "", calls, d.get("tool_call_id"))

    def to_json(self) -> str:
        return canonical_json(self.to_dict())

    def digest(self) -> str:
        return sha256_text(self.to_json())


class Transcript:
    """Append-only message history, optionally mirrored line-by-line to disk."""

    def __init__(self, messages: Iterable[ChatMessage] = (), path: str | Path | None = None):
        self._messages: list[ChatMessage] = []
        self._invocation_ids: set[str] = set()
        self.path = Path(path) if path is not None else None
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("", encoding="utf-8")
        for m in messages:
            self.append(m)

    def append(self, message: ChatMessage) -> None:
        if message.role == "tool" and message.tool_outcome_for not in self._invocation_ids:
            raise InvalidInput(
                f"tool message references unknown invocation {message.tool_outcome_for!r}"
            )
        self._messages.append(message)
        self._invocation_ids.update(inv.id for inv in message.tool_invocations)
        if self.path is not None:
            with self.path.open("a", encoding="utf-8") as fh:
                fh.write(message.to_json() + "\n")

    def extend(self, messages: Iterable[ChatMessage]) -> None:
        for m in messages:
            self.append(m)

    @property
    def messages(self) -> tuple[ChatMessage, ...]:
        return tuple(self._messages)

    def __len__(self) -> int:
        return len(self._messages)

    def __iter__(self) -> Iterator[ChatMessage]:
        return iter(tuple(self._messages))

    def __getitem__(self, i):
        return self._messages[i]

    def tool_outcomes(self) -> list[ChatMessage]:
        return [m for m in self._messages if m.role == "tool"]

    def invocations(self) -> list[ToolInvocation]:
        return [inv for m in self._messages for inv in m.tool_invocations]

    def to_jsonl(self) -> str:
        return "".join(m.to_json() + "\n" for m in self._messages)

    def digest(self) -> str:
        return sha256_text(self.to_jsonl())

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_jsonl(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Transcript":
        return cls.from_jsonl(Path(path).read_text(encoding="utf-8"))

    @classmethod
    def from_jsonl(cls, text: str) -> "Transcript":
        msgs = []
        for lineno, line in enumerate(text.split("\n"), 1):
            if not line.strip():
                continue
            try:
                msgs.append(ChatMessage.from_dict(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise ProtocolError(f"transcript line {lineno}: {exc}") from None
        return cls(msgs)


def check_transcript(messages: Iterable[ChatMessage]) -> list[str]:
    """Return a list of invariant violations (empty when the history is sound)."""
    problems = []
    seen: set[str] = set()
    answered: set[str] = set()
    for i, m in enumerate(messages):
        if m.role == "tool":
            if m.tool_outcome_for not in seen:
                problems.append(f"message {i}: outcome for unseen invocation {m.tool_outcome_for!r}")
            answered.add(m.tool_outcome_for)
        if m.role == "assistant" and not m.content and not m.tool_invocations:
            problems.append(f"message {i}: empty assistant message")
        for inv in m.tool_invocations:
            if inv.id in seen:
                problems.append(f"message {i}: duplicate invocation id {inv.id!r}")
            seen.add(inv.id)
    for missing in sorted(seen - answered):
        problems.append(f"invocation {missing!r} has no outcome")
    return problems
