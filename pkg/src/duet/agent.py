"""The experimentation loop.

``do_experimentation`` seeds a conversation with the design and the
experiment, lets the model call tools until it calls ``EndExperimentation``
(or a limit is hit), then asks for a structured report whose conclusions are
checked against the tool outputs they cite.
"""

from __future__ import annotations

import json
import logging
import re
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence, Union

import jsonschema

from .errors import InvalidInput, ProtocolError, ReplayDivergence, ScriptExhausted, TransportError
from .llm import ChatRequest, CompletionBackend
from .messages import ChatMessage, ToolDescriptor, ToolInvocation, ToolOutcome, Transcript
from .prompts import load_prompt

logger = logging.getLogger(__name__)

END_TOOL = "EndExperimentation"
ENDED_BY = ("end_tool", "turn_limit", "wall_limit", "error")

# Backend failures that abort a run instead of crashing it.
LLM_FAILURES = (TransportError, ProtocolError, ScriptExhausted, ReplayDivergence)

DesignBundle = Union[str, Mapping[str, str], Sequence[tuple[str, str]]]


@dataclass(frozen=True)
class LoopLimits:
    max_turns: int = 10
    per_tool_timeout: float = 300.0
    max_wall_time: float = 1800.0

    def __post_init__(self):
        for name in ("max_turns", "per_tool_timeout", "max_wall_time"):
            if not getattr(self, name) > 0:
                raise InvalidInput(f"{name} must be > 0, got {getattr(self, name)!r}")


@dataclass(frozen=True)
class Truncation:
    head: int = 8192
    tail: int = 8192

    def apply(self, text: str) -> str:
        return truncate(text, self.head, self.tail)


def truncate(text: str, head: int = 8192, tail: int = 8192) -> str:
    """Keep the first ``head`` and last ``tail`` characters around an elision marker."""
    if len(text) <= head + tail:
        return text
    dropped = len(text) - head - tail
    return text[:head] + f"\n... [{dropped} characters elided] ...\n" + (text[-tail:] if tail else "")


class ToolFailure(Exception):
    """Raised by tool handlers for errors the model should see."""


@dataclass
class ToolContext:
    run_dir: Path
    artifact_dir: Path
    turn: int
    timeout: float


@dataclass(frozen=True)
class ToolReply:
    content: str
    is_error: bool = False


ToolHandler = Callable[[dict, ToolContext], Union[str, ToolReply]]


@dataclass(frozen=True)
class Tool:
    descriptor: ToolDescriptor
    handler: ToolHandler

    @property
    def name(self) -> str:
        return self.descriptor.name


def end_tool_descriptor() -> ToolDescriptor:
    return ToolDescriptor(
        END_TOOL,
        "Stop experimenting. Call this once your hypotheses have been tested.",
        {
            "type": "object",
            "properties": {"summary": {"type": "string", "description": "Short final summary."}},
            "required": [],
        },
    )


def _end_handler(args: dict, ctx: ToolContext) -> str:
    return "Experimentation ended."


def end_tool() -> Tool:
    return Tool(end_tool_descriptor(), _end_handler)


def make_registry(tools: Iterable[Tool], end_name: str | None = END_TOOL) -> dict[str, Tool]:
    registry: dict[str, Tool] = {}
    for t in tools:
        if t.name in registry:
            raise InvalidInput(f"duplicate tool name {t.name!r}")
        registry[t.name] = t
    if end_name == END_TOOL and END_TOOL not in registry:
        registry[END_TOOL] = end_tool()
    return registry


def _artifact_dir(run_dir: Path, turn: int, tool_name: str) -> Path:
    base = run_dir / "artifacts" / f"{turn}-{tool_name}"
    path, k = base, 1
    while path.exists():
        k += 1
        path = base.with_name(f"{base.name}-{k}")
    path.mkdir(parents=True)
    return path


def dispatch_tool(
    invocation: ToolInvocation,
    registry: Mapping[str, Tool],
    run_dir: str | Path,
    turn: int = 0,
    timeout: float = 300.0,
    truncation: Truncation = Truncation(),
) -> ToolOutcome:
    """Validate, run and archive one tool invocation; failures become error outcomes."""
    start = time.monotonic()
    run_dir = Path(run_dir)

    def outcome(text: str, is_error: bool) -> ToolOutcome:
        return ToolOutcome(invocation.id, truncation.apply(text) or "(no output)", is_error,
                           int((time.monotonic() - start) * 1000))

    tool = registry.get(invocation.tool_name)
    if tool is None:
        return outcome(
            f"error: unknown tool {invocation.tool_name!r}; available tools: {', '.join(sorted(registry))}",
            True,
        )
    try:
        jsonschema.validate(dict(invocation.arguments), dict(tool.descriptor.parameter_schema))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path)
        return outcome(f"error: invalid arguments for {tool.name}: {exc.message}" + (f" (at {where})" if where else ""), True)

    art = _artifact_dir(run_dir, turn, tool.name)
    (art / "arguments.json").write_text(json.dumps(dict(invocation.arguments), indent=2, sort_keys=True), encoding="utf-8")
    ctx = ToolContext(run_dir, art, turn, timeout)

    result: dict[str, Any] = {}

    def target():
        try:
            result["value"] = tool.handler(dict(invocation.arguments), ctx)
        except ToolFailure as exc:
            result["value"] = ToolReply(f"error: {exc}", True)
        except Exception as exc:  # tool bugs must not kill the loop
            logger.exception("tool %s crashed", tool.name)
            result["value"] = ToolReply(f"error: {tool.name} failed: {type(exc).__name__}: {exc}", True)

    worker = threading.Thread(target=target, name=f"tool-{tool.name}", daemon=True)
    worker.start()
    worker.join(timeout)
    if worker.is_alive():
        reply = ToolReply(f"error: {tool.name} timed out after {timeout:g} s", True)
    else:
        value = result["value"]
        reply = value if isinstance(value, ToolReply) else ToolReply(str(value))
    (art / "output.txt").write_text(reply.content, encoding="utf-8")
    out = outcome(reply.content, reply.is_error)
    (art / "outcome.json").write_text(
        json.dumps({"invocation_id": out.invocation_id, "is_error": out.is_error, "duration_ms": out.duration_ms}),
        encoding="utf-8",
    )
    return out


# -- seed messages ----------------------------------------------------------

def design_files(design: DesignBundle) -> list[tuple[str, str]]:
    if isinstance(design, str):
        return [("design.sv", design)] if design.strip() else []
    items = list(design.items()) if isinstance(design, Mapping) else [tuple(x) for x in design]
    return [(str(n), str(c)) for n, c in items if str(c).strip()]


def render_design(design: DesignBundle) -> str:
    files = design_files(design)
    if isinstance(design, str):
        return design
    return "\n\n".join(f"=== file: {name} ===\n{content.rstrip()}" for name, content in files)


def build_initial_messages(design: DesignBundle, experiment: str, system_prompt: str | None = None) -> list[ChatMessage]:
    if not design_files(design):
        raise InvalidInput("design bundle is empty")
    if not experiment.strip():
        raise InvalidInput("experiment description is empty")
    system = system_prompt if system_prompt is not None else load_prompt("experiment_system")
    user = load_prompt("experiment_task", design=render_design(design), experiment=experiment)
    return [ChatMessage.system(system), ChatMessage.user(user)]


# -- loop -------------------------------------------------------------------

@dataclass
class LoopResult:
    transcript: Transcript
    ended_by: str
    iterations: int
    llm_calls: int
    end_arguments: dict = field(default_factory=dict)
    error: str = ""


StopCheck = Callable[[ToolInvocation, ToolOutcome], bool]


def run_loop(
    transcript: Transcript,
    registry: Mapping[str, Tool],
    limits: LoopLimits,
    llm: CompletionBackend,
    run_dir: str | Path,
    *,
    end_name: str = END_TOOL,
    stop_after: StopCheck | None = None,
    truncation: Truncation = Truncation(),
    clock: Callable[[], float] = time.monotonic,
) -> LoopResult:
    """Iterate model -> tools -> model until the end tool, a stop condition or a limit.

    Performs at most ``limits.max_turns`` model calls.
    """
    if end_name not in registry:
        raise InvalidInput(f"registry lacks end tool {end_name!r}")
    run_dir = Path(run_dir)
    descriptors = tuple(t.descriptor for t in registry.values())
    start = clock()
    iterations = calls = 0
    for turn in range(1, limits.max_turns + 1):
        if clock() - start > limits.max_wall_time:
            return LoopResult(transcript, "wall_limit", iterations, calls)
        try:
            response = llm.complete(ChatRequest(transcript.messages, descriptors))
        except LLM_FAILURES as exc:
            logger.error("completion failed on turn %d: %s", turn, exc)
            return LoopResult(transcript, "error", iterations, calls, error=f"{type(exc).__name__}: {exc}")
        calls += 1
        if response.role != "assistant":
            response = ChatMessage.assistant(response.content, response.tool_invocations)
        transcript.append(response)
        if not response.tool_invocations:
            transcript.append(ChatMessage.user(load_prompt("continue")))
            continue
        ended, stopped, dispatched = False, False, False
        end_args: dict = {}
        for inv in response.tool_invocations:
            out = dispatch_tool(inv, registry, run_dir, turn, limits.per_tool_timeout, truncation)
            transcript.append(ChatMessage.tool(inv.id, out.content))
            if inv.tool_name == end_name and not out.is_error:
                ended, end_args = True, dict(inv.arguments)
            elif inv.tool_name in registry:
                dispatched = True
                if stop_after is not None and stop_after(inv, out):
                    stopped = True
        iterations += dispatched
        if ended:
            return LoopResult(transcript, "end_tool", iterations, calls, end_args)
        if stopped:
            return LoopResult(transcript, "stopped", iterations, calls)
    return LoopResult(transcript, "turn_limit", iterations, calls)


# -- report -----------------------------------------------------------------

@dataclass
class Experiment:
    tool_name: str
    summary: str
    log_excerpt: str = ""


@dataclass
class Conclusion:
    claim: str
    evidence_excerpts: list[str] = field(default_factory=list)
    verified: bool = False


@dataclass
class ExperimentReport:
    experiment_goal: str
    iterations_used: int
    hypotheses: list[str] = field(default_factory=list)
    experiments: list[Experiment] = field(default_factory=list)
    conclusions: list[Conclusion] = field(default_factory=list)
    ended_by: str = "end_tool"
    final_summary: str = ""
    notes: str = ""
    tool_calls: int = 0
    llm_calls: int = 0

    @property
    def unverified_count(self) -> int:
        return sum(not c.verified for c in self.conclusions)

    def is_empty(self) -> bool:
        return not (self.hypotheses or self.experiments or self.conclusions or self.final_summary)

    def evidence(self) -> list[str]:
        out = [e for c in self.conclusions for e in c.evidence_excerpts]
        out += [x.log_excerpt for x in self.experiments if x.log_excerpt]
        return [e for e in out if e.strip()]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["unverified_count"] = self.unverified_count
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentReport":
        d = dict(d)
        d.pop("unverified_count", None)
        d["experiments"] = [Experiment(**x) for x in d.get("experiments", [])]
        d["conclusions"] = [Conclusion(**x) for x in d.get("conclusions", [])]
        return cls(**d)

    def to_markdown(self) -> str:
        lines = [f"# Experiment report", "", f"**Goal:** {self.experiment_goal}", "",
                 f"- iterations: {self.iterations_used}", f"- ended by: {self.ended_by}",
                 f"- unverified claims: {self.unverified_count}", ""]
        if self.final_summary:
            lines += ["## Summary", "", self.final_summary, ""]
        if self.hypotheses:
            lines += ["## Hypotheses", ""] + [f"- {h}" for h in self.hypotheses] + [""]
        if self.experiments:
            lines += ["## Experiments", ""]
            for i, x in enumerate(self.experiments, 1):
                lines.append(f"{i}. `{x.tool_name}`: {x.summary}")
                if x.log_excerpt:
                    lines += ["", "   ```", *("   " + ln for ln in x.log_excerpt.splitlines()), "   ```"]
            lines.append("")
        if self.conclusions:
            lines += ["## Conclusions", ""]
            for c in self.conclusions:
                tag = "" if c.verified else " **[unverified]**"
                lines.append(f"- {c.claim}{tag}")
                lines += [f"  > `{e}`" for e in c.evidence_excerpts]
            lines.append("")
        if self.notes:
            lines += ["## Notes", "", self.notes, ""]
        return "\n".join(lines)


def extract_json_object(text: str) -> Any:
    """Pull the first JSON value out of model text (fenced or bare)."""
    fenced = re.search(r"```(?:json)?\s*(.*?)```", text, re.S)
    candidates = [fenced.group(1)] if fenced else []
    candidates.append(text)
    brace = text.find("{")
    if brace >= 0:
        candidates.append(text[brace:])
    for c in candidates:
        try:
            value, _ = json.JSONDecoder().raw_decode(c.strip())
            return value
        except json.JSONDecodeError:
            continue
    raise ProtocolError(f"no JSON object in model reply: {text[:200]!r}")


def verify_excerpts(excerpts: Iterable[str], outputs: Sequence[str]) -> bool:
    return any(e and any(e in out for out in outputs) for e in excerpts)


def _experiments_from_transcript(transcript: Transcript, end_name: str) -> list[Experiment]:
    outcomes = {m.tool_outcome_for: m.content for m in transcript.tool_outcomes()}
    found = []
    for inv in transcript.invocations():
        if inv.tool_name == end_name:
            continue
        out = outcomes.get(inv.id, "")
        summary = ", ".join(f"{k}={' '.join(str(v).split())[:40]}" for k, v in sorted(inv.arguments.items())
                            if not isinstance(v, (dict, list)))
        found.append(Experiment(inv.tool_name, summary or "(no scalar arguments)", "\n".join(out.splitlines()[:6])))
    return found


def finalize_report(
    transcript: Transcript,
    llm: CompletionBackend | None,
    *,
    experiment_goal: str = "",
    loop: LoopResult | None = None,
    end_name: str = END_TOOL,
) -> ExperimentReport:
    """Ask the model for a report (no tools offered) and check every citation."""
    if not len(transcript):
        raise InvalidInput("cannot report on an empty transcript")
    ended_by = loop.ended_by if loop else "end_tool"
    if ended_by == "stopped":
        ended_by = "end_tool"
    iterations = loop.iterations if loop else sum(
        1 for m in transcript if m.role == "assistant" and any(i.tool_name != end_name for i in m.tool_invocations)
    )
    invocations = [i for i in transcript.invocations() if i.tool_name != end_name]
    report = ExperimentReport(
        experiment_goal=experiment_goal,
        iterations_used=iterations,
        ended_by=ended_by,
        final_summary=str((loop.end_arguments if loop else {}).get("summary", "")),
        tool_calls=len(invocations),
        llm_calls=loop.llm_calls if loop else 0,
        experiments=_experiments_from_transcript(transcript, end_name),
    )
    if loop is not None and loop.ended_by == "error" or llm is None:
        report.ended_by = "error"
        report.notes = f"run aborted: {loop.error if loop else 'no backend'}"
        return report

    transcript.append(ChatMessage.user(load_prompt("report_request")))
    try:
        reply = llm.complete(ChatRequest(transcript.messages, ()))
        report.llm_calls += 1
    except LLM_FAILURES as exc:
        report.ended_by = "error"
        report.notes = f"report synthesis failed: {type(exc).__name__}: {exc}"
        return report
    reply = ChatMessage.assistant(reply.content or "(empty report)")
    transcript.append(reply)
    try:
        data = extract_json_object(reply.content)
        if not isinstance(data, dict):
            raise ProtocolError("report is not a JSON object")
    except ProtocolError as exc:
        report.notes = f"unstructured report ({exc}); raw text follows.\n\n{reply.content}"
        return report

    report.hypotheses = [str(h) for h in data.get("hypotheses") or []]
    if data.get("experiments"):
        report.experiments = [
            Experiment(str(x.get("tool_name", "")), str(x.get("summary", "")), str(x.get("log_excerpt", "")))
            for x in data["experiments"] if isinstance(x, Mapping)
        ]
    outputs = [m.content for m in transcript.tool_outcomes()]
    for c in data.get("conclusions") or []:
        if isinstance(c, str):
            c = {"claim": c}
        excerpts = [str(e) for e in c.get("evidence_excerpts") or []]
        report.conclusions.append(Conclusion(str(c.get("claim", "")), excerpts, verify_excerpts(excerpts, outputs)))
    return report


def write_report(report: ExperimentReport, run_dir: str | Path) -> None:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "report.json").write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")
    (run_dir / "report.md").write_text(report.to_markdown(), encoding="utf-8")


def do_experimentation(
    design: DesignBundle,
    experiment: str,
    tools: Iterable[Tool],
    limits: LoopLimits,
    llm: CompletionBackend,
    run_dir: str | Path,
    *,
    system_prompt: str | None = None,
    truncation: Truncation = Truncation(),
    clock: Callable[[], float] = time.monotonic,
) -> tuple[ExperimentReport, Transcript]:
    run_dir = Path(run_dir)
    registry = make_registry(tools)
    transcript = Transcript(build_initial_messages(design, experiment, system_prompt), path=run_dir / "transcript.jsonl")
    loop = run_loop(transcript, registry, limits, llm, run_dir, truncation=truncation, clock=clock)
    report = finalize_report(transcript, llm, experiment_goal=experiment, loop=loop)
    write_report(report, run_dir)
    return report, transcript
