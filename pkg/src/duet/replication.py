"""Counterexample replication: turn a formal trace into a simulation testbench.

The sub-agent may only drive the design's inputs. ``lint_testbench`` enforces
that mechanically before any candidate testbench reaches the simulator.
"""

from __future__ import annotations

import bisect
import json
import logging
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .agent import LoopLimits, Tool, ToolContext, ToolReply, Truncation, do_experimentation
from .errors import InvalidInput, ToolEnvironmentError
from .formal import CexTrace, render_trace
from .messages import ToolDescriptor
from .prompts import load_prompt
from .sim import SimRequest, SimResult, simulation_tool_descriptor

logger = logging.getLogger(__name__)

SUCCESS_MARKER = "DUET_CEX_REPLICATED"
VIOLATION_KINDS = ("force_statement", "internal_hierarchical_write", "output_drive")


@dataclass(frozen=True)
class Port:
    name: str
    width: int = 1


@dataclass(frozen=True)
class DutInterface:
    inputs: tuple[Port, ...] = ()
    outputs: tuple[Port, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "inputs", tuple(p if isinstance(p, Port) else Port(*p) for p in self.inputs))
        object.__setattr__(self, "outputs", tuple(p if isinstance(p, Port) else Port(*p) for p in self.outputs))
        clash = set(self.input_names) & set(self.output_names)
        if clash:
            raise InvalidInput(f"ports declared as both input and output: {sorted(clash)}")

    @property
    def input_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.inputs)

    @property
    def output_names(self) -> tuple[str, ...]:
        return tuple(p.name for p in self.outputs)


@dataclass(frozen=True)
class LintViolation:
    kind: str
    line: int
    excerpt: str
    target: str = ""


# -- scanning ---------------------------------------------------------------

def strip_comments_and_strings(source: str) -> tuple[str, list[str]]:
    """Blank out comments, string literals and attributes, preserving offsets and newlines."""
    out = list(source)
    warnings: list[str] = []
    i, n = 0, len(source)

    def blank(a: int, b: int):
        for k in range(a, b):
            if out[k] != "\n":
                out[k] = " "

    while i < n:
        c = source[i]
        if source.startswith("//", i):
            j = source.find("\n", i)
            j = n if j < 0 else j
            blank(i, j)
            i = j
        elif source.startswith("/*", i):
            j = source.find("*/", i + 2)
            if j < 0:
                warnings.append("unterminated block comment")
                blank(i, n)
                break
            blank(i, j + 2)
            i = j + 2
        elif source.startswith("(*", i) and not source.startswith("(*)", i):
            j = source.find("*)", i + 2)
            if j < 0:
                i += 1
                continue
            blank(i, j + 2)
            i = j + 2
        elif c == '"':
            j = i + 1
            while j < n and source[j] != '"':
                if source[j] == "\\":
                    j += 1
                elif source[j] == "\n":
                    break
                j += 1
            if j >= n or source[j] != '"':
                warnings.append("unterminated string literal")
                blank(i, min(j, n))
                i = j
                continue
            blank(i, j + 1)
            i = j + 1
        else:
            i += 1
    return "".join(out), warnings


_TOKEN = re.compile(
    r"""
    (?P<ident>\\\S+|[A-Za-z_$][A-Za-z0-9_$]*)
  | (?P<number>\d*\s*'[sS]?[bBoOdDhH]\s*[0-9a-fA-FxXzZ_?]+|'[01xXzZ]|\d[\d_]*(?:\.\d+)?(?:[munpf]?s\b)?)
  | (?P<op><<<=|>>>=|===|!==|<<=|>>=|\|->|\|=>|<=|>=|==|!=|->|\+=|-=|\*=|/=|%=|&=|\|=|\^=|\+\+|--|\#\#|::|[^\s])
    """,
    re.VERBOSE,
)

_ASSIGN_OPS = {"=", "<=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", "<<<=", ">>>="}
_STMT_PREV = {
    ";", "begin", "end", "else", "fork", "join", "join_any", "join_none", "initial", "always",
    "always_ff", "always_comb", "always_latch", "final", "forever", "do", "assign", "deassign", ")", ":",
}


@dataclass(frozen=True)
class _Tok:
    text: str
    kind: str
    line: int
    depth: int


def _tokenize(code: str) -> tuple[list[_Tok], bool]:
    starts = [0] + [m.end() for m in re.finditer("\n", code)]
    toks: list[_Tok] = []
    depth = 0
    balanced = True
    for m in _TOKEN.finditer(code):
        kind = m.lastgroup
        text = m.group()
        line = bisect.bisect_right(starts, m.start())
        if text in ("(", "[", "{"):
            toks.append(_Tok(text, kind, line, depth))
            depth += 1
            continue
        if text in (")", "]", "}"):
            depth -= 1
            if depth < 0:
                balanced, depth = False, 0
        toks.append(_Tok(text, kind, line, depth))
    return toks, balanced and depth == 0


def _skip_back_select(toks: list[_Tok], j: int) -> int:
    """``toks[j]`` is ``]``; return the index of its matching ``[``."""
    target = toks[j].depth
    k = j - 1
    while k >= 0 and not (toks[k].text == "[" and toks[k].depth == target):
        k -= 1
    return k


def _lvalue_before(toks: list[_Tok], i: int) -> tuple[list[str], int]:
    """Parse the lvalue ending at ``toks[i-1]``; return (paths, index of first lvalue token)."""
    j = i - 1
    if j < 0:
        return [], i
    if toks[j].text == "}":
        k = j - 1
        while k >= 0 and not (toks[k].text == "{" and toks[k].depth == toks[j].depth):
            k -= 1
        if k < 0:
            return [], i
        return _concat_paths(toks[k + 1:j]), k
    parts: list[str] = []
    while j >= 0:
        while j >= 0 and toks[j].text == "]":
            j = _skip_back_select(toks, j) - 1
        if j < 0 or toks[j].kind != "ident":
            break
        parts.append(toks[j].text)
        if j >= 1 and toks[j - 1].text == ".":
            j -= 2
            continue
        break
    if not parts:
        return [], i
    return [".".join(reversed(parts))], j


def _lvalue_after(toks: list[_Tok], i: int) -> list[str]:
    """Parse the lvalue starting at ``toks[i]``."""
    if i >= len(toks):
        return []
    if toks[i].text == "{":
        k = i + 1
        while k < len(toks) and not (toks[k].text == "}" and toks[k].depth == toks[i].depth):
            k += 1
        return _concat_paths(toks[i + 1:k])
    parts = []
    k = i
    while k < len(toks) and toks[k].kind == "ident":
        parts.append(toks[k].text)
        k += 1
        while k < len(toks) and toks[k].text == "[":
            d = toks[k].depth
            k += 1
            while k < len(toks) and not (toks[k].text == "]" and toks[k].depth == d):
                k += 1
            k += 1
        if k < len(toks) and toks[k].text == ".":
            k += 1
            continue
        break
    return [".".join(parts)] if parts else []


def _concat_paths(inner: Sequence[_Tok]) -> list[str]:
    paths, cur = [], []
    base = inner[0].depth if inner else 0
    for t in inner:
        if t.depth > base:
            continue
        if t.text == ",":
            if cur:
                paths.append(".".join(cur))
            cur = []
        elif t.kind == "ident":
            cur.append(t.text)
    if cur:
        paths.append(".".join(cur))
    return paths


def _is_statement_start(toks: list[_Tok], j: int) -> bool:
    if j < 0:
        return True
    prev = toks[j]
    if prev.text in _STMT_PREV:
        return True
    if prev.kind == "number" and j >= 1 and toks[j - 1].text == "#":
        return True
    # named block: begin : label
    if prev.kind == "ident" and j >= 2 and toks[j - 1].text == ":" and toks[j - 2].text in ("begin", "fork"):
        return True
    return False


def _classify(path: str, iface: DutInterface, dut_names: set[str], forced: bool) -> str | None:
    comps = [c.lstrip("\\") for c in path.split(".")]
    for k, comp in enumerate(comps[:-1]):
        if comp in dut_names:
            if forced:
                return "force_statement"
            rest = comps[k + 1:]
            if len(rest) == 1 and rest[0] in iface.output_names:
                return "output_drive"
            if len(rest) == 1 and rest[0] in iface.input_names:
                return None
            return "internal_hierarchical_write"
    if len(comps) == 1 and comps[0] in iface.output_names:
        return "force_statement" if forced else "output_drive"
    return None


@dataclass
class LintReport:
    violations: list[LintViolation] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    scannable: bool = True


def lint_report(source: str, dut_interface: DutInterface, dut_instance_names: Iterable[str]) -> LintReport:
    code, warnings = strip_comments_and_strings(source)
    toks, balanced = _tokenize(code)
    if not balanced:
        warnings.append("unbalanced brackets; testbench could not be scanned")
        return LintReport([], warnings, scannable=False)
    names = set(dut_instance_names)
    src_lines = source.splitlines()
    found: list[LintViolation] = []

    def add(kind: str, line: int, target: str):
        text = src_lines[line - 1].strip() if 0 < line <= len(src_lines) else ""
        found.append(LintViolation(kind, line, text, target))

    for i, t in enumerate(toks):
        if t.depth != 0:
            continue
        if t.text in ("force", "release"):
            for path in _lvalue_after(toks, i + 1):
                kind = _classify(path, dut_interface, names, forced=True)
                if kind:
                    add(kind, t.line, path)
        elif t.text in _ASSIGN_OPS or t.text in ("++", "--"):
            paths, first = _lvalue_before(toks, i)
            if not paths or not _is_statement_start(toks, first - 1):
                continue
            if first - 1 >= 0 and toks[first - 1].text in ("force", "release"):
                continue
            for path in paths:
                kind = _classify(path, dut_interface, names, forced=False)
                if kind:
                    add(kind, toks[first].line, path)
    return LintReport(found, warnings)


def lint_testbench(source: str, dut_interface: DutInterface, dut_instance_names: Iterable[str]) -> list[LintViolation]:
    """Flag forces into the design, hierarchical writes to internals and drives of outputs."""
    report = lint_report(source, dut_interface, dut_instance_names)
    for w in report.warnings:
        logger.warning("lint: %s", w)
    return report.violations


def find_instances(source: str, module_name: str) -> list[str]:
    """Instance names of ``module_name`` in ``source`` (``arbiter #(...) dut (...)``)."""
    code, _ = strip_comments_and_strings(source)
    toks, _ = _tokenize(code)
    names = []
    for i, t in enumerate(toks):
        if t.text != module_name or t.kind != "ident":
            continue
        k = i + 1
        if k < len(toks) and toks[k].text == "#":
            k += 1
            if k < len(toks) and toks[k].text == "(":
                d = toks[k].depth
                k += 1
                while k < len(toks) and not (toks[k].text == ")" and toks[k].depth == d):
                    k += 1
                k += 1
        if k + 1 < len(toks) and toks[k].kind == "ident" and toks[k + 1].text == "(":
            names.append(toks[k].text)
    return names


# -- port extraction --------------------------------------------------------

_TYPE_WORDS = {
    "logic", "wire", "reg", "bit", "byte", "int", "integer", "shortint", "longint", "signed", "unsigned",
    "var", "tri", "wand", "wor", "uwire", "input", "output", "inout", "ref", "const",
}


def _arith(expr: str) -> int:
    if not re.fullmatch(r"[\d\s+\-*/()]*", expr) or not expr.strip():
        raise ValueError(expr)
    return int(eval(expr.replace("/", "//"), {"__builtins__": {}}, {}))  # noqa: S307 - digits and operators only


def _eval_width(expr_toks: list[str], params: dict[str, int]) -> int | None:
    text = " ".join(str(params.get(t, t)) for t in expr_toks)
    clog2 = re.compile(r"\$clog2\s*\(([^()]*)\)")
    try:
        while clog2.search(text):
            text = clog2.sub(lambda m: str(max(_arith(m.group(1)) - 1, 0).bit_length()), text)
        if ":" not in text:
            return None
        hi, lo = text.split(":", 1)
        return abs(_arith(hi) - _arith(lo)) + 1
    except (ValueError, SyntaxError, ZeroDivisionError):
        return None


def extract_ports(rtl: str, module_name: str) -> DutInterface:
    """Direction and width of each port of ``module_name`` (ANSI or non-ANSI style)."""
    code, _ = strip_comments_and_strings(rtl)
    m = re.search(rf"\bmodule\s+{re.escape(module_name)}\b(.*?)\bendmodule\b", code, re.S)
    if not m:
        raise InvalidInput(f"module {module_name!r} not found")
    body = m.group(1)
    params = {k: int(v) for k, v in re.findall(r"\b(?:parameter|localparam)\b[^;,)]*?\b(\w+)\s*=\s*(\d+)", body)}
    toks, _ = _tokenize(body)
    inputs, outputs = [], []
    direction = None
    width = 1
    last_ident = None
    range_toks: list[str] | None = None
    base_depth = 0

    def flush():
        nonlocal last_ident
        if direction and last_ident:
            port = Port(last_ident, width)
            (inputs if direction == "input" else outputs if direction == "output" else []).append(port)
        last_ident = None

    for t in toks:
        if range_toks is not None:
            if t.text == "]" and t.depth == base_depth:
                width = _eval_width(range_toks, params) or 1
                range_toks = None
            else:
                range_toks.append(t.text)
            continue
        if t.text in ("input", "output", "inout"):
            flush()
            direction, width, base_depth = t.text, 1, t.depth
            continue
        if direction is None:
            continue
        if t.text == "[" and last_ident is None:
            range_toks, base_depth = [], t.depth
            continue
        if t.text == "[":
            continue
        if t.text == ",":
            flush()
        elif t.text in (";", ")"):
            flush()
            direction = None
        elif t.kind == "ident" and t.text not in _TYPE_WORDS:
            last_ident = t.text
    return DutInterface(tuple(inputs), tuple(outputs))


# -- the sub-agent ----------------------------------------------------------

@dataclass(frozen=True)
class ReplicationRequest:
    property_text: str
    trace: CexTrace
    design_files: tuple[tuple[str, str], ...]
    top_module: str
    dut_interface: DutInterface


@dataclass
class Attempt:
    testbench: str
    violations: list[LintViolation] = field(default_factory=list)
    result: SimResult | None = None


@dataclass
class ReplicationResult:
    status: str  # replicated | failed | rejected_cheat
    testbench_source: str
    sim_iterations: int
    notes: str
    attempts: int = 0
    transcript_path: str = ""

    def to_dict(self) -> dict:
        return asdict(self)

    def render(self) -> str:
        return (f"replication status: {self.status}\nsimulations run: {self.sim_iterations}\n"
                f"notes:\n{self.notes}\n--- final testbench ---\n{self.testbench_source}")


Simulator = Callable[[SimRequest, Path], SimResult]

_MARKER_LINE = re.compile(rf"(?:^|[\s\]:]){SUCCESS_MARKER}(?:[\s:.]|$)")


def marker_line(log: str, marker: str = SUCCESS_MARKER) -> str | None:
    pattern = _MARKER_LINE if marker == SUCCESS_MARKER else re.compile(rf"(?:^|[\s\]:]){re.escape(marker)}(?:[\s:.]|$)")
    return next((ln for ln in log.splitlines() if pattern.search(ln)), None)


def _lint_gated_sim(request: ReplicationRequest, simulate: Simulator, cap: int, attempts: list[Attempt],
                    sim_timeout: float) -> Tool:
    def handle(args: dict, ctx: ToolContext) -> ToolReply:
        src = args["testbench_src"]
        if len(attempts) >= cap:
            return ToolReply(f"error: simulation limit of {cap} reached", True)
        names = set(find_instances(src, request.top_module)) or {"dut"}
        report = lint_report(src, request.dut_interface, names)
        attempt = Attempt(src, report.violations)
        attempts.append(attempt)
        if not report.scannable:
            lines = ["rejected: testbench could not be scanned; it was not simulated."]
            lines += [f"  scan warning: {w}" for w in report.warnings]
            return ToolReply("\n".join(lines), True)
        if report.violations:
            lines = [f"rejected: testbench breaks the input-only rule ({len(report.violations)} violation(s)); "
                     "it was not simulated."]
            lines += [f"  line {v.line} [{v.kind}]: {v.excerpt}" for v in report.violations]
            return ToolReply("\n".join(lines), True)
        try:
            sim_req = SimRequest(src, request.design_files, args["top_module"], min(sim_timeout, ctx.timeout))
            attempt.result = simulate(sim_req, ctx.artifact_dir)
        except (InvalidInput, ToolEnvironmentError) as exc:
            return ToolReply(f"error: {exc}", True)
        return ToolReply(attempt.result.render(), attempt.result.phase == "timed_out")

    return Tool(simulation_tool_descriptor("simulation"), handle)


def replicate(
    request: ReplicationRequest,
    llm,
    simulate: Simulator,
    run_dir: str | Path,
    *,
    cap: int = 5,
    limits: LoopLimits | None = None,
    sim_timeout: float = 60.0,
    marker: str = SUCCESS_MARKER,
    truncation: Truncation = Truncation(),
) -> ReplicationResult:
    """Run the replication sub-agent; at most ``cap`` simulation attempts."""
    if not request.trace.cycles:
        raise InvalidInput("counterexample trace is empty")
    if cap <= 0:
        raise InvalidInput("replication cap must be > 0")
    base = limits or LoopLimits()
    inner_limits = LoopLimits(cap, base.per_tool_timeout, base.max_wall_time)
    attempts: list[Attempt] = []
    iface = request.dut_interface
    system = load_prompt(
        "replication_system",
        inputs=", ".join(iface.input_names) or "(see design)",
        outputs=", ".join(iface.output_names) or "(see design)",
        marker=marker, cap=str(cap),
    )
    task = load_prompt("replication_task", property=request.property_text, clock=request.trace.clock_name,
                       trace=render_trace(request.trace), top=request.top_module)
    tool = _lint_gated_sim(request, simulate, cap, attempts, sim_timeout)
    run_dir = Path(run_dir)
    report, transcript = do_experimentation(request.design_files, task, [tool], inner_limits, llm, run_dir,
                                            system_prompt=system, truncation=truncation)

    ran = [a for a in attempts if a.result is not None]
    notes: list[str] = []
    last = attempts[-1] if attempts else None
    status = "failed"
    if report.ended_by == "error":
        notes.append(report.notes)
    if last is not None and last.result is not None:
        hit = marker_line(last.result.log, marker)
        if hit is not None and last.result.phase == "ran":
            status = "replicated"
            notes.append(f"success marker found in the final simulation log: `{hit.strip()}`")
        else:
            notes.append(f"final simulation ({last.result.phase}) did not print {marker}")
    elif last is not None and last.violations:
        status = "rejected_cheat"
        notes.append("final testbench was rejected by the linter:")
        notes += [f"  line {v.line} [{v.kind}]: {v.excerpt}" for v in last.violations]
    rejected = sum(bool(a.violations) for a in attempts)
    notes.append(f"simulations run: {len(ran)} of {cap} allowed; lint rejections: {rejected}")
    if report.final_summary:
        notes.append(f"agent summary: {report.final_summary}")
    for c in report.conclusions:
        tag = "" if c.verified else " [unverified]"
        cites = "; ".join(f"`{e}`" for e in c.evidence_excerpts)
        notes.append(f"- {c.claim}{tag}" + (f" (log: {cites})" if cites else ""))
    result = ReplicationResult(status, last.testbench if last else "", len(ran), "\n".join(notes), len(attempts),
                               str(run_dir / "transcript.jsonl"))
    (run_dir / "replication.json").write_text(json.dumps(result.to_dict(), indent=2), encoding="utf-8")
    if result.testbench_source:
        (run_dir / "replication_tb.sv").write_text(result.testbench_source, encoding="utf-8")
    return result


def replication_tool_descriptor(name: str = "replication") -> ToolDescriptor:
    return ToolDescriptor(
        name,
        "Reproduce a counterexample from the most recent formal run in simulation. A sub-agent writes and "
        "runs a testbench (1 to 5 simulations) that drives only the design inputs to recreate the trace, "
        "then reports the cycle-by-cycle behavior it observed with log citations and the final testbench.",
        {
            "type": "object",
            "properties": {
                "property": {"type": "string", "description": "The failing property, as text."},
                "assert_name": {"type": "string", "description": "Failing assertion whose counterexample to replicate; "
                                                                  "defaults to the first one with a counterexample."},
            },
            "required": ["property"],
        },
    )
