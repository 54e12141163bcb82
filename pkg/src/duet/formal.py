"""Formal-engine adapter and the engine-neutral ``results.json`` schema.

The wrapper command consumes the sandbox and writes ``{outdir}/results.json``::

    {
      "asserts": [{"name": "p_grant_subset", "result": "cex",
                   "trace": {"clock": "clk",
                             "cycles": [{"index": 0, "signals": {"request": "6'b100010"}}]}}],
      "assumes": [{"name": "a_reset", "result": "proven"}],
      "covers":  [{"name": "vac_p_grant_subset", "result": "covered"}],
      "log": "optional engine log text"
    }

``result`` is one of proven, cex, covered, unreachable, undetermined (any
case). Covers may only be covered, unreachable or undetermined. A ``trace``
must be present exactly when ``result`` is cex. Signal values are strings
over ``01xz``, optionally prefixed with a width and base (``6'b100010``,
``6'h22``, ``4'd9``). Unknown fields are ignored.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .agent import ToolContext, ToolFailure, ToolReply, truncate
from .errors import ConfigError, EngineError, InvalidInput, ProtocolError, ToolEnvironmentError
from .messages import ToolDescriptor
from .sandbox import check_identifier, expand_template, make_sandbox, require_placeholders, run_command, write_files
from .waveform import Vector4

KINDS = ("assert", "assume", "cover")
RESULTS = ("proven", "cex", "covered", "unreachable", "undetermined")
COVER_RESULTS = ("covered", "unreachable", "undetermined")
_SECTION = {"asserts": "assert", "assumes": "assume", "covers": "cover"}
TESTBENCH_NAME = "formal_tb.sv"


@dataclass(frozen=True)
class CexCycle:
    index: int
    assignments: Mapping[str, Vector4]

    def __post_init__(self):
        if not self.assignments:
            raise InvalidInput(f"counterexample cycle {self.index} has no assignments")
        object.__setattr__(self, "assignments", dict(sorted(self.assignments.items())))


@dataclass(frozen=True)
class CexTrace:
    clock_name: str
    cycles: tuple[CexCycle, ...]

    def __post_init__(self):
        object.__setattr__(self, "cycles", tuple(self.cycles))
        for expected, cyc in enumerate(self.cycles):
            if cyc.index != expected:
                raise InvalidInput(f"counterexample cycle indices must run 0..n-1; got {cyc.index} at position {expected}")

    @classmethod
    def from_table(cls, clock: str, rows: Sequence[Mapping[str, str]]) -> "CexTrace":
        return cls(clock, tuple(CexCycle(i, {k: parse_value(v) for k, v in r.items()}) for i, r in enumerate(rows)))

    def signal_names(self) -> list[str]:
        return sorted({n for c in self.cycles for n in c.assignments})


@dataclass(frozen=True)
class PropertyStatus:
    kind: str
    name: str
    result: str
    cex: CexTrace | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidInput(f"unknown property kind {self.kind!r}")
        if self.result not in RESULTS:
            raise InvalidInput(f"unknown result {self.result!r}")
        if (self.cex is not None) != (self.result == "cex"):
            raise InvalidInput(f"{self.kind} {self.name!r}: a trace accompanies result=cex and nothing else")


@dataclass(frozen=True)
class FormalResult:
    statuses: tuple[PropertyStatus, ...] = ()
    engine_log_excerpt: str = ""
    duration_ms: int = 0

    def __post_init__(self):
        object.__setattr__(self, "statuses", tuple(self.statuses))
        seen = set()
        for s in self.statuses:
            key = (s.kind, s.name)
            if key in seen:
                raise InvalidInput(f"duplicate {s.kind} name {s.name!r}")
            seen.add(key)

    def of_kind(self, kind: str) -> list[PropertyStatus]:
        return [s for s in self.statuses if s.kind == kind]

    def get(self, kind: str, name: str) -> PropertyStatus | None:
        return next((s for s in self.statuses if s.kind == kind and s.name == name), None)

    @property
    def all_asserts_proven(self) -> bool:
        asserts = self.of_kind("assert")
        return bool(asserts) and all(s.result == "proven" for s in asserts)


# -- values -----------------------------------------------------------------

_VALUE = re.compile(r"^(?:(\d+)?'([bBhHdDoO]))?([0-9a-fA-FxXzZ_?]+)$")


def parse_value(text: str) -> Vector4:
    m = _VALUE.match(str(text).strip())
    if not m:
        raise ProtocolError(f"bad signal value {text!r}")
    width_s, base, digits = m.groups()
    digits = digits.replace("_", "")
    base = (base or "b").lower()
    if base == "b":
        bits = digits
    elif base in ("h", "o"):
        per, radix = (4, 16) if base == "h" else (3, 8)
        bits = ""
        for d in digits:
            if d in "xXzZ?":
                bits += ("z" if d in "zZ?" else "x") * per
            else:
                bits += format(int(d, radix), f"0{per}b")
    else:
        if not digits.isdigit():
            raise ProtocolError(f"bad decimal value {text!r}")
        bits = format(int(digits), "b")
    try:
        v = Vector4.from_string(bits)
    except ValueError:
        raise ProtocolError(f"bad signal value {text!r}") from None
    if width_s is not None:
        width = int(width_s)
        v = v.extend(width) if v.width < width else Vector4.from_string(str(v)[-width:]) if width else v
    return v


def format_value(v: Vector4) -> str:
    return f"{v.width}'b{v}"


# -- results document -------------------------------------------------------

def _trace_from(doc: Any, where: str) -> CexTrace:
    if not isinstance(doc, Mapping):
        raise ProtocolError(f"{where}.trace must be an object")
    if "cycles" not in doc:
        raise ProtocolError(f"{where}.trace missing required field 'cycles'")
    cycles = []
    for i, cyc in enumerate(doc["cycles"]):
        loc = f"{where}.trace.cycles[{i}]"
        if not isinstance(cyc, Mapping):
            raise ProtocolError(f"{loc} must be an object")
        for req in ("index", "signals"):
            if req not in cyc:
                raise ProtocolError(f"{loc} missing required field {req!r}")
        try:
            cycles.append(CexCycle(int(cyc["index"]), {str(k): parse_value(v) for k, v in cyc["signals"].items()}))
        except InvalidInput as exc:
            raise ProtocolError(f"{loc}: {exc}") from None
    cycles.sort(key=lambda c: c.index)
    try:
        return CexTrace(str(doc.get("clock", "clk")), tuple(cycles))
    except InvalidInput as exc:
        raise ProtocolError(f"{where}.trace: {exc}") from None


def results_from_document(doc: Any, duration_ms: int = 0) -> FormalResult:
    if not isinstance(doc, Mapping):
        raise ProtocolError("results document must be a JSON object")
    statuses = []
    for section, kind in _SECTION.items():
        entries = doc.get(section, [])
        if not isinstance(entries, list):
            raise ProtocolError(f"{section} must be a list")
        for i, entry in enumerate(entries):
            where = f"{section}[{i}]"
            if not isinstance(entry, Mapping):
                raise ProtocolError(f"{where} must be an object")
            for req in ("name", "result"):
                if req not in entry:
                    raise ProtocolError(f"{where} missing required field {req!r}")
            result = str(entry["result"]).strip().lower()
            if result not in RESULTS:
                raise ProtocolError(f"{where}: unknown result {entry['result']!r}")
            if kind == "cover" and result not in COVER_RESULTS:
                raise ProtocolError(f"{where}: cover result must be one of {', '.join(COVER_RESULTS)}, got {result!r}")
            has_trace = entry.get("trace") is not None
            if (result == "cex") != has_trace:
                raise ProtocolError(f"{where}: result {result!r} " + ("requires a trace" if result == "cex" else "must not carry a trace"))
            trace = _trace_from(entry["trace"], where) if has_trace else None
            statuses.append(PropertyStatus(kind, str(entry["name"]), result, trace))
    try:
        return FormalResult(tuple(statuses), str(doc.get("log", "")), duration_ms)
    except InvalidInput as exc:
        raise ProtocolError(str(exc)) from None


def parse_results(text: str, source: str = "results.json") -> FormalResult:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProtocolError(f"{source}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return results_from_document(doc)
    except ProtocolError as exc:
        raise ProtocolError(f"{source}: {exc}") from None


def results_to_document(result: FormalResult) -> dict:
    doc: dict[str, Any] = {"asserts": [], "assumes": [], "covers": []}
    for s in result.statuses:
        entry: dict[str, Any] = {"name": s.name, "result": s.result}
        if s.cex is not None:
            entry["trace"] = {
                "clock": s.cex.clock_name,
                "cycles": [{"index": c.index, "signals": {k: format_value(v) for k, v in c.assignments.items()}}
                           for c in s.cex.cycles],
            }
        doc[s.kind + "s"].append(entry)
    if result.engine_log_excerpt:
        doc["log"] = result.engine_log_excerpt
    return doc


def emit_results(result: FormalResult) -> str:
    return json.dumps(results_to_document(result), indent=2, sort_keys=True)


# -- running an engine ------------------------------------------------------

@dataclass(frozen=True)
class FormalRequest:
    testbench_source: str
    design_files: tuple[tuple[str, str], ...]
    top_module: str
    timeout: float = 300.0

    def __post_init__(self):
        if not self.testbench_source.strip():
            raise InvalidInput("testbench_source is empty")
        check_identifier(self.top_module)
        if not self.timeout > 0:
            raise InvalidInput("timeout must be > 0")
        object.__setattr__(self, "design_files", tuple(tuple(f) for f in self.design_files))


def check_wrapper_template(template: str) -> str:
    require_placeholders(template, ("{top}", "{files}", "{outdir}"), "formal.wrapper")
    return template


def run_formal(request: FormalRequest, wrapper: str | None, sandbox_parent: str | Path) -> FormalResult:
    """Run the engine wrapper in a fresh sandbox and parse its ``results.json``."""
    if not wrapper:
        raise ToolEnvironmentError("no formal engine wrapper configured (set formal.wrapper)")
    check_wrapper_template(wrapper)
    sandbox = make_sandbox(sandbox_parent)
    outdir = sandbox / "out"
    outdir.mkdir()
    paths = write_files(sandbox, [(TESTBENCH_NAME, request.testbench_source), *request.design_files])
    argv = expand_template(wrapper, request.top_module, paths, outdir)
    res = run_command(argv, sandbox, request.timeout, "formal.wrapper")
    (sandbox / "engine.log").write_text(res.output, encoding="utf-8")
    excerpt = truncate(res.output, 2000, 2000)
    if res.timed_out:
        raise EngineError(f"formal engine timed out after {request.timeout:g} s", excerpt, res.duration_ms)
    results = outdir / "results.json"
    if not results.exists():
        raise EngineError(f"engine wrapper exited with code {res.exit_code} without writing results.json",
                          excerpt, res.duration_ms)
    parsed = parse_results(results.read_text(encoding="utf-8"), str(results))
    return FormalResult(parsed.statuses, parsed.engine_log_excerpt or excerpt, res.duration_ms)


# -- vacuity ----------------------------------------------------------------

@dataclass(frozen=True)
class VacuityVerdict:
    assert_name: str
    vacuous: bool
    assessable: bool = True


def classify_vacuity(result: FormalResult, antecedent_cover_prefix: str = "vac_") -> list[VacuityVerdict]:
    """An assert is vacuous iff proven while its companion cover is unreachable."""
    verdicts = []
    for a in result.of_kind("assert"):
        companion = result.get("cover", antecedent_cover_prefix + a.name)
        if companion is None:
            verdicts.append(VacuityVerdict(a.name, False, assessable=False))
        else:
            verdicts.append(VacuityVerdict(a.name, a.result == "proven" and companion.result == "unreachable"))
    return verdicts


# -- agent-facing rendering -------------------------------------------------

def render_trace(trace: CexTrace) -> str:
    """Cycle-by-cycle table with signals in sorted order."""
    if not trace.cycles:
        raise InvalidInput("cannot render an empty trace")
    lines = [f"clock: {trace.clock_name}", "cycle  values"]
    for c in trace.cycles:
        lines.append(f"{c.index:<5}  " + "  ".join(f"{k}={v}" for k, v in sorted(c.assignments.items())))
    return "\n".join(lines)


def render_result(result: FormalResult, prefix: str = "vac_") -> str:
    lines = []
    vac = {v.assert_name: v for v in classify_vacuity(result, prefix)}
    for kind in KINDS:
        for s in result.of_kind(kind):
            note = " (vacuous: companion cover unreachable)" if kind == "assert" and vac[s.name].vacuous else ""
            lines.append(f"{kind} {s.name}: {s.result}{note}")
            if s.cex is not None:
                lines += ["  counterexample:", *("    " + ln for ln in render_trace(s.cex).splitlines())]
    if not lines:
        lines.append("no properties found in the testbench")
    if result.engine_log_excerpt:
        lines += ["--- engine log ---", result.engine_log_excerpt]
    return "\n".join(lines)


def formal_tool_descriptor(name: str = "formal", experiment: bool = False) -> ToolDescriptor:
    if experiment:
        desc = ("Run a formal testbench as an experiment: prove helper properties or check whether states "
                "are reachable with cover properties. Returns the proof status of every assert, assume "
                "and cover, with counterexample traces. Does not count as a verification attempt.")
    else:
        desc = ("Run your formal testbench (SystemVerilog assertions bound to the design) through the formal "
                "engine. Returns the proof status of every assert, assume and cover, with a cycle-by-cycle "
                "counterexample for each failing assertion.")
    return ToolDescriptor(
        name, desc,
        {
            "type": "object",
            "properties": {
                "testbench_src": {"type": "string", "description": "Formal testbench source."},
                "top_module": {"type": "string", "description": "Top module to elaborate (defaults to the design top)."},
            },
            "required": ["testbench_src"],
        },
    )


def formal_handler(bench, wrapper: str | None):
    def handle(args: dict, ctx: ToolContext) -> ToolReply:
        try:
            req = FormalRequest(args["testbench_src"], tuple(bench.design_files),
                                args.get("top_module") or bench.top_module, min(bench.formal_timeout, ctx.timeout))
            result = run_formal(req, wrapper, ctx.artifact_dir)
        except EngineError as exc:
            bench.last_formal = None
            detail = f"\n--- engine log ---\n{exc.log_excerpt}" if exc.log_excerpt else ""
            return ToolReply(f"error: {exc}{detail}", True)
        except (InvalidInput, ToolEnvironmentError, ConfigError, ProtocolError) as exc:
            raise ToolFailure(str(exc)) from None
        bench.last_formal = result
        bench.last_formal_testbench = args["testbench_src"]
        return ToolReply(render_result(result, bench.cover_prefix))

    return handle
