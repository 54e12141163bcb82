"""Evaluation harness: baseline and Duet verification flows and their comparison.

Each property of a plan gets one agent run. In the baseline flow the agent
may only submit formal testbenches; in the Duet flow it can also experiment
(simulation, counterexample replication, formal experiments). Every run ends
in exactly one of proven, unproven, vacuous or refined.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .agent import (
    LoopLimits, Tool, ToolContext, ToolFailure, ToolReply, build_initial_messages, extract_json_object,
    render_design, run_loop,
)
from .bench import (
    FORMAL_EXPT_TOOL, FORMAL_TOOL, REPL_TOOL, SIM_TOOL, WAVE_TOOL, Workbench, formal_tool, replication_tool,
    simulation_tool, waveform_tool,
)
from .errors import CitationError, InvalidInput, ProtocolError
from .formal import classify_vacuity
from .llm import ChatRequest
from .messages import ChatMessage, ToolDescriptor, Transcript
from .prompts import load_prompt
from .sandbox import check_identifier
from .sim import SimRequest, simulation_tool_descriptor

logger = logging.getLogger(__name__)

FLOWS = ("baseline", "duet")
MODES = ("formal", "sim-feature")
STATUSES = ("proven", "unproven", "vacuous", "refined")
FINISH_TOOL = "finish_property"
CHECK_TOOL = "check"
# Column order of experiment-tool counts in comparison tables.
EXPERIMENT_TOOLS = (SIM_TOOL, REPL_TOOL, FORMAL_EXPT_TOOL, WAVE_TOOL)
_SHORT = {SIM_TOOL: "sim", REPL_TOOL: "repl", FORMAL_EXPT_TOOL: "formal", WAVE_TOOL: "wave"}


# -- plans ------------------------------------------------------------------

@dataclass(frozen=True)
class PlanProperty:
    id: int
    name: str
    goal: str
    context: str = ""


@dataclass(frozen=True)
class VerificationPlan:
    design_summary: str
    properties: tuple[PlanProperty, ...]

    def __post_init__(self):
        object.__setattr__(self, "properties", tuple(self.properties))
        for pos, p in enumerate(self.properties, 1):
            if p.id != pos:
                raise InvalidInput(f"properties[{pos - 1}].id: ids must be unique and dense from 1, got {p.id}")
            check_identifier(p.name, f"properties[{pos - 1}].name")

    def to_dict(self) -> dict:
        return {"design_summary": self.design_summary, "properties": [asdict(p) for p in self.properties]}


def plan_from_document(doc: Any, source: str = "plan", max_properties: int | None = None) -> VerificationPlan:
    if not isinstance(doc, Mapping):
        raise InvalidInput(f"{source}: top level must be an object")
    props = doc.get("properties")
    if not isinstance(props, list):
        raise InvalidInput(f"{source}: properties: expected a list")
    if max_properties is not None and len(props) > max_properties:
        raise InvalidInput(f"{source}: properties: {len(props)} entries exceed the limit of {max_properties}")
    out = []
    for i, p in enumerate(props):
        where = f"{source}: properties[{i}]"
        if not isinstance(p, Mapping):
            raise InvalidInput(f"{where}: expected an object")
        for key in ("id", "name", "goal"):
            if key not in p:
                raise InvalidInput(f"{where}: missing field {key!r}")
        if not isinstance(p["id"], int) or isinstance(p["id"], bool):
            raise InvalidInput(f"{where}.id: expected an integer")
        out.append(PlanProperty(p["id"], str(p["name"]), str(p["goal"]), str(p.get("context", ""))))
    try:
        return VerificationPlan(str(doc.get("design_summary", "")), tuple(out))
    except InvalidInput as exc:
        raise InvalidInput(f"{source}: {exc}") from None


def load_plan(path: str | Path, max_properties: int | None = None) -> VerificationPlan:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    return plan_from_document(doc, str(path), max_properties)


# -- records ----------------------------------------------------------------

@dataclass
class PropertyRunRecord:
    property_id: int
    flow: str
    final_status: str
    property_name: str = ""
    final_testbench: str = ""
    iterations: int = 0
    tool_counts: dict = field(default_factory=dict)
    wall_time_ms: int = 0
    transcript_path: str = ""
    refined_property: str = ""
    notes: str = ""
    inner_sim_calls: int = 0
    error: str = ""

    def __post_init__(self):
        if self.flow not in FLOWS:
            raise InvalidInput(f"unknown flow {self.flow!r}")
        if self.final_status not in STATUSES:
            raise InvalidInput(f"unknown status {self.final_status!r}")
        if self.final_status == "refined" and not self.refined_property.strip():
            raise InvalidInput("a refined record must carry the refined property text")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "PropertyRunRecord":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in d.items() if k in known})


def save_records(records: Sequence[PropertyRunRecord], path: str | Path, mode: str = "formal") -> None:
    flows = {r.flow for r in records}
    doc = {"flow": flows.pop() if len(flows) == 1 else "", "mode": mode, "records": [r.to_dict() for r in records]}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_records(path: str | Path) -> list[PropertyRunRecord]:
    path = Path(path)
    if path.is_dir():
        path = path / "records.json"
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise InvalidInput(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    rows = doc.get("records", []) if isinstance(doc, Mapping) else doc
    return [PropertyRunRecord.from_dict(r) for r in rows]


def count_tool_invocations(transcript: Transcript | Iterable[ChatMessage] | str | Path,
                           names: Iterable[str]) -> dict[str, int]:
    """Invocations per tool name, counted from a transcript (object or JSONL file)."""
    if isinstance(transcript, (str, Path)):
        transcript = Transcript.load(transcript)
    counts = {n: 0 for n in names}
    for m in transcript:
        for inv in m.tool_invocations:
            if inv.tool_name in counts:
                counts[inv.tool_name] += 1
    return counts


# -- design summary and plan ------------------------------------------------

def summarize_design(design, llm, run_dir: str | Path | None = None) -> str:
    """One model call; the reply is stored verbatim and shared by both flows."""
    text = render_design(design)
    reply = llm.complete(ChatRequest((ChatMessage.user(load_prompt("summarize", design=text)),), ()))
    summary = reply.content
    if run_dir is not None:
        Path(run_dir).mkdir(parents=True, exist_ok=True)
        (Path(run_dir) / "summary.md").write_text(summary, encoding="utf-8")
    return summary


def draft_plan(summary: str, llm, limit: int = 10) -> VerificationPlan:
    """Ask the model for a plan; used by the live ``plan`` command only."""
    reply = llm.complete(ChatRequest((ChatMessage.user(load_prompt("plan", limit=str(limit), summary=summary)),), ()))
    items = extract_json_object(reply.content)
    if isinstance(items, Mapping):
        items = items.get("properties", [])
    if not isinstance(items, list):
        raise ProtocolError("plan reply is not a JSON list")
    props = [{"id": i, "name": str(p.get("name", f"property_{i}")), "goal": str(p.get("goal", "")),
              "context": str(p.get("context", ""))} for i, p in enumerate(items[:limit], 1) if isinstance(p, Mapping)]
    return plan_from_document({"design_summary": summary, "properties": props}, "model plan")


# -- one property -----------------------------------------------------------

def finish_tool() -> Tool:
    desc = ToolDescriptor(
        FINISH_TOOL,
        "Stop working on this property. If the property as stated is false for the design and you found a "
        "corrected formulation, give it in refined_property.",
        {
            "type": "object",
            "properties": {
                "refined_property": {"type": "string", "description": "Refined property text, if any."},
                "notes": {"type": "string"},
            },
            "required": [],
        },
    )
    return Tool(desc, lambda args, ctx: "Property run finished.")


@dataclass
class _Submission:
    testbench: str
    passed: bool
    vacuous: bool = False


def _formal_submit_tool(bench: Workbench, subs: list[_Submission]) -> Tool:
    inner = formal_tool(bench)

    def handle(args: dict, ctx: ToolContext):
        bench.last_formal = None
        try:
            return inner.handler(args, ctx)
        finally:
            r = bench.last_formal
            passed = r is not None and r.all_asserts_proven
            vac = passed and any(v.vacuous for v in classify_vacuity(r, bench.cover_prefix))
            subs.append(_Submission(args.get("testbench_src", ""), passed, vac))

    return Tool(inner.descriptor, handle)


def _sim_check_tool(bench: Workbench, subs: list[_Submission]) -> Tool:
    def handle(args: dict, ctx: ToolContext) -> ToolReply:
        src = args.get("testbench_src", "")
        subs.append(_Submission(src, False))
        try:
            req = SimRequest(src, bench.design_files, args["top_module"], min(bench.sim_timeout, ctx.timeout))
            result = bench.simulate(req, ctx.artifact_dir)
        except Exception as exc:
            raise ToolFailure(str(exc)) from None
        bench.last_sim = result
        subs[-1].passed = result.phase == "ran" and result.exit_code == 0
        verdict = "PASS" if subs[-1].passed else "FAIL"
        return ToolReply(f"check: {verdict}\n{result.render()}", result.phase == "timed_out")

    descriptor = simulation_tool_descriptor(CHECK_TOOL)
    descriptor = ToolDescriptor(CHECK_TOOL, "Run your checking testbench; it passes when the simulator exits "
                                "with status 0.", descriptor.parameter_schema)
    return Tool(descriptor, handle)


def property_tools(flow: str, mode: str, bench: Workbench, subs: list[_Submission]) -> list[Tool]:
    if flow not in FLOWS:
        raise InvalidInput(f"unknown flow {flow!r}")
    if mode not in MODES:
        raise InvalidInput(f"unknown mode {mode!r}")
    if mode == "formal":
        tools = [_formal_submit_tool(bench, subs)]
        if flow == "duet":
            tools += [formal_tool(bench, experiment=True), simulation_tool(bench), replication_tool(bench)]
    else:
        tools = [_sim_check_tool(bench, subs)]
        if flow == "duet":
            tools += [simulation_tool(bench), waveform_tool(bench)]
    return tools + [finish_tool()]


def _system_prompt(flow: str, mode: str, bench: Workbench) -> str:
    if mode == "sim-feature":
        return load_prompt("verify_sim_system")
    text = load_prompt("verify_system", cover_prefix=bench.cover_prefix)
    if flow == "duet":
        text += load_prompt("verify_duet_addendum")
    return text


def run_property(
    prop: PlanProperty,
    plan: VerificationPlan,
    flow: str,
    bench: Workbench,
    llm,
    run_dir: str | Path,
    *,
    iteration_limit: int = 10,
    max_turns: int = 40,
    mode: str = "formal",
    extra_context: str = "",
) -> PropertyRunRecord:
    if iteration_limit <= 0:
        raise InvalidInput("iteration_limit must be > 0")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    start = time.monotonic()
    bench = replace(bench, last_sim=None, last_formal=None, last_formal_testbench="", replication_sims=[])
    subs: list[_Submission] = []
    tools = property_tools(flow, mode, bench, subs)
    registry = {t.name: t for t in tools}
    submit_name = tools[0].name
    counted = [n for n in registry if n != FINISH_TOOL]

    context = prop.context
    if extra_context:
        context = f"{context}\n\n{extra_context}".strip()
    task = load_prompt("property_task", summary=plan.design_summary, id=str(prop.id), name=prop.name,
                       goal=prop.goal, context=f"Context: {context}" if context else "",
                       design=render_design(bench.design_files))
    seed = [ChatMessage.system(_system_prompt(flow, mode, bench)), ChatMessage.user(task)]
    transcript = Transcript(seed, path=run_dir / "transcript.jsonl")

    def stop_after(inv, out) -> bool:
        return inv.tool_name == submit_name and bool(subs) and (subs[-1].passed or len(subs) >= iteration_limit)

    limits = LoopLimits(max_turns, bench.limits.per_tool_timeout, bench.limits.max_wall_time)
    loop = run_loop(transcript, registry, limits, llm, run_dir, end_name=FINISH_TOOL, stop_after=stop_after,
                    truncation=bench.truncation)

    last = subs[-1] if subs else None
    refined = str(loop.end_arguments.get("refined_property", "") or "").strip()
    agent_notes = str(loop.end_arguments.get("notes", "") or "")
    if last is not None and last.passed:
        status = "vacuous" if last.vacuous else "proven"
    elif refined:
        status = "refined"
    else:
        status = "unproven"
    notes = [f"ended by {loop.ended_by}"]
    if refined:
        notes.append(f"refined property: {refined}")
    if agent_notes:
        notes.append(agent_notes)
    if bench.replication_sims:
        notes.append(f"replication inner simulations: {bench.replication_sims}")
    record = PropertyRunRecord(
        property_id=prop.id, flow=flow, final_status=status, property_name=prop.name,
        final_testbench=last.testbench if last else "", iterations=len(subs),
        tool_counts=count_tool_invocations(transcript, counted),
        wall_time_ms=int((time.monotonic() - start) * 1000), transcript_path=str(run_dir / "transcript.jsonl"),
        refined_property=refined if status == "refined" else "", notes="\n".join(notes),
        inner_sim_calls=sum(bench.replication_sims), error=loop.error,
    )
    (run_dir / "record.json").write_text(json.dumps(record.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    if record.final_testbench:
        (run_dir / "final_tb.sv").write_text(record.final_testbench, encoding="utf-8")
    return record


def run_flow(
    plan: VerificationPlan,
    flow: str,
    bench: Workbench,
    llm,
    run_dir: str | Path,
    *,
    iteration_limit: int = 10,
    max_turns: int = 40,
    mode: str = "formal",
    extra_context: str = "",
) -> list[PropertyRunRecord]:
    """Run every property in order; a failing property is recorded and the run moves on."""
    if flow not in FLOWS:
        raise InvalidInput(f"unknown flow {flow!r}")
    if mode not in MODES:
        raise InvalidInput(f"unknown mode {mode!r}")
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for prop in plan.properties:
        pdir = run_dir / f"prop-{prop.id:02d}"
        try:
            rec = run_property(prop, plan, flow, bench, llm, pdir, iteration_limit=iteration_limit,
                               max_turns=max_turns, mode=mode, extra_context=extra_context)
        except Exception as exc:  # one property must not sink the plan
            logger.exception("property %d failed", prop.id)
            rec = PropertyRunRecord(prop.id, flow, "unproven", prop.name, error=f"{type(exc).__name__}: {exc}",
                                    transcript_path=str(pdir / "transcript.jsonl"))
        records.append(rec)
    save_records(records, run_dir / "records.json", mode)
    return records


def run_baseline(plan, llm, bench: Workbench, run_dir, iteration_limit: int = 10, **kw) -> list[PropertyRunRecord]:
    return run_flow(plan, "baseline", bench, llm, run_dir, iteration_limit=iteration_limit, **kw)


def run_duet(plan, llm, bench: Workbench, run_dir, iteration_limit: int = 10, **kw) -> list[PropertyRunRecord]:
    return run_flow(plan, "duet", bench, llm, run_dir, iteration_limit=iteration_limit, **kw)


# -- comparison -------------------------------------------------------------

def classify_improvement(baseline: str, duet: str) -> str:
    if baseline in ("unproven", "vacuous") and duet == "proven":
        return "yes"
    if duet == "refined" and baseline != "proven":
        return "partial"
    return "no"


@dataclass(frozen=True)
class ComparisonRow:
    property_id: int
    name: str
    baseline_status: str
    duet_status: str
    improved: str
    duet_counts: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class ComparisonTable:
    rows: tuple[ComparisonRow, ...]
    count_columns: tuple[str, ...]
    totals: tuple[int, int]  # proven: baseline, duet

    def totals_line(self) -> str:
        return f"proven: {self.totals[0]} vs {self.totals[1]}"


def compare(baseline_records: Sequence[PropertyRunRecord], duet_records: Sequence[PropertyRunRecord]) -> ComparisonTable:
    b = {r.property_id: r for r in baseline_records}
    d = {r.property_id: r for r in duet_records}
    if len(b) != len(baseline_records) or len(d) != len(duet_records):
        raise InvalidInput("duplicate property ids in a record set")
    if set(b) != set(d):
        raise InvalidInput(f"property ids differ: only baseline {sorted(set(b) - set(d))}, "
                           f"only duet {sorted(set(d) - set(b))}")
    present = {k for r in duet_records for k in r.tool_counts}
    columns = tuple(t for t in EXPERIMENT_TOOLS if t in present)
    rows = []
    for pid in sorted(b):
        br, dr = b[pid], d[pid]
        rows.append(ComparisonRow(pid, dr.property_name or br.property_name, br.final_status, dr.final_status,
                                  classify_improvement(br.final_status, dr.final_status),
                                  tuple((c, int(dr.tool_counts.get(c, 0))) for c in columns)))
    totals = (sum(r.final_status == "proven" for r in baseline_records),
              sum(r.final_status == "proven" for r in duet_records))
    return ComparisonTable(tuple(rows), columns, totals)


def _cells(table: ComparisonTable) -> tuple[list[str], list[list[str]]]:
    header = ["id", "property", "baseline", "duet", "improved"] + [f"# {_SHORT.get(c, c)}" for c in table.count_columns]
    body = [[str(r.property_id), r.name, r.baseline_status, r.duet_status, r.improved]
            + [str(n) for _, n in r.duet_counts] for r in table.rows]
    return header, body


def render_markdown(table: ComparisonTable) -> str:
    header, body = _cells(table)
    widths = [max([len(h)] + [len(row[i]) for row in body]) for i, h in enumerate(header)]

    def line(cells):
        return "| " + " | ".join(c.ljust(w) for c, w in zip(cells, widths)) + " |"

    out = [line(header), "| " + " | ".join("-" * w for w in widths) + " |"]
    out += [line(row) for row in body]
    out += ["", table.totals_line(), ""]
    return "\n".join(out)


def render_csv(table: ComparisonTable) -> str:
    header, body = _cells(table)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(body)
    return buf.getvalue()


def write_comparison(table: ComparisonTable, out_dir: str | Path) -> tuple[Path, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    md, cs = out_dir / "comparison.md", out_dir / "comparison.csv"
    md.write_text(render_markdown(table), encoding="utf-8")
    cs.write_text(render_csv(table), encoding="utf-8")
    return md, cs


# -- document enhancement ---------------------------------------------------

def enhance_documents(spec: str, feature_desc: str, report, llm, run_dir: str | Path | None = None) -> dict[str, str]:
    """Rewrite spec and feature description using an experiment report; must quote its evidence."""
    if report is None or report.is_empty():
        raise InvalidInput("experiment report is empty")
    prompt = load_prompt("enhance", spec=spec, feature_desc=feature_desc, report=report.to_markdown())
    reply = llm.complete(ChatRequest((ChatMessage.user(prompt),), ()))
    data = extract_json_object(reply.content)
    if not isinstance(data, Mapping) or not isinstance(data.get("spec"), str) or not isinstance(data.get("feature_desc"), str):
        raise ProtocolError('enhancement reply must be a JSON object with string fields "spec" and "feature_desc"')
    out = {"spec": data["spec"], "feature_desc": data["feature_desc"]}
    evidence = report.evidence()
    if not any(e in out["spec"] or e in out["feature_desc"] for e in evidence):
        raise CitationError("enhanced documents quote none of the report's evidence excerpts")
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        (run_dir / "enhanced_spec.md").write_text(out["spec"], encoding="utf-8")
        (run_dir / "enhanced_feature.md").write_text(out["feature_desc"], encoding="utf-8")
    return out
