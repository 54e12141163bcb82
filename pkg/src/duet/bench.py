"""Workbench: the design under study plus the tools an agent may call on it.

A :class:`Workbench` holds per-run state shared between tools (the most recent
simulation and formal result), so the waveform tool can slice the last dump
and the replication tool can pick up the last counterexample.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .agent import LoopLimits, Tool, ToolContext, ToolFailure, ToolReply, Truncation
from .errors import InvalidInput, SignalLookupError, VCDParseError
from .formal import FormalResult, formal_handler, formal_tool_descriptor, render_trace
from .messages import ToolDescriptor
from .replication import (
    DutInterface, ReplicationRequest, extract_ports, replicate, replication_tool_descriptor,
)
from .sim import SimRequest, SimResult, SimTemplates, run_simulation, simulation_handler, simulation_tool_descriptor
from .waveform import SliceQuery, parse_vcd_file, render_table, slice_waveform

DUMP_NAME = "dump.vcd"

SIM_TOOL = "simulation"
WAVE_TOOL = "waveform"
FORMAL_TOOL = "formal"
FORMAL_EXPT_TOOL = "formal-experiment"
REPL_TOOL = "replication"


@dataclass
class Workbench:
    design_files: tuple[tuple[str, str], ...]
    top_module: str
    sim: SimTemplates | None = None
    formal_wrapper: str | None = None
    llm: object = None
    limits: LoopLimits = field(default_factory=LoopLimits)
    truncation: Truncation = field(default_factory=Truncation)
    sim_timeout: float = 60.0
    formal_timeout: float = 300.0
    cover_prefix: str = "vac_"
    replication_cap: int = 5
    waveform_max_rows: int = 200
    last_sim: SimResult | None = None
    last_formal: FormalResult | None = None
    last_formal_testbench: str = ""
    replication_sims: list = field(default_factory=list)
    _iface: DutInterface | None = None

    def __post_init__(self):
        self.design_files = tuple((str(n), str(c)) for n, c in self.design_files)
        if not self.design_files:
            raise InvalidInput("design bundle is empty")

    @property
    def dut_interface(self) -> DutInterface:
        if self._iface is None:
            self._iface = extract_ports("\n".join(c for _, c in self.design_files), self.top_module)
        return self._iface

    def simulate(self, request: SimRequest, sandbox_parent: Path) -> SimResult:
        return run_simulation(request, self.sim, sandbox_parent)


# -- tool factories ---------------------------------------------------------

def simulation_tool(bench: Workbench) -> Tool:
    return Tool(simulation_tool_descriptor(SIM_TOOL), simulation_handler(bench, bench.sim))


def formal_tool(bench: Workbench, experiment: bool = False) -> Tool:
    name = FORMAL_EXPT_TOOL if experiment else FORMAL_TOOL
    return Tool(formal_tool_descriptor(name, experiment), formal_handler(bench, bench.formal_wrapper))


def waveform_tool_descriptor(name: str = WAVE_TOOL) -> ToolDescriptor:
    return ToolDescriptor(
        name,
        "View part of the waveform recorded by the most recent simulation (out/dump.vcd). Choose the "
        "signals (hierarchical names or globs such as tb.dut.grant*) and a time window; returns a table "
        "with one row at the window start and one row per change inside the window.",
        {
            "type": "object",
            "properties": {
                "signals": {"type": "array", "items": {"type": "string"}, "minItems": 1},
                "from": {"type": "integer", "minimum": 0},
                "to": {"type": "integer", "minimum": 0},
                "max_rows": {"type": "integer", "minimum": 1},
            },
            "required": ["signals", "from", "to"],
        },
    )


def waveform_handler(bench: Workbench):
    def handle(args: dict, ctx: ToolContext) -> ToolReply:
        if bench.last_sim is None or bench.last_sim.sandbox is None:
            raise ToolFailure("no simulation has run yet; run the simulation tool with $dumpfile(\"out/dump.vcd\")")
        path = bench.last_sim.sandbox / "out" / DUMP_NAME
        if not path.exists():
            raise ToolFailure("the last simulation wrote no out/dump.vcd; add $dumpfile(\"out/dump.vcd\") and $dumpvars")
        try:
            doc = parse_vcd_file(path)
            query = SliceQuery(tuple(args["signals"]), int(args["from"]), int(args["to"]),
                               int(args.get("max_rows", bench.waveform_max_rows)))
            return ToolReply(render_table(slice_waveform(doc, query)))
        except (VCDParseError, SignalLookupError, ValueError) as exc:
            raise ToolFailure(str(exc)) from None

    return handle


def waveform_tool(bench: Workbench) -> Tool:
    return Tool(waveform_tool_descriptor(), waveform_handler(bench))


def _pick_cex(result: FormalResult | None, assert_name: str | None):
    if result is None:
        raise ToolFailure("no formal result available; run the formal tool first")
    failing = [s for s in result.of_kind("assert") if s.cex is not None]
    if assert_name:
        hit = next((s for s in failing if s.name == assert_name), None)
        if hit is None:
            names = ", ".join(s.name for s in failing) or "none"
            raise ToolFailure(f"assert {assert_name!r} has no counterexample in the last formal run (failing: {names})")
        return hit
    if not failing:
        raise ToolFailure("the last formal run produced no counterexample")
    return failing[0]


def replication_handler(bench: Workbench):
    def handle(args: dict, ctx: ToolContext) -> ToolReply:
        status = _pick_cex(bench.last_formal, args.get("assert_name"))
        if bench.llm is None:
            raise ToolFailure("replication needs a model backend")
        req = ReplicationRequest(str(args["property"]), status.cex, bench.design_files, bench.top_module,
                                 bench.dut_interface)
        result = replicate(req, bench.llm, bench.simulate, ctx.artifact_dir / "replication",
                           cap=bench.replication_cap, limits=bench.limits, sim_timeout=bench.sim_timeout,
                           truncation=bench.truncation)
        bench.replication_sims.append(result.sim_iterations)
        head = f"replicating assert {status.name}; trace:\n{render_trace(status.cex)}\n"
        return ToolReply(head + result.render())

    return handle


def replication_tool(bench: Workbench) -> Tool:
    return Tool(replication_tool_descriptor(REPL_TOOL), replication_handler(bench))


def experiment_tools(bench: Workbench, names: Sequence[str] = (SIM_TOOL, WAVE_TOOL)) -> list[Tool]:
    """Tools for a free-form experiment, by name."""
    factories = {
        SIM_TOOL: simulation_tool, WAVE_TOOL: waveform_tool, REPL_TOOL: replication_tool,
        FORMAL_TOOL: formal_tool, FORMAL_EXPT_TOOL: lambda b: formal_tool(b, experiment=True),
    }
    unknown = [n for n in names if n not in factories]
    if unknown:
        raise InvalidInput(f"unknown tools: {unknown}")
    return [factories[n](bench) for n in names]
