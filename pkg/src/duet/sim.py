"""Simulation adapter: compile and run a testbench with a configured simulator."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

from .agent import ToolContext, ToolFailure, ToolReply
from .errors import ConfigError, InvalidInput, ToolEnvironmentError
from .messages import ToolDescriptor
from .sandbox import check_identifier, expand_template, make_sandbox, require_placeholders, run_command, write_files

TESTBENCH_NAME = "tb.sv"


@dataclass(frozen=True)
class SimTemplates:
    """Two-phase simulator invocation; see :mod:`duet.sandbox` for placeholders."""

    compile: str
    run: str

    def __post_init__(self):
        require_placeholders(self.compile, ("{files}", "{top}", "{outdir}"), "sim.compile")
        require_placeholders(self.run, ("{outdir}",), "sim.run")


@dataclass(frozen=True)
class SimRequest:
    testbench_source: str
    design_files: tuple[tuple[str, str], ...]
    top_module: str
    timeout: float = 60.0
    extra_args: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.testbench_source.strip():
            raise InvalidInput("testbench_source is empty")
        check_identifier(self.top_module)
        if not self.timeout > 0:
            raise InvalidInput("timeout must be > 0")
        object.__setattr__(self, "design_files", tuple(tuple(f) for f in self.design_files))


@dataclass(frozen=True)
class SimResult:
    phase: str  # compile_failed | ran | timed_out
    exit_code: int
    log: str
    duration_ms: int
    sandbox: Path | None = field(default=None, compare=False)

    def render(self) -> str:
        head = {"compile_failed": "Compilation failed", "ran": "Simulation finished",
                "timed_out": "Simulation timed out"}[self.phase]
        return f"{head} (exit code {self.exit_code}).\n--- log ---\n{self.log}"


def run_simulation(request: SimRequest, templates: SimTemplates | None, sandbox_parent: str | Path) -> SimResult:
    """Write the testbench and design into a new sandbox, compile, then run.

    Phase depends only on exit codes and the timeout, never on log text.
    """
    if templates is None:
        raise ToolEnvironmentError("no simulator configured (set sim.compile and sim.run)")
    sandbox = make_sandbox(sandbox_parent)
    outdir = sandbox / "out"
    outdir.mkdir()
    files = [(TESTBENCH_NAME, request.testbench_source), *request.design_files]
    paths = write_files(sandbox, files)
    deadline = time.monotonic() + request.timeout

    argv = expand_template(templates.compile, request.top_module, paths, outdir) + list(request.extra_args)
    comp = run_command(argv, sandbox, request.timeout, "sim.compile")
    (sandbox / "compile.log").write_text(comp.output, encoding="utf-8")
    if comp.timed_out:
        return SimResult("timed_out", comp.exit_code, comp.output, comp.duration_ms, sandbox)
    if comp.exit_code != 0:
        return SimResult("compile_failed", comp.exit_code, comp.output, comp.duration_ms, sandbox)

    remaining = max(deadline - time.monotonic(), 0.001)
    argv = expand_template(templates.run, request.top_module, paths, outdir)
    run = run_command(argv, sandbox, remaining, "sim.run")
    (sandbox / "run.log").write_text(run.output, encoding="utf-8")
    log = comp.output + run.output
    total = comp.duration_ms + run.duration_ms
    if run.timed_out:
        return SimResult("timed_out", run.exit_code, log, max(total, int(request.timeout * 1000)), sandbox)
    return SimResult("ran", run.exit_code, log, total, sandbox)


def simulation_tool_descriptor(name: str = "simulation") -> ToolDescriptor:
    return ToolDescriptor(
        name,
        "Compile and run a SystemVerilog simulation testbench against the design and return "
        "the simulator's log (compile errors included). The testbench is a complete top-level "
        "module that instantiates the design. Do not use assertions to check behavior: a failing "
        "assertion can end the run early. Use copious $display statements instead, labelling "
        "each value with its time and the value you expected, so the log is rich enough to "
        "explain what happened. End the simulation with $finish. Call $dumpfile(\"out/dump.vcd\") "
        "and $dumpvars to record a waveform for the waveform tool.",
        {
            "type": "object",
            "properties": {
                "testbench_src": {"type": "string", "description": "Full testbench source."},
                "top_module": {"type": "string", "description": "Name of the testbench top module."},
                "timeout": {"type": "number", "exclusiveMinimum": 0, "description": "Seconds before the run is killed."},
            },
            "required": ["testbench_src", "top_module"],
        },
    )


def simulation_handler(bench, templates: SimTemplates | None):
    """Tool handler running simulations against ``bench.design_files``."""

    def handle(args: dict, ctx: ToolContext) -> ToolReply:
        try:
            req = SimRequest(args["testbench_src"], tuple(bench.design_files), args["top_module"],
                             min(float(args.get("timeout", bench.sim_timeout)), ctx.timeout))
            result = run_simulation(req, templates, ctx.artifact_dir)
        except (InvalidInput, ToolEnvironmentError, ConfigError) as exc:
            raise ToolFailure(str(exc)) from None
        bench.last_sim = result
        return ToolReply(result.render(), is_error=result.phase == "timed_out")

    return handle
