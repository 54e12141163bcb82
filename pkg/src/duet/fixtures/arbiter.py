"""Scripted agent trajectories for the shipped arbiter plan.

``ArbiterPolicy`` is a completion backend that plays a fixed scenario per
property: which testbenches the agent submits, which experiments it runs and
when it stops. Running both flows with it against the fake tools, wrapped in
a :class:`~duet.llm.RecordingBackend`, produces the replay fixtures in
``duet/data/arbiter``. The scenarios encode the status and experiment counts
of the published baseline/Duet comparison on a round-robin arbiter.

Regenerate with ``python -m duet.fixtures.arbiter <out_dir>``.
"""

from __future__ import annotations

import json
import re
import sys
from dataclasses import replace
from importlib import resources
from pathlib import Path

from ..bench import Workbench
from ..harness import PropertyRunRecord, load_plan, run_flow, save_records
from ..llm import ChatRequest, RecordingBackend
from ..messages import ChatMessage, ToolInvocation
from ..sim import SimTemplates
from . import formal_wrapper, sim_templates

TOP = "arbiter"
N = 6


def data_dir() -> Path:
    return Path(str(resources.files("duet") / "data" / "arbiter"))


def design_files() -> tuple[tuple[str, str], ...]:
    return (("arbiter.sv", (data_dir() / "arbiter.sv").read_text(encoding="utf-8")),)


# -- testbench builders -----------------------------------------------------

def formal_tb(name: str, assertion: str, result: str = "proven", *, cover: str = "covered",
              antecedent: str = "|grant", cex: list[dict] | None = None, note: str = "") -> str:
    a = f"a_{name}"
    lines = [f"// Formal testbench: {name}", f"// fixture: {a}={result}", f"// fixture: vac_{a}={cover}"]
    for i, cyc in enumerate(cex or []):
        lines.append(f"// fixture: cex {a} {i} " + " ".join(f"{k}={v}" for k, v in sorted(cyc.items())))
    if note:
        lines.append(f"// {note}")
    lines += [
        f"module {name}_fv (",
        "  input logic clk, rst,",
        f"  input logic [{N - 1}:0] request, grant,",
        "  input logic [2:0] select,",
        "  input logic active",
        ");",
        "  default clocking cb @(posedge clk); endclocking",
        "  default disable iff (rst);",
        f"  {a}: assert property ({assertion});",
        f"  vac_{a}: cover property ({antecedent});",
        "endmodule",
        f"bind {TOP} {name}_fv fv (.*);",
        "",
    ]
    return "\n".join(lines)


def sim_tb(title: str, displays: list[str], waves: list[str] = (), marker: bool = False) -> str:
    lines = [f"// Simulation experiment: {title}"]
    lines += [f"// fixture: wave {w}" for w in waves]
    lines += [
        "module tb;",
        "  logic clk = 0, rst = 1;",
        f"  logic [{N - 1}:0] request = '0;",
        f"  logic [{N - 1}:0] grant;",
        "  logic [2:0] select;",
        "  logic active;",
        f"  {TOP} dut (.*);",
        "  always #5 clk = ~clk;",
        "  initial begin",
        '    $dumpfile("out/dump.vcd");',
        "    $dumpvars(0, tb);",
        "    @(posedge clk) rst = 0;",
        "    @(posedge clk) request = 6'b100010;",
        "    @(posedge clk) request = '0;",
        "    @(posedge clk);",
    ]
    lines += [f'    $display("{d}");' for d in displays]
    if marker:
        lines.append('    $display("DUET_CEX_REPLICATED");')
    lines += ["    $finish;", "  end", "endmodule", ""]
    return "\n".join(lines)


CEX_P1 = [
    {"rst": "1", "request": "000000", "grant": "000000"},
    {"rst": "0", "request": "100010", "grant": "000000"},
    {"rst": "0", "request": "000000", "grant": "000010"},
]


def _cex(grant: str = "000010") -> list[dict]:
    return [{"rst": "1", "request": "000000", "grant": "000000"},
            {"rst": "0", "request": "000010", "grant": "000000"},
            {"rst": "0", "request": "000000", "grant": grant}]


WAVES = ["0 tb.clk=0 tb.rst=1 tb.request=000000 tb.dut.grant=000000",
         "5 tb.clk=1", "10 tb.clk=0 tb.rst=0", "15 tb.clk=1 tb.request=100010", "20 tb.clk=0",
         "25 tb.clk=1 tb.request=000000 tb.dut.grant=000010", "30 tb.clk=0"]


# -- scenarios --------------------------------------------------------------
# Each action is (tool, arguments). "finish" ends with finish_property.

def F(tb):
    return ("formal", {"testbench_src": tb})


def FX(tb):
    return ("formal-experiment", {"testbench_src": tb})


def S(title, displays):
    return ("simulation", {"testbench_src": sim_tb(title, displays, WAVES), "top_module": "tb"})


def R(prop):
    return ("replication", {"property": prop})


def END(refined="", notes=""):
    args = {}
    if refined:
        args["refined_property"] = refined
    if notes:
        args["notes"] = notes
    return ("finish_property", args)


P1_INITIAL = "(grant & ~request) == '0"
P1_REFINED = "(grant & ~$past(request)) == '0"


def _unproven(name, assertion, attempts=3):
    return [F(formal_tb(name, assertion, "cex", cex=_cex(), note=f"attempt {k + 1}")) for k in range(attempts)] + [
        END(notes="could not make the assertion pass")]


def baseline_scenarios() -> dict[int, list]:
    return {
        1: _unproven("grant_subset_of_request", P1_INITIAL),
        2: _unproven("request_granted_next_cycle", "|request |-> |grant"),
        3: [F(formal_tb("grant_onehot0", "$onehot0(grant)"))],
        4: [F(formal_tb("reset_clears_outputs", "$past(rst) |-> grant == '0", "cex", cex=_cex())),
            F(formal_tb("reset_clears_outputs", "$past(rst) |-> (grant == '0 && select == '0 && !active)",
                        antecedent="$past(rst)"))],
        5: _unproven("no_starvation", "request[0] |-> ##[1:6] grant[0]"),
        6: _unproven("select_zero_when_inactive", "!active |-> select == '0", 2),
        7: [F(formal_tb("select_matches_grant", "active |-> grant == (1 << select)", "cex", cex=_cex())),
            F(formal_tb("select_matches_grant", "(active && grant == '0) |-> grant == (1 << select)",
                        cover="unreachable", antecedent="active && grant == '0"))],
        8: _unproven("round_robin_order", "grant[0] && request[1] |=> grant[1]"),
        9: [F(formal_tb("active_iff_grant", "active == |grant"))],
        10: _unproven("no_back_to_back_grant", "grant[0] && request[1] |=> !grant[0]"),
    }


def _sims(k, name):
    return [S(f"{name} probe {i + 1}", [f"probe {i + 1}: cycle 2 grant=000010 select=1 active=1"]) for i in range(k)]


def duet_scenarios() -> dict[int, list]:
    p1_cex = F(formal_tb("grant_subset_of_request", P1_INITIAL, "cex", cex=CEX_P1))
    p1 = [p1_cex] + [R(P1_INITIAL)] * 7 + [
        F(formal_tb("grant_subset_of_request", P1_REFINED, note="grant follows request by one cycle"))]
    p2 = [F(formal_tb("request_granted_next_cycle", "|request |-> |grant", "cex", cex=_cex()))] + \
        [R("|request |-> |grant")] * 5 + \
        [F(formal_tb("request_granted_next_cycle", "|request |=> |grant", "cex", cex=_cex("000000"))),
         END(refined="(|request && !rst) |=> |grant",
             notes="grant lags request by one cycle; the remaining failure is a reset in the following cycle")]
    p3 = [F(formal_tb("grant_onehot0", "$onehot0(grant)", "cex", cex=_cex("000011"), note="first draft")),
          *_sims(1, "grant_onehot0"), *[R("$onehot0(grant)")] * 4, F(formal_tb("grant_onehot0", "$onehot0(grant)"))]
    p4 = [F(formal_tb("reset_clears_outputs", "$past(rst) |-> grant == '0", "cex", cex=_cex())),
          *_sims(3, "reset_clears_outputs"), R("$past(rst) |-> grant == '0"),
          FX(formal_tb("reset_clears_outputs_sub", "$past(rst) |-> !active", antecedent="$past(rst)")),
          F(formal_tb("reset_clears_outputs", "$past(rst) |-> (grant == '0 && select == '0 && !active)",
                      antecedent="$past(rst)"))]
    p5 = [F(formal_tb("no_starvation", "request[0] |-> ##[1:6] grant[0]", "cex", cex=_cex())),
          *_sims(1, "no_starvation"), R("request[0] |-> ##[1:6] grant[0]"),
          F(formal_tb("no_starvation", "request[0] |=> ##[0:5] grant[0]", "cex", cex=_cex())),
          END(notes="a request dropped before its turn is never granted; no refinement found")]
    p6 = [F(formal_tb("select_zero_when_inactive", "!active |-> select == '0", "cex", cex=_cex())),
          *_sims(1, "select_zero_when_inactive"), R("!active |-> select == '0"),
          F(formal_tb("select_zero_when_inactive", "!active |-> select == '0", antecedent="!active",
                      note="reset added to the environment"))]
    p7 = [F(formal_tb("select_matches_grant", "active |-> grant == (1 << select)", "cex", cex=_cex())),
          *_sims(1, "select_matches_grant"), R("active |-> grant == (1 << select)"),
          F(formal_tb("select_matches_grant", "(active && $past(|request)) |-> grant == (1 << select)",
                      antecedent="active && $past(|request)"))]
    p8 = [F(formal_tb("round_robin_order", "grant[0] && request[1] |=> grant[1]", "cex", cex=_cex())),
          R("grant[0] && request[1] |=> grant[1]"),
          F(formal_tb("round_robin_order", "grant[0] && request[1] |=> ##1 grant[1]", "cex", cex=_cex())),
          END(notes="ordering depends on requests in the intervening cycle")]
    p9 = [F(formal_tb("active_iff_grant", "active == |grant", "cex", cex=_cex(), note="first draft")),
          *_sims(1, "active_iff_grant"), R("active == |grant"), F(formal_tb("active_iff_grant", "active == |grant"))]
    p10 = [F(formal_tb("no_back_to_back_grant", "grant[0] && request[1] |=> !grant[0]", "cex", cex=_cex())),
           *_sims(3, "no_back_to_back_grant"), R("grant[0] && request[1] |=> !grant[0]"),
           FX(formal_tb("no_back_to_back_sub", "grant[0] |=> !grant[0] || request[0]", "cex", cex=_cex())),
           F(formal_tb("no_back_to_back_grant", "grant[0] && $past(request[1]) |=> !grant[0]", "cex", cex=_cex())),
           END(notes="contention window not characterised")]
    return {1: p1, 2: p2, 3: p3, 4: p4, 5: p5, 6: p6, 7: p7, 8: p8, 9: p9, 10: p10}


# -- the policy backend -----------------------------------------------------

REPL_SYSTEM = "You reproduce formal-verification counterexamples"


class ArbiterPolicy:
    """Deterministic stand-in for the model, driven by the scenarios above."""

    def __init__(self, flow: str):
        self.flow = flow
        self.scenarios = duet_scenarios() if flow == "duet" else baseline_scenarios()
        self.replications = 0

    def complete(self, request: ChatRequest) -> ChatMessage:
        msgs = request.messages
        step = sum(m.role == "assistant" for m in msgs)
        if msgs[0].content.startswith(REPL_SYSTEM):
            return self._replicate(request, step)
        pid = int(re.search(r"^Property (\d+):", msgs[1].content, re.M).group(1))
        tool, args = self.scenarios[pid][step]
        return ChatMessage.assistant("", (ToolInvocation(f"call_{self.flow}_{pid}_{step}", tool, args),))

    def _replicate(self, request: ChatRequest, step: int) -> ChatMessage:
        if step == 0:
            self.replications += 1
        sims = (self.replications - 1) % 3 + 1
        cid = f"repl_{self.replications}_{step}"
        if not request.tool_descriptors:
            return ChatMessage.assistant(json.dumps(_replication_report(sims)))
        if step < sims:
            final = step == sims - 1
            displays = ["cycle 1: request=100010 grant=000000", "cycle 2: request=000000 grant=000010"]
            if not final:
                displays = ["cycle 1: request=100010 grant=000000", "waiting for the violation in cycle 1"]
            tb = sim_tb(f"replication attempt {step + 1}", displays, marker=final)
            return ChatMessage.assistant("", (ToolInvocation(cid, "simulation", {"testbench_src": tb, "top_module": "tb"}),))
        return ChatMessage.assistant("", (ToolInvocation(cid, "EndExperimentation",
                                                         {"summary": "grant follows request by one cycle"}),))


def _replication_report(sims: int) -> dict:
    return {
        "hypotheses": ["grant is registered, so it reflects the request of the previous cycle"],
        "experiments": [{"tool_name": "simulation", "summary": f"{sims} simulation(s) driving request per the trace",
                         "log_excerpt": "cycle 2: request=000000 grant=000010"}],
        "conclusions": [{
            "claim": "The violation is reproduced: grant is asserted one cycle after its request, when request has "
                     "already dropped.",
            "evidence_excerpts": ["cycle 2: request=000000 grant=000010", "DUET_CEX_REPLICATED"],
        }],
    }


# -- generation -------------------------------------------------------------

def normalized(records: list[PropertyRunRecord]) -> list[PropertyRunRecord]:
    """Drop machine-specific fields so record fixtures are reproducible."""
    return [replace(r, wall_time_ms=0, transcript_path=f"prop-{r.property_id:02d}/transcript.jsonl") for r in records]


def generate(out_dir: str | Path, work_dir: str | Path) -> dict[str, Path]:
    out_dir, work_dir = Path(out_dir), Path(work_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    plan = load_plan(data_dir() / "plan.json")
    written = {}
    for flow in ("baseline", "duet"):
        fixture = out_dir / f"{flow}.jsonl"
        fixture.write_text("", encoding="utf-8")
        llm = RecordingBackend(ArbiterPolicy(flow), fixture)
        bench = Workbench(design_files(), TOP, SimTemplates(*sim_templates()), formal_wrapper(), llm)
        records = run_flow(plan, flow, bench, llm, work_dir / flow)
        save_records(normalized(records), out_dir / f"records_{flow}.json")
        written[flow] = fixture
    return written


if __name__ == "__main__":
    import tempfile

    target = sys.argv[1] if len(sys.argv) > 1 else str(data_dir())
    with tempfile.TemporaryDirectory() as tmp:
        for flow, path in generate(target, tmp).items():
            print(f"{flow}: {path}")
