"""One scripted experiment on the arbiter, end to end.

The "model" here is a fixed script: it runs a simulation, looks at the
waveform, stops, and writes a report with one grounded claim and one claim
that cites text no tool ever printed. The report keeps both and marks the
second as unverified.

    python demos/offline_experiment.py
"""

from __future__ import annotations

import json
import tempfile
from pathlib import Path

from duet.agent import END_TOOL, LoopLimits, do_experimentation
from duet.bench import Workbench, experiment_tools
from duet.fixtures import formal_wrapper, sim_templates
from duet.fixtures.arbiter import design_files
from duet.llm import ScriptedBackend
from duet.messages import ChatMessage, ToolInvocation
from duet.sim import SimTemplates

TB = """module tb;
  logic clk = 0, rst = 1;
  logic [5:0] request = '0;
  logic [5:0] grant;
  arbiter dut (.clk(clk), .rst(rst), .request(request), .grant(grant), .select(), .active());
  always #5 clk = ~clk;
  // fixture: wave 0 tb.request=000000 tb.grant=000000
  // fixture: wave 15 tb.request=000010
  // fixture: wave 25 tb.grant=000010
  initial begin
    $dumpfile("out/dump.vcd");
    $dumpvars;
    $display("t=15 request=000010 grant=000000 (expected 000010)");
    $display("t=25 request=000010 grant=000010");
    $finish;
  end
endmodule
"""


def step(cid: str, tool: str, args: dict) -> ChatMessage:
    return ChatMessage.assistant("", (ToolInvocation(cid, tool, args),))


SCRIPT = [
    step("c1", "simulation", {"testbench_src": TB, "top_module": "tb"}),
    step("c2", "waveform", {"signals": ["tb.request", "tb.grant"], "from": 0, "to": 30}),
    step("c3", END_TOOL, {"summary": "grant trails request by one clock"}),
    ChatMessage.assistant(json.dumps({
        "hypotheses": ["grant is registered, so it follows request one cycle late"],
        "experiments": [],
        "conclusions": [
            {"claim": "grant rises one cycle after request", "evidence_excerpts": ["t=25 request=000010 grant=000010"]},
            {"claim": "grant can rise in the same cycle", "evidence_excerpts": ["t=15 grant=000010"]},
        ],
    })),
]


def main() -> None:
    llm = ScriptedBackend.from_messages(SCRIPT)
    bench = Workbench(design_files(), "arbiter", SimTemplates(*sim_templates()), formal_wrapper(), llm)
    with tempfile.TemporaryDirectory() as tmp:
        report, transcript = do_experimentation(
            bench.design_files, "How many cycles after a request does the grant appear?",
            experiment_tools(bench), LoopLimits(max_turns=5), llm, Path(tmp))
        print(report.to_markdown())
        print(f"transcript: {len(transcript)} messages, digest {transcript.digest()[:12]}")


if __name__ == "__main__":
    main()
