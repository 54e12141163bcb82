"""Acceptance criteria 1-10. Each test prints one PASS/FAIL line in the terminal summary."""

from __future__ import annotations

import json
import random
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import pytest
from conftest import call, end, report_reply

from duet.agent import LoopLimits, Tool, do_experimentation
from duet.cli import main
from duet.formal import RESULTS, CexCycle, CexTrace, FormalResult, PropertyStatus, classify_vacuity
from duet.harness import compare, count_tool_invocations, load_records, render_csv, render_markdown
from duet.llm import HTTPBackend, ModelConfig, RecordingBackend, ScriptedBackend
from duet.messages import ChatMessage, ToolDescriptor, ToolInvocation, Transcript, check_transcript
from duet.replication import SUCCESS_MARKER, ReplicationRequest, replicate
from duet.sim import SimResult
from duet.waveform import Change, Signal, SliceQuery, Timescale, Vector4, WaveformDocument, emit_vcd, parse_vcd, \
    slice_waveform, value_at

pytestmark = pytest.mark.filterwarnings("ignore::ResourceWarning")


def verify_cli(tmp_path, config_path, arbiter_dir, flow: str, run_id: str) -> int:
    return main(["verify", "--config", str(config_path), "--llm", f"scripted:{arbiter_dir / f'{flow}.jsonl'}",
                 "--run-id", run_id, "--plan", str(arbiter_dir / "plan.json"),
                 "--design", str(arbiter_dir / "arbiter.sv"), "--flow", flow])


# 1 ------------------------------------------------------------------------

@pytest.mark.acceptance(1, "scripted Property-1 replay via verify --flow duet")
def test_property_1_replay(tmp_path, config_path, arbiter_dir):
    """[PAPER] property 1 is proven after 7 replications with a past-valued consequent."""
    start = time.monotonic()
    assert verify_cli(tmp_path, config_path, arbiter_dir, "duet", "duet") == 0
    elapsed = time.monotonic() - start
    rec = load_records(tmp_path / "runs" / "duet")[0]
    assert rec.property_id == 1 and rec.final_status == "proven"
    counts = {k: rec.tool_counts[k] for k in ("replication", "simulation", "formal-experiment")}
    assert counts == {"replication": 7, "simulation": 0, "formal-experiment": 0}
    assert "(grant & ~$past(request)) == '0" in rec.final_testbench
    assert elapsed < 10, f"replay took {elapsed:.1f} s"


# 2 ------------------------------------------------------------------------

@pytest.mark.acceptance(2, "arbiter comparison from fixture records")
def test_table_reproduction(arbiter_dir):
    """[PAPER] improved yes = {1, 6, 7}, partial = {2}; proven 3 vs 6."""
    start = time.monotonic()
    renders = []
    for _ in range(2):
        table = compare(load_records(arbiter_dir / "records_baseline.json"), load_records(arbiter_dir / "records_duet.json"))
        renders.append((render_markdown(table), render_csv(table)))
    assert renders[0] == renders[1]
    assert len(table.rows) == 10
    assert {r.property_id for r in table.rows if r.improved == "yes"} == {1, 6, 7}
    assert {r.property_id for r in table.rows if r.improved == "partial"} == {2}
    assert table.totals == (3, 6) and table.totals_line() == "proven: 3 vs 6"
    assert time.monotonic() - start < 1


# 3 ------------------------------------------------------------------------

ECHO = Tool(ToolDescriptor("echo", "echo", {"type": "object", "properties": {"x": {"type": "integer"}},
                                            "required": ["x"]}), lambda a, ctx: f"x={a['x']}")


class Counting(ScriptedBackend):
    def __init__(self, responses):
        super().__init__(responses)
        self.calls = 0

    def complete(self, request):
        self.calls += 1
        return super().complete(request)


def random_turn(rng: random.Random, k: int) -> ChatMessage:
    kind = rng.choice(["echo", "echo", "bad_args", "unknown", "text", "parallel"])
    if kind == "echo":
        return call("echo", {"x": rng.randint(0, 9)}, f"c{k}")
    if kind == "bad_args":
        return call("echo", {"y": "z"}, f"c{k}")
    if kind == "unknown":
        return call("frobnicate", {}, f"c{k}")
    if kind == "text":
        return ChatMessage.assistant("thinking")
    return ChatMessage.assistant("", tuple(ToolInvocation(f"c{k}_{j}", "echo", {"x": j}) for j in range(rng.randint(2, 3))))


def transcript_invariants(t: Transcript) -> None:
    assert check_transcript(t) == []
    msgs = t.messages
    assert [m.role for m in msgs[:2]] == ["system", "user"]
    for i, m in enumerate(msgs):
        if m.role == "assistant" and m.tool_invocations:
            replies = msgs[i + 1:i + 1 + len(m.tool_invocations)]
            assert [r.tool_outcome_for for r in replies] == [inv.id for inv in m.tool_invocations]


@pytest.mark.acceptance(3, "loop termination over 1,000 random trajectories")
def test_loop_termination(tmp_path):
    """[DERIVED] at most max_turns + 1 model calls; transcript invariants hold."""
    start = time.monotonic()
    rng = random.Random(20261016)
    for run in range(1000):
        max_turns = rng.randint(1, 6)
        script = [random_turn(rng, k) for k in range(rng.randint(0, max_turns + 2))]
        if rng.random() < 0.6:
            script.insert(rng.randint(0, len(script)), end(cid=f"end{run}"))
        if rng.random() < 0.8:
            script.append(report_reply([("c", ["x=1"])]))
        llm = Counting(ScriptedBackend.from_messages(script).responses)
        report, t = do_experimentation("module a; endmodule", "g", [ECHO], LoopLimits(max_turns=max_turns), llm,
                                       tmp_path / str(run))
        assert llm.calls <= max_turns + 1
        assert report.ended_by in ("end_tool", "turn_limit", "error")
        assert report.llm_calls == min(llm.calls, len(script))  # a call past the script raises, uncounted
        transcript_invariants(t)
        assert Transcript.load(tmp_path / str(run) / "transcript.jsonl").digest() == t.digest()
    assert time.monotonic() - start < 30


# 4 ------------------------------------------------------------------------

def random_document(rng: random.Random) -> WaveformDocument:
    n = rng.randint(1, 50)
    signals = [Signal(f"s{i}", f"top.u{i % 3}.sig{i}", rng.randint(1, 16)) for i in range(n)]
    changes, t = [], 0
    for _ in range(rng.randint(0, 5000)):
        t += rng.choice((0, 0, 1, 1, 2, 5))
        s = rng.choice(signals)
        bits = "".join(rng.choice("0101xz") for _ in range(rng.randint(1, s.width)))
        changes.append(Change(t, s.id_code, Vector4.from_string(bits)))
    return WaveformDocument.from_changes(Timescale(1, "ns"), signals, changes)


class Oracle:
    """Naive per-signal linear scan."""

    def __init__(self, doc: WaveformDocument):
        self.doc = doc
        self.by_code: dict[str, list[Change]] = {}
        for ch in doc.changes:
            self.by_code.setdefault(ch.id_code, []).append(ch)

    def value(self, sig: Signal, t: int):
        v = None
        for ch in self.by_code.get(sig.id_code, []):
            if ch.time > t:
                break
            v = ch.value
        return Vector4.all_x(sig.width) if v is None else v.extend(sig.width)

    def times(self, sigs, lo, hi):
        return sorted({ch.time for s in sigs for ch in self.by_code.get(s.id_code, []) if lo < ch.time <= hi})


@pytest.mark.acceptance(4, "VCD slice/value_at oracle equivalence and round trip")
def test_vcd_oracle(tmp_path):
    start = time.monotonic()
    rng = random.Random(4)
    for _ in range(100):
        doc = random_document(rng)
        assert parse_vcd(emit_vcd(doc)) == doc
        oracle = Oracle(doc)
        end_t = doc.end_time + 3
        for _ in range(10):
            sigs = rng.sample(doc.signals, rng.randint(1, min(4, len(doc.signals))))
            t = rng.randint(0, end_t)
            for s in sigs:
                assert value_at(doc, s.hierarchical_name, t) == oracle.value(s, t)
            lo = rng.randint(0, end_t)
            hi = rng.randint(lo, end_t)
            table = slice_waveform(doc, SliceQuery(tuple(s.hierarchical_name for s in sigs), lo, hi, 10_000))
            assert [r[0] for r in table.rows] == [lo, *oracle.times(sigs, lo, hi)]
            for row_t, values in table.rows:
                assert values == tuple(oracle.value(s, row_t) for s in sigs)
    assert time.monotonic() - start < 30


# 5 ------------------------------------------------------------------------

@pytest.mark.acceptance(5, "linter corpus: no false negatives or positives")
def test_linter_corpus():
    from test_lint import CORPUS, IFACE, expected

    from duet.replication import find_instances, lint_report

    start = time.monotonic()
    assert len(CORPUS) >= 30
    fn = fp = 0
    for path in CORPUS:
        src = path.read_text()
        report = lint_report(src, IFACE, find_instances(src, "arbiter"))
        if src.startswith("//! unscannable"):
            assert not report.scannable
            continue
        want, got = set(expected(src)), {(v.line, v.kind) for v in report.violations}
        fn += len(want - got)
        fp += len(got - want)
    assert (fn, fp) == (0, 0)
    assert time.monotonic() - start < 5


# 6 ------------------------------------------------------------------------

CLEAN_TB = "module tb;\n  logic [5:0] request;\n  arbiter dut (.request(request));\n  initial begin\n{}  end\nendmodule\n"
CHEATS = ["    force dut.grant = '0;\n", "    dut.last = 3'd1;\n", "    dut.active = 1'b0;\n", "    release dut.select;\n"]


class CountingSim:
    def __init__(self):
        self.calls = 0

    def __call__(self, request, parent) -> SimResult:
        self.calls += 1
        log = SUCCESS_MARKER + "\n" if "MARK" in request.testbench_source else "no match\n"
        return SimResult("ran", 0, log, 1, parent)


def repl_request(bench):
    trace = CexTrace("clk", (CexCycle(0, {"request": Vector4.from_string("100010")}),))
    return ReplicationRequest("p", trace, bench.design_files, "arbiter", bench.dut_interface)


def sim_call(src, cid):
    return call("simulation", {"testbench_src": src, "top_module": "tb"}, cid)


@pytest.mark.acceptance(6, "replication cheat rejection and the 5-simulation cap")
def test_replication_bound(tmp_path, bench):
    """[PAPER] a forcing testbench is rejected that turn; never more than 5 inner simulations."""
    sim = CountingSim()
    cheat = CLEAN_TB.format(CHEATS[0])
    llm = ScriptedBackend.from_messages([sim_call(cheat, "a"), end(), report_reply()])
    r = replicate(repl_request(bench), llm, sim, tmp_path / "cheat", limits=LoopLimits(max_turns=20))
    first_reply = Transcript.load(tmp_path / "cheat" / "transcript.jsonl").messages[3]
    assert first_reply.tool_outcome_for == "a" and first_reply.content.startswith("rejected:")
    assert sim.calls == 0 and r.status == "rejected_cheat"

    rng = random.Random(6)
    for run in range(100):
        sim = CountingSim()
        script = []
        for k in range(rng.randint(1, 12)):
            choice = rng.random()
            if choice < 0.15:
                script.append(ChatMessage.assistant("hmm"))
                continue
            burst = []
            for j in range(rng.choice((1, 1, 1, 2, 4))):
                body = rng.choice(CHEATS) if rng.random() < 0.3 else '    $display("MARK");\n' if rng.random() < 0.2 else ""
                burst.append(ToolInvocation(f"c{k}_{j}", "simulation",
                                            {"testbench_src": CLEAN_TB.format(body), "top_module": "tb"}))
            script.append(ChatMessage.assistant("", tuple(burst)))
        if rng.random() < 0.5:
            script.insert(rng.randint(0, len(script)), end(cid="e"))
        script.append(report_reply())
        r = replicate(repl_request(bench), ScriptedBackend.from_messages(script), sim, tmp_path / f"r{run}",
                      limits=LoopLimits(max_turns=50))
        assert sim.calls <= 5 and r.sim_iterations == sim.calls and r.attempts <= 5
        t = Transcript.load(tmp_path / f"r{run}" / "transcript.jsonl")
        assert sum(m.content.startswith("Simulation finished") for m in t if m.role == "tool") == sim.calls


# 7 ------------------------------------------------------------------------

@pytest.mark.acceptance(7, "vacuity classification over every companion result")
def test_vacuity_exhaustive():
    """[PAPER] vacuous exactly when the assert is proven and its companion cover is unreachable."""
    cex = CexTrace("clk", (CexCycle(0, {"a": Vector4.from_string("1")}),))
    for a_res in RESULTS:
        for c_res in RESULTS:
            r = FormalResult((PropertyStatus("assert", "p7", a_res, cex if a_res == "cex" else None),
                              PropertyStatus("cover", "vac_p7", c_res, cex if c_res == "cex" else None)))
            (v,) = classify_vacuity(r)
            assert v.assessable
            assert v.vacuous == (a_res == "proven" and c_res == "unreachable"), (a_res, c_res)


# 8 ------------------------------------------------------------------------

@pytest.mark.acceptance(8, "evidence discipline flags uncited claims")
def test_evidence_discipline(tmp_path):
    def run(excerpt, d):
        llm = ScriptedBackend.from_messages([call("echo", {"x": 7}), end(), report_reply([("claim", [excerpt])])])
        report, _ = do_experimentation("module a; endmodule", "g", [ECHO], LoopLimits(), llm, tmp_path / d)
        return report.unverified_count

    assert run("x=8 appeared", "absent") >= 1
    assert run("x=7", "present") == 0


# 9 ------------------------------------------------------------------------

class StubServer:
    """Chat-completions endpoint answering from a fixed script."""

    def __init__(self, replies: list[dict]):
        self.replies = list(replies)
        self.bodies: list[dict] = []
        outer = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                body = json.loads(self.rfile.read(int(self.headers["Content-Length"])))
                outer.bodies.append(body)
                assert self.path == "/v1/chat/completions"
                msg = outer.replies.pop(0)
                data = json.dumps({"id": f"r{len(outer.bodies)}", "object": "chat.completion", "model": body["model"],
                                   "choices": [{"index": 0, "message": msg, "finish_reason": "stop"}]}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

            def log_message(self, *a):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.url = f"http://127.0.0.1:{self.httpd.server_address[1]}/v1"
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)

    def __enter__(self):
        self.thread.start()
        return self

    def __exit__(self, *exc):
        self.httpd.shutdown()
        self.httpd.server_close()


def wire_call(cid, name, args):
    return {"role": "assistant", "content": None,
            "tool_calls": [{"id": cid, "type": "function", "function": {"name": name, "arguments": json.dumps(args)}}]}


@pytest.mark.acceptance(9, "HTTP record then scripted replay gives the same transcript digest")
def test_record_replay(tmp_path):
    replies = [
        wire_call("call_1", "echo", {"x": 3}),
        {"role": "assistant", "content": "noting x=3"},
        wire_call("call_2", "echo", {"x": 4}),
        wire_call("call_3", "EndExperimentation", {"summary": "done"}),
        {"role": "assistant", "content": json.dumps({"hypotheses": ["h"], "experiments": [],
                                                     "conclusions": [{"claim": "c", "evidence_excerpts": ["x=4"]}]})},
    ]
    fixture = tmp_path / "session.jsonl"
    with StubServer(replies) as server:
        http = HTTPBackend(ModelConfig(endpoint_url=server.url, model_name="stub"), environ={"OPENAI_API_KEY": "k"})
        rec_report, rec_t = do_experimentation("module a; endmodule", "g", [ECHO], LoopLimits(), RecordingBackend(http, fixture),
                                               tmp_path / "live")
    assert len(server.bodies) == 5 and server.bodies[-1].get("tools") in (None, [])
    replay_report, replay_t = do_experimentation("module a; endmodule", "g", [ECHO], LoopLimits(),
                                                 ScriptedBackend.from_file(fixture), tmp_path / "replay")
    assert replay_t.digest() == rec_t.digest()
    assert (tmp_path / "live/transcript.jsonl").read_bytes() == (tmp_path / "replay/transcript.jsonl").read_bytes()
    assert replay_report.to_dict() == rec_report.to_dict()


# 10 -----------------------------------------------------------------------

@pytest.mark.acceptance(10, "baseline transcripts contain no simulation or replication calls")
def test_flow_isolation(tmp_path, config_path, arbiter_dir):
    assert verify_cli(tmp_path, config_path, arbiter_dir, "baseline", "baseline") == 0
    transcripts = sorted((tmp_path / "runs" / "baseline").glob("prop-*/transcript.jsonl"))
    assert len(transcripts) == 10
    for path in transcripts:
        counts = count_tool_invocations(path, ["simulation", "replication", "formal-experiment", "waveform"])
        assert counts == {"simulation": 0, "replication": 0, "formal-experiment": 0, "waveform": 0}, path
        assert count_tool_invocations(path, ["formal"])["formal"] >= 1
