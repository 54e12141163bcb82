"""Command templates, sandboxes and the two-phase simulation adapter."""

from __future__ import annotations

import sys

import pytest

from duet.errors import ConfigError, InvalidInput, ToolEnvironmentError
from duet.sandbox import expand_template, make_sandbox, run_command, write_files
from duet.sim import SimRequest, SimTemplates, run_simulation

DUT = (("dut.sv", "module dut(input logic a); endmodule\n"),)


def test_files_token_expands_to_separate_arguments():
    """[DERIVED] a bare {files} token is one argument per file; embedded ones join with spaces."""
    argv = expand_template("sim -s {top} -o {outdir}/x {files} --list={files}", "tb", ["a b.sv", "c.sv"], "/o")
    assert argv == ["sim", "-s", "tb", "-o", "/o/x", "a b.sv", "c.sv", "--list=a b.sv c.sv"]


def test_templates_require_placeholders():
    with pytest.raises(ConfigError, match=r"\{files\}"):
        SimTemplates("sim {top} {outdir}", "run {outdir}")
    with pytest.raises(ConfigError, match=r"\{outdir\}"):
        SimTemplates("sim {top} {outdir} {files}", "run")


def test_sandboxes_are_never_reused(tmp_path):
    assert [make_sandbox(tmp_path).name for _ in range(3)] == ["sandbox", "sandbox-1", "sandbox-2"]


def test_write_files_refuses_escape(tmp_path):
    box = make_sandbox(tmp_path)
    with pytest.raises(InvalidInput):
        write_files(box, [("../evil.sv", "x")])


def test_run_command_merges_streams_and_times_out(tmp_path):
    code = "import sys; print('out', flush=True); print('err', file=sys.stderr, flush=True); sys.exit(3)"
    r = run_command([sys.executable, "-c", code], tmp_path, 10)
    assert (r.exit_code, r.output.split(), r.timed_out) == (3, ["out", "err"], False)
    slow = run_command([sys.executable, "-c", "import time; time.sleep(5)"], tmp_path, 0.3)
    assert slow.timed_out and slow.duration_ms >= 300


def test_missing_executable_is_an_environment_error(tmp_path):
    with pytest.raises(ToolEnvironmentError):
        run_command(["/nonexistent/simulator"], tmp_path, 1)


def test_request_validation():
    with pytest.raises(InvalidInput):
        SimRequest("  ", DUT, "tb")
    with pytest.raises(InvalidInput):
        SimRequest("module tb; endmodule", DUT, "tb; rm -rf /")


def test_phases(tmp_path, fake_sim):
    """[DERIVED] the phase follows exit codes and the timeout only, never log text."""
    ok = run_simulation(SimRequest('module tb; initial $display("Error: just text"); endmodule', DUT, "tb"),
                        fake_sim, tmp_path)
    assert (ok.phase, ok.exit_code) == ("ran", 0) and "Error: just text" in ok.log
    assert ok.render().startswith("Simulation finished (exit code 0).")
    assert (ok.sandbox / "tb.sv").exists() and (ok.sandbox / "dut.sv").exists()

    bad = run_simulation(SimRequest("module tb; // fixture: compile_error\nendmodule", DUT, "tb"), fake_sim, tmp_path)
    assert bad.phase == "compile_failed" and "syntax error" in bad.log

    wrong_top = run_simulation(SimRequest("module tb; endmodule", DUT, "nope"), fake_sim, tmp_path)
    assert wrong_top.phase == "compile_failed"

    fatal = run_simulation(SimRequest("module tb; // fixture: exit=2\nendmodule", DUT, "tb"), fake_sim, tmp_path)
    assert (fatal.phase, fatal.exit_code) == ("ran", 2)

    hung = run_simulation(SimRequest("module tb; // fixture: sleep=5\nendmodule", DUT, "tb", timeout=0.5),
                          fake_sim, tmp_path)
    assert hung.phase == "timed_out" and hung.duration_ms >= 500


def test_no_simulator_configured(tmp_path):
    with pytest.raises(ToolEnvironmentError):
        run_simulation(SimRequest("module tb; endmodule", DUT, "tb"), None, tmp_path)
