"""Formal results schema, vacuity classification and the engine adapter."""

from __future__ import annotations

import json

import pytest
from hypothesis import given, strategies as st

from duet.errors import EngineError, ProtocolError, ToolEnvironmentError
from duet.formal import (
    CexCycle, CexTrace, FormalRequest, FormalResult, PropertyStatus, VacuityVerdict, classify_vacuity, emit_results, format_value,
    parse_results, parse_value, render_result, render_trace, run_formal,
)
from duet.waveform import Vector4

DUT = (("dut.sv", "module dut(input logic clk); endmodule\n"),)


@pytest.mark.parametrize("text, expected", [
    ("1", "1"), ("0101", "0101"), ("6'b100010", "100010"), ("6'h22", "100010"), ("4'd9", "1001"),
    ("3'b1", "001"), ("3'bx", "xxx"), ("8'hx1", "xxxx0001"), ("2'b1101", "01"), ("4'b1_0_1_0", "1010"),
    ("3'o7", "111"), ("'h3", "0011"),
])
def test_value_forms(text, expected):
    """[DERIVED] sized literals extend per VCD rules and truncate from the left."""
    assert str(parse_value(text)) == expected


@pytest.mark.parametrize("text", ["", "6'q12", "4'dx", "abc'b1", "0b101"])
def test_bad_values(text):
    with pytest.raises(ProtocolError):
        parse_value(text)


def test_results_document_errors_are_located():
    with pytest.raises(ProtocolError, match=r"asserts\[0\].*requires a trace"):
        parse_results(json.dumps({"asserts": [{"name": "p", "result": "cex"}]}))
    with pytest.raises(ProtocolError, match=r"asserts\[0\].*must not carry a trace"):
        parse_results(json.dumps({"asserts": [{"name": "p", "result": "proven",
                                                "trace": {"cycles": [{"index": 0, "signals": {"a": "1"}}]}}]}))
    with pytest.raises(ProtocolError, match="cover result"):
        parse_results(json.dumps({"covers": [{"name": "c", "result": "proven"}]}))
    with pytest.raises(ProtocolError, match="unknown result"):
        parse_results(json.dumps({"asserts": [{"name": "p", "result": "maybe"}]}))
    with pytest.raises(ProtocolError, match="line 1"):
        parse_results("{nope")
    with pytest.raises(ProtocolError, match="0..n-1"):
        parse_results(json.dumps({"asserts": [{"name": "p", "result": "cex", "trace": {
            "cycles": [{"index": 1, "signals": {"a": "1"}}]}}]}))


def test_result_case_and_unknown_fields():
    r = parse_results(json.dumps({"asserts": [{"name": "p", "result": "PROVEN", "engine": "x"}], "extra": 1}))
    assert r.statuses == (PropertyStatus("assert", "p", "proven"),)
    assert r.all_asserts_proven


names = st.from_regex(r"[a-z][a-z0-9_]{0,6}", fullmatch=True)
vectors = st.builds(Vector4.from_string, st.text("01xz", min_size=1, max_size=8))


@st.composite
def results(draw):
    statuses = []
    for kind in ("assert", "assume", "cover"):
        for name in draw(st.lists(names, unique=True, max_size=3)):
            pool = ["covered", "unreachable", "undetermined"] if kind == "cover" else ["proven", "cex", "undetermined"]
            res = draw(st.sampled_from(pool))
            cex = None
            if res == "cex":
                n = draw(st.integers(1, 3))
                cex = CexTrace(draw(names), tuple(
                    CexCycle(i, draw(st.dictionaries(names, vectors, min_size=1, max_size=3))) for i in range(n)))
            statuses.append(PropertyStatus(kind, name, res, cex))
    return FormalResult(tuple(statuses), draw(st.text(max_size=20)))


@given(results())
def test_results_round_trip(r):
    """[DERIVED] parse(emit(r)) == r"""
    assert parse_results(emit_results(r)) == r


@given(vectors)
def test_value_round_trip(v):
    assert parse_value(format_value(v)) == v


@pytest.mark.parametrize("assert_result, cover_result, vacuous", [
    ("proven", "unreachable", True),
    ("proven", "covered", False),
    ("proven", "undetermined", False),
    ("cex", "unreachable", False),
])
def test_vacuity_truth_table(assert_result, cover_result, vacuous):
    """[PAPER] a proof is vacuous when the antecedent can never occur."""
    cex = CexTrace("clk", (CexCycle(0, {"a": Vector4.from_string("1")}),)) if assert_result == "cex" else None
    r = FormalResult((PropertyStatus("assert", "p", assert_result, cex), PropertyStatus("cover", "vac_p", cover_result)))
    assert classify_vacuity(r) == [VacuityVerdict("p", vacuous, True)]


def test_vacuity_without_companion_is_not_assessable():
    r = FormalResult((PropertyStatus("assert", "p", "proven"), PropertyStatus("cover", "other", "unreachable")))
    (v,) = classify_vacuity(r)
    assert (v.vacuous, v.assessable) == (False, False)
    assert classify_vacuity(r, "oth")[0].assessable is False


def test_render_trace_layout():
    trace = CexTrace.from_table("clk", [{"request": "6'b100010", "grant": "000010"}, {"request": "0", "grant": "1"}])
    assert render_trace(trace).splitlines() == [
        "clock: clk",
        "cycle  values",
        "0      grant=000010  request=100010",
        "1      grant=1  request=0",
    ]


def test_render_result_marks_vacuity():
    r = FormalResult((PropertyStatus("assert", "p", "proven"), PropertyStatus("cover", "vac_p", "unreachable")), "log!")
    text = render_result(r)
    assert "assert p: proven (vacuous: companion cover unreachable)" in text
    assert text.endswith("--- engine log ---\nlog!")


def test_run_formal_with_fake_engine(tmp_path, fake_formal):
    tb = """module chk(input clk);
p1: assert property (@(posedge clk) 1);
p2: assert property (@(posedge clk) 1);
vac_p1: cover property (@(posedge clk) 1);
// fixture: p2=cex
// fixture: cex p2 0 req=01 gnt=00
// fixture: cex p2 1 req=01 gnt=11
// fixture: vac_p1=unreachable
endmodule
"""
    r = run_formal(FormalRequest(tb, DUT, "chk"), fake_formal, tmp_path)
    assert [(s.kind, s.name, s.result) for s in r.statuses] == [
        ("assert", "p1", "proven"), ("assert", "p2", "cex"), ("cover", "vac_p1", "unreachable")]
    assert str(r.get("assert", "p2").cex.cycles[1].assignments["gnt"]) == "11"
    assert classify_vacuity(r)[0].vacuous
    assert r.engine_log_excerpt == "fake-formal: 3 properties checked"


def test_engine_failures(tmp_path, fake_formal):
    with pytest.raises(EngineError, match="without writing results.json"):
        run_formal(FormalRequest("module c; // fixture: crash\nendmodule", DUT, "c"), fake_formal, tmp_path)
    with pytest.raises(EngineError, match="timed out"):
        run_formal(FormalRequest("module c; // fixture: sleep=5\nendmodule", DUT, "c", timeout=0.3), fake_formal, tmp_path)
    with pytest.raises(ToolEnvironmentError):
        run_formal(FormalRequest("module c; endmodule", DUT, "c"), None, tmp_path)
