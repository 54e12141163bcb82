"""VCD parsing, point queries and bounded slices."""

from __future__ import annotations

import math

import pytest
from hypothesis import given, settings, strategies as st

from duet.errors import SignalLookupError, VCDParseError
from duet.waveform import (
    Change, Signal, SliceQuery, SliceTable, Timescale, Vector4, WaveformDocument, emit_vcd, parse_vcd,
    render_table, slice_waveform, value_at,
)

SAMPLE = """\
$date today $end
$timescale 10ps $end
$scope module tb $end
$var wire 1 ! clk $end
$scope module dut $end
$var reg 4 " cnt [3:0] $end
$var real 64 # temp $end
$upscope $end
$upscope $end
$enddefinitions $end
$dumpvars
0!
bx "
r1.5 #
$end
#5
1!
b11 "
#10
0!
b1010 "
r-2.25 #
"""


def test_sample_header_and_values():
    """[DERIVED] scopes build dotted names; short vectors left-extend with 0."""
    doc = parse_vcd(SAMPLE)
    assert doc.timescale == Timescale(10, "ps")
    assert [s.hierarchical_name for s in doc.signals] == ["tb.clk", "tb.dut.cnt", "tb.dut.temp"]
    assert str(value_at(doc, "tb.dut.cnt", 0)) == "xxxx"
    assert str(value_at(doc, "tb.dut.cnt", 7)) == "0011"
    assert str(value_at(doc, "tb.dut.cnt", 10)) == "1010"
    assert value_at(doc, "tb.dut.temp", 99) == -2.25
    assert doc.end_time == 10


def test_before_first_change_is_unknown():
    doc = parse_vcd("$var wire 2 a s $end $enddefinitions $end #4 b01 a")
    assert str(value_at(doc, "s", 3)) == "xx"
    assert str(value_at(doc, "s", 4)) == "01"


@pytest.mark.parametrize("text, fragment", [
    ("$var wire 1 ! a $end $enddefinitions $end #5 1! #3 0!", "must not decrease"),
    ("$var wire 1 ! a $end $enddefinitions $end 1?", "undeclared"),
    ("$var wire 1 ! a $end", "before $enddefinitions"),
    ("$timescale 7ns $end $enddefinitions $end", "bad timescale"),
    ("$upscope $end $enddefinitions $end", "$upscope"),
    ("$var wire 2 ! a $end $enddefinitions $end b01", "truncated"),
    ("$var wire 1 ! a $end $enddefinitions $end #1 q!", "unrecognized"),
])
def test_malformed_input_reports_line(text, fragment):
    with pytest.raises(VCDParseError) as err:
        parse_vcd(text)
    assert fragment in str(err.value)


def test_unknown_signal_suggests_near_matches():
    doc = parse_vcd(SAMPLE)
    with pytest.raises(SignalLookupError, match="tb.dut.cnt"):
        value_at(doc, "tb.dut.cnx", 0)
    with pytest.raises(SignalLookupError):
        slice_waveform(doc, SliceQuery(("nothing*",), 0, 1))


def test_slice_rows_and_render():
    doc = parse_vcd(SAMPLE)
    table = slice_waveform(doc, SliceQuery(("tb.clk", "tb.dut.c*"), 2, 10))
    assert [t for t, _ in table.rows] == [2, 5, 10]
    assert render_table(table).splitlines() == [
        "time  tb.clk  tb.dut.cnt",
        "2     0       xxxx",
        "5     1       0011",
        "10    0       1010",
    ]


def test_slice_thins_to_max_rows():
    body = "".join(f"#{t} {t % 2}!\n" for t in range(100))
    doc = parse_vcd("$var wire 1 ! a $end $enddefinitions $end\n" + body)
    table = slice_waveform(doc, SliceQuery(("a",), 0, 99, max_rows=10))
    assert table.truncated and len(table.rows) == 11 and table.change_times == 99
    assert table.rows[1][0] == 1 and table.rows[-1][0] == 99
    assert render_table(table).endswith("# thinned: 10 of 99 change times shown")


def test_query_validation():
    with pytest.raises(ValueError):
        SliceQuery(("a",), 5, 4)
    with pytest.raises(ValueError):
        SliceQuery(("a",), 0, 4, max_rows=0)


# -- properties -------------------------------------------------------------

bits = st.sampled_from("01xz")


@st.composite
def documents(draw):
    n = draw(st.integers(1, 4))
    widths = [draw(st.integers(1, 6)) for _ in range(n)]
    signals = [Signal(chr(33 + i), f"top.s{i}", w, "wire") for i, w in enumerate(widths)]
    changes = []
    t = 0
    for _ in range(draw(st.integers(0, 25))):
        t += draw(st.integers(0, 4))
        i = draw(st.integers(0, n - 1))
        value = Vector4.from_string("".join(draw(st.lists(bits, min_size=widths[i], max_size=widths[i]))))
        changes.append(Change(t, signals[i].id_code, value))
    return WaveformDocument.from_changes(Timescale(1, "ns"), signals, changes)


def oracle_value(doc: WaveformDocument, sig: Signal, t: int):
    """Linear scan: last change at or before t."""
    v = None
    for ch in doc.changes:
        if ch.id_code == sig.id_code and ch.time <= t:
            v = ch.value
    return v if v is not None else Vector4.all_x(sig.width)


@settings(max_examples=150)
@given(documents())
def test_emit_parse_round_trip(doc):
    """[DERIVED] parse(emit(d)) == d"""
    assert parse_vcd(emit_vcd(doc)) == doc


@settings(max_examples=150)
@given(documents(), st.integers(0, 110))
def test_value_at_matches_scan(doc, t):
    for sig in doc.signals:
        assert value_at(doc, sig.hierarchical_name, t) == oracle_value(doc, sig, t)


@settings(max_examples=150)
@given(documents(), st.integers(0, 60), st.integers(0, 60), st.integers(1, 8))
def test_slice_matches_oracle(doc, a, b, max_rows):
    lo, hi = min(a, b), max(a, b)
    table = slice_waveform(doc, SliceQuery(("top.*",), lo, hi, max_rows))
    change_times = sorted({ch.time for ch in doc.changes if lo < ch.time <= hi})
    times = [t for t, _ in table.rows]
    assert times[0] == lo
    assert table.change_times == len(change_times)
    assert table.truncated == (len(change_times) > max_rows)
    if not table.truncated:
        assert times[1:] == change_times
    else:
        assert len(times) - 1 <= max_rows and set(times[1:]) <= set(change_times)
        assert times[1] == change_times[0]
        if max_rows >= 2:
            assert times[-1] == change_times[-1]
    for t, values in table.rows:
        assert values == tuple(oracle_value(doc, s, t) for s in doc.signals)


tables = st.builds(
    lambda rows: SliceTable(("a", "b"), tuple(rows)),
    st.lists(st.tuples(st.integers(0, 50), st.tuples(
        st.builds(Vector4.from_string, st.text("01xz", min_size=1, max_size=3)),
        st.builds(Vector4.from_string, st.text("01xz", min_size=1, max_size=3)),
    )), max_size=4),
)


@given(tables, tables)
def test_render_is_injective(t1, t2):
    """[DERIVED] distinct tables never render to the same text."""
    if t1 != t2:
        assert render_table(t1) != render_table(t2)


def test_real_values_before_first_change_are_nan():
    doc = parse_vcd("$var real 64 ! r $end $enddefinitions $end #3 r1 !")
    assert math.isnan(value_at(doc, "r", 0))
