"""Testbench linter: a marked corpus plus an independent regex oracle."""

from __future__ import annotations

import re
from pathlib import Path

import pytest
from conftest import DATA
from hypothesis import given, strategies as st

from duet.replication import (
    DutInterface, Port, extract_ports, find_instances, lint_report, lint_testbench, strip_comments_and_strings,
)

CORPUS = sorted((DATA / "lint").glob("*.sv"))
IFACE = DutInterface(
    inputs=(Port("clk"), Port("rst"), Port("request", 6)),
    outputs=(Port("grant", 6), Port("select", 3), Port("active")),
)
EXPECT = re.compile(r"//!\s*expect\s+(\w+)")


def expected(source: str) -> list[tuple[int, str]]:
    return sorted((n, m.group(1)) for n, line in enumerate(source.splitlines(), 1) for m in EXPECT.finditer(line))


def lint(source: str):
    return lint_testbench(source, IFACE, find_instances(source, "arbiter"))


def test_corpus_size():
    """[TRIVIAL] at least 30 marked testbenches, with decoys and clean files."""
    assert len(CORPUS) >= 30
    assert sum(not expected(p.read_text()) for p in CORPUS) >= 10


@pytest.mark.parametrize("path", CORPUS, ids=lambda p: p.stem)
def test_corpus(path: Path):
    """[DERIVED] violations are exactly the marked (line, kind) pairs."""
    src = path.read_text()
    report = lint_report(src, IFACE, find_instances(src, "arbiter"))
    if src.startswith("//! unscannable"):
        assert not report.scannable
        return
    assert report.scannable
    assert sorted((v.line, v.kind) for v in report.violations) == expected(src)
    for v in report.violations:
        assert v.excerpt == src.splitlines()[v.line - 1].strip()


# -- independent oracle -----------------------------------------------------

def oracle_strip(src: str) -> str:
    """Blank comments and strings with regexes, keeping newlines."""
    def blank(m):
        return re.sub(r"[^\n]", " ", m.group())
    return re.sub(r'/\*.*?\*/|//[^\n]*|"(?:\\.|[^"\\\n])*"', blank, src, flags=re.S)


def oracle_kind(path: str, instances: set[str], forced: bool) -> str | None:
    comps = path.split(".")
    hits = [k for k, c in enumerate(comps[:-1]) if c in instances]
    if hits:
        rest = comps[hits[0] + 1:]
        if forced:
            return "force_statement"
        if rest in ([o] for o in IFACE.output_names):
            return "output_drive"
        if rest in ([i] for i in IFACE.input_names):
            return None
        return "internal_hierarchical_write"
    if len(comps) == 1 and comps[0] in IFACE.output_names:
        return "force_statement" if forced else "output_drive"
    return None


FORCE = re.compile(r"\b(?:force|release)\s+([\w.]+)")
WRITE = re.compile(
    r"(?:^\s*|[;)]\s*|\bbegin\s+|\bassign\s+|#\d+\s*)([A-Za-z_][\w.]*)(?:\[[^\]]*\])*\s*(?:<=|\+=|-=|=)(?!=)")


def oracle(src: str) -> list[tuple[int, str]]:
    instances = set(re.findall(r"^\s*arbiter\s*(?:#\s*\(.*?\)\s*)?(\w+)\s*\(", src, re.M))
    found = []
    for n, line in enumerate(oracle_strip(src).splitlines(), 1):
        for m in FORCE.finditer(line):
            kind = oracle_kind(m.group(1), instances, True)
            if kind:
                found.append((n, kind))
        for m in WRITE.finditer(FORCE.sub(" ", line)):
            kind = oracle_kind(m.group(1), instances, False)
            if kind:
                found.append((n, kind))
    return sorted(found)


ORACLE_FILES = [p for p in CORPUS if p.read_text().startswith("//! oracle")]


@pytest.mark.parametrize("path", ORACLE_FILES, ids=lambda p: p.stem)
def test_regex_oracle_agrees(path: Path):
    """[DERIVED] on the plain corpus files, a line-regex oracle finds the same violations."""
    src = path.read_text()
    assert oracle(src) == expected(src)
    assert sorted((v.line, v.kind) for v in lint(src)) == oracle(src)


def test_oracle_covers_enough_files():
    assert len(ORACLE_FILES) >= 20


# -- properties -------------------------------------------------------------

HEADER = (DATA / "lint" / "clean_basic.sv").read_text().split("  initial begin")[0]
BAD = ["force dut.last = 0;", "dut.last = 1;", "grant = 0;", "dut.grant <= 1;", "release dut.active;"]
GOOD = ["request = 6'b1;", "rst <= 0;", "$display(\"%b\", dut.last);", "#5;", "if (dut.last <= 2) rst = 1;"]


@given(st.lists(st.tuples(st.sampled_from(BAD + GOOD), st.sampled_from(["plain", "line", "block", "string"])),
                min_size=1, max_size=8))
def test_hidden_statements_never_count(stmts):
    """[DERIVED] text inside comments or strings never yields a violation; plain bad statements always do."""
    body = []
    live_bad = 0
    for s, wrap in stmts:
        if wrap == "plain":
            body.append(s)
            live_bad += s in BAD
        elif wrap == "line":
            body.append("// " + s)
        elif wrap == "block":
            body.append("/* " + s + " */")
        else:
            body.append('$display("' + s.replace('"', "'") + '");')
    src = HEADER + "  initial begin\n" + "".join(f"    {b}\n" for b in body) + "  end\nendmodule\n"
    assert len(lint(src)) == live_bad


@given(st.text(alphabet=st.sampled_from(list("ab/*\"\\\n ;=(")), max_size=60))
def test_strip_preserves_offsets(text):
    code, _ = strip_comments_and_strings(text)
    assert len(code) == len(text)
    assert [i for i, c in enumerate(code) if c == "\n"] == [i for i, c in enumerate(text) if c == "\n"]
    assert all(c == " " or c == text[i] for i, c in enumerate(code))


def test_find_instances():
    src = "arbiter #(.NUM_PORTS(6)) a0 (.clk(clk));\narbiter b1(.clk(clk));\n// arbiter c2 (.clk(clk));\n"
    assert find_instances(src, "arbiter") == ["a0", "b1"]


def test_extract_ports_ansi_and_non_ansi(arbiter_design):
    rtl = arbiter_design[0][1]
    iface = extract_ports(rtl, "arbiter")
    assert iface.inputs == (Port("clk"), Port("rst"), Port("request", 6))
    assert iface.outputs == (Port("grant", 6), Port("select", 3), Port("active"))
    old = "module m(a, b, y);\n  parameter W = 4;\n  input a;\n  input [W-1:0] b;\n  output reg [W:0] y;\nendmodule\n"
    iface = extract_ports(old, "m")
    assert iface.inputs == (Port("a"), Port("b", 4)) and iface.outputs == (Port("y", 5),)
