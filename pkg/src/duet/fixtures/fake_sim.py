"""Fake two-phase simulator.

``compile`` checks that the top module exists; ``run`` prints the string
literal of every ``$display``/``$write`` call in the testbench, in source
order. Directives (``// fixture: ...`` comments in the testbench):

    compile_error          compilation fails
    sleep=<seconds>        run phase sleeps first
    exit=<code>            run phase exit code
    wave <t> <sig>=<bits>  record a change in out/dump.vcd (one per directive)
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from pathlib import Path

# Standard library only: these run as a subprocess per tool call and must start fast.

DIRECTIVE = re.compile(r"//\s*fixture:\s*(.+)$", re.M)
CALL = re.compile(r"\$(?:display|write)\s*\(\s*\"((?:[^\"\\]|\\.)*)\"")


def directives(source: str) -> list[str]:
    return [m.group(1).strip() for m in DIRECTIVE.finditer(source)]


def _unescape(s: str) -> str:
    return s.replace("\\n", "\n").replace('\\"', '"').replace("\\t", "\t").replace("\\\\", "\\")


def _comment_mask(source: str) -> list[bool]:
    """True at offsets inside a comment or string literal."""
    mask = [False] * len(source)
    for m in re.finditer(r'//[^\n]*|/\*.*?\*/|"(?:[^"\\\n]|\\.)*"', source, re.S):
        for k in range(m.start(), m.end()):
            mask[k] = True
    return mask


def display_lines(source: str) -> list[str]:
    mask = _comment_mask(source)
    return [_unescape(m.group(1)) for m in CALL.finditer(source) if not mask[m.start()]]


def write_wave(source: str, path: Path) -> bool:
    changes = []
    for d in directives(source):
        parts = d.split()
        if parts and parts[0] == "wave":
            t = int(parts[1])
            for a in parts[2:]:
                name, bits = a.split("=", 1)
                changes.append((t, name, bits))
    if not changes:
        return False
    widths: dict[str, int] = {}
    for _, name, bits in changes:
        widths.setdefault(name, len(bits))
    code = {name: chr(33 + i) for i, name in enumerate(widths)}
    out = ["$timescale 1ns $end"]
    for name, w in widths.items():
        *scopes, ref = name.split(".")
        out += [f"$scope module {s} $end" for s in scopes]
        out.append(f"$var wire {w} {code[name]} {ref} $end")
        out += ["$upscope $end"] * len(scopes)
    out.append("$enddefinitions $end")
    last = None
    for t, name, bits in sorted(changes, key=lambda c: c[0]):
        if t != last:
            out.append(f"#{t}")
            last = t
        out.append(f"{bits}{code[name]}" if widths[name] == 1 else f"b{bits} {code[name]}")
    path.write_text("\n".join(out) + "\n", encoding="utf-8")
    return True


def compile_(top: str, outdir: Path, files: list[str]) -> int:
    sources = [Path(f).read_text(encoding="utf-8") for f in files]
    tb = sources[0]
    if "compile_error" in directives(tb):
        line = next(i for i, ln in enumerate(tb.splitlines(), 1) if "compile_error" in ln)
        print(f"%Error: tb.sv:{line}: syntax error, unexpected IDENTIFIER")
        return 1
    if not any(re.search(rf"^\s*module\s+{re.escape(top)}\b", s, re.M) for s in sources):
        print(f"%Error: top module '{top}' not found")
        return 1
    (outdir / "build.json").write_text(json.dumps({"testbench": str(Path(files[0]).resolve()), "top": top}))
    print(f"fake-sim: compiled {len(files)} files, top {top}")
    return 0


def run(outdir: Path) -> int:
    build = json.loads((outdir / "build.json").read_text())
    tb = Path(build["testbench"]).read_text(encoding="utf-8")
    code = 0
    for d in directives(tb):
        if d.startswith("sleep="):
            time.sleep(float(d.split("=", 1)[1]))
        elif d.startswith("exit="):
            code = int(d.split("=", 1)[1])
    for line in display_lines(tb):
        print(line)
    if write_wave(tb, outdir / "dump.vcd"):
        print("fake-sim: wrote out/dump.vcd")
    print(f"fake-sim: $finish (exit {code})")
    return code


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="fake_sim")
    sub = p.add_subparsers(dest="phase", required=True)
    c = sub.add_parser("compile")
    c.add_argument("--top", required=True)
    c.add_argument("--outdir", required=True)
    c.add_argument("files", nargs="+")
    r = sub.add_parser("run")
    r.add_argument("--outdir", required=True)
    a = p.parse_args(argv)
    sys.stdout.reconfigure(line_buffering=True)
    if a.phase == "compile":
        return compile_(a.top, Path(a.outdir), a.files)
    return run(Path(a.outdir))


if __name__ == "__main__":
    sys.exit(main())
