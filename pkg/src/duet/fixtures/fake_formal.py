"""Fake formal engine wrapper writing ``{outdir}/results.json``.

Properties are the labelled ``assert property``/``assume property``/
``cover property`` statements of the testbench. Asserts and assumes default
to proven, covers to covered. Directives override them:

    <name>=<result>                    result of a property
    cex <name> <cycle> <sig>=<bits>..  one trace cycle of a failing assert
    clock=<name>                       trace clock (default clk)
    sleep=<seconds> | crash            misbehave
"""

from __future__ import annotations

import argparse
import json
import re
import sys
import time
from pathlib import Path

try:
    from .fake_sim import directives
except ImportError:  # run as a script
    from fake_sim import directives

PROP = re.compile(r"^\s*(\w+)\s*:\s*(assert|assume|cover)\s+property\b", re.M)


def analyse(tb: str) -> dict:
    results, traces, clock = {}, {}, "clk"
    for d in directives(tb):
        parts = d.split()
        if parts[0] == "cex":
            cyc = {"index": int(parts[2]), "signals": dict(a.split("=", 1) for a in parts[3:])}
            traces.setdefault(parts[1], []).append(cyc)
        elif d.startswith("clock="):
            clock = d.split("=", 1)[1]
        elif "=" in d and not d.startswith(("sleep=", "exit=")):
            k, v = d.split("=", 1)
            results[k.strip()] = v.strip()
    doc = {"asserts": [], "assumes": [], "covers": []}
    for name, kind in PROP.findall(tb):
        res = results.get(name, "covered" if kind == "cover" else "proven")
        entry = {"name": name, "result": res}
        if res == "cex":
            cycles = sorted(traces.get(name) or [{"index": 0, "signals": {"rst": "0"}}], key=lambda c: c["index"])
            entry["trace"] = {"clock": clock, "cycles": cycles}
        doc[kind + "s"].append(entry)
    n = sum(len(v) for v in doc.values())
    doc["log"] = f"fake-formal: {n} properties checked"
    return doc


def main(argv=None) -> int:
    p = argparse.ArgumentParser(prog="fake_formal")
    p.add_argument("--top", required=True)
    p.add_argument("--outdir", required=True)
    p.add_argument("files", nargs="+")
    a = p.parse_args(argv)
    tb = Path(a.files[0]).read_text(encoding="utf-8")
    ds = directives(tb)
    for d in ds:
        if d.startswith("sleep="):
            time.sleep(float(d.split("=", 1)[1]))
    if "crash" in ds:
        print("fake-formal: internal error")
        return 3
    doc = analyse(tb)
    Path(a.outdir, "results.json").write_text(json.dumps(doc, indent=2))
    print(doc["log"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
