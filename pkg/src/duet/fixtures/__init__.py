"""Stand-in EDA tools and helpers for deterministic, offline runs.

``fake_sim`` and ``fake_formal`` are driven by ``// fixture: ...`` comment
directives inside the testbench they are given, so scripted agent runs can
exercise every tool path without a simulator or a formal engine installed.
"""

from __future__ import annotations

import shlex
import sys
from pathlib import Path


HERE = Path(__file__).resolve().parent


def _script(name: str) -> str:
    # -S skips site initialisation; the scripts use the standard library only.
    return f"{shlex.quote(sys.executable)} -S {shlex.quote(str(HERE / name))}"


def sim_templates() -> tuple[str, str]:
    """(compile, run) templates for the fake simulator."""
    sim = _script("fake_sim.py")
    return (f"{sim} compile --top {{top}} --outdir {{outdir}} {{files}}", f"{sim} run --outdir {{outdir}}")


def formal_wrapper() -> str:
    return f"{_script('fake_formal.py')} --top {{top}} --outdir {{outdir}} {{files}}"


def config_text(runs_root: str | Path, **limits) -> str:
    """A TOML config wired to the fake tools."""
    comp, run = sim_templates()
    lines = [
        "[sim]", f"compile = {_toml(comp)}", f"run = {_toml(run)}", "",
        "[formal]", f"wrapper = {_toml(formal_wrapper())}", "",
        "[runs]", f"root = {_toml(str(runs_root))}", "",
    ]
    if limits:
        lines.append("[limits]")
        lines += [f"{k} = {v!r}" for k, v in limits.items()]
    return "\n".join(lines) + "\n"


def _toml(s: str) -> str:
    return "'" + s + "'" if "'" not in s else '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'


def write_config(path: str | Path, runs_root: str | Path, **limits) -> Path:
    path = Path(path)
    path.write_text(config_text(runs_root, **limits), encoding="utf-8")
    return path
