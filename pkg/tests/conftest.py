from __future__ import annotations

from pathlib import Path

import pytest

from duet.agent import LoopLimits
from duet.bench import Workbench
from duet.fixtures import formal_wrapper, sim_templates, write_config
from duet.fixtures.arbiter import data_dir, design_files
from duet.llm import ScriptedBackend
from duet.messages import ChatMessage, ToolInvocation
from duet.sim import SimTemplates

DATA = Path(__file__).parent / "data"


def call(name: str, args: dict | None = None, cid: str = "c1") -> ChatMessage:
    """Assistant message invoking one tool."""
    return ChatMessage.assistant("", (ToolInvocation(cid, name, args or {}),))


def end(summary: str = "", cid: str = "end") -> ChatMessage:
    return call("EndExperimentation", {"summary": summary} if summary else {}, cid)


def report_reply(conclusions=(), hypotheses=()) -> ChatMessage:
    import json

    return ChatMessage.assistant(json.dumps({
        "hypotheses": list(hypotheses),
        "experiments": [],
        "conclusions": [{"claim": c, "evidence_excerpts": list(e)} for c, e in conclusions],
    }))


def scripted(*messages: ChatMessage) -> ScriptedBackend:
    return ScriptedBackend.from_messages(messages)


@pytest.fixture
def arbiter_dir() -> Path:
    return data_dir()


@pytest.fixture
def arbiter_design():
    return design_files()


@pytest.fixture
def fake_sim() -> SimTemplates:
    return SimTemplates(*sim_templates())


@pytest.fixture
def fake_formal() -> str:
    return formal_wrapper()


@pytest.fixture
def bench(arbiter_design, fake_sim, fake_formal) -> Workbench:
    return Workbench(arbiter_design, "arbiter", fake_sim, fake_formal, None, LoopLimits(max_turns=10, per_tool_timeout=30))


@pytest.fixture
def config_path(tmp_path) -> Path:
    return write_config(tmp_path / "duet.config", tmp_path / "runs")


# -- acceptance reporting ---------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str, float]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when not in ("setup", "call"):
        return
    number, title = mark.args
    if rep.when == "call" or rep.failed:
        _ACCEPTANCE[number] = (title, "PASS" if rep.passed else "FAIL", rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_ACCEPTANCE):
        title, verdict, secs = _ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {verdict}  {title} ({secs:.2f} s)")
