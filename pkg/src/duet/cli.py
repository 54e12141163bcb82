"""``duet`` command line.

Exit codes: 0 success, 1 domain failure (run aborted, property errors, failed
replication), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import re
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .agent import do_experimentation, ExperimentReport
from .bench import SIM_TOOL, WAVE_TOOL, Workbench, experiment_tools
from .config import Config, finish_run, load_config, start_run, with_limits
from .errors import ConfigError, DuetError, InvalidInput
from .formal import parse_results
from .harness import (
    compare, draft_plan, enhance_documents, load_plan, load_records, run_flow, summarize_design, write_comparison,
)
from .llm import HTTPBackend, RecordingBackend, ScriptedBackend
from .replication import ReplicationRequest, replicate
from .waveform import SliceQuery, parse_vcd_file, render_table, slice_waveform

logger = logging.getLogger("duet")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(DuetError):
    pass


# -- helpers ----------------------------------------------------------------

def read_design(paths: Sequence[str]) -> tuple[tuple[str, str], ...]:
    files, seen = [], set()
    for p in paths:
        path = Path(p)
        if not path.is_file():
            raise UsageError(f"design file {p} not found")
        if path.name in seen:
            raise UsageError(f"two design files share the name {path.name}")
        seen.add(path.name)
        files.append((path.name, path.read_text(encoding="utf-8")))
    if not files:
        raise UsageError("no design files given")
    return tuple(files)


def infer_top(files: Sequence[tuple[str, str]]) -> str:
    """The one module that no other module instantiates."""
    text = "\n".join(c for _, c in files)
    modules = re.findall(r"^\s*module\s+([A-Za-z_]\w*)", text, re.M)
    body = re.sub(r"^\s*module\s+[A-Za-z_]\w*", "", text, flags=re.M)
    roots = [m for m in modules if not re.search(rf"\b{m}\s*(?:#\s*\(|[A-Za-z_]\w*\s*\()", body)]
    if len(roots) == 1:
        return roots[0]
    raise UsageError(f"cannot infer the top module from {modules}; pass --top")


def make_llm(spec: str, config: Config, record: str | None):
    if spec.startswith("scripted:"):
        backend = ScriptedBackend.from_file(spec.split(":", 1)[1])
    elif spec == "http":
        backend = HTTPBackend(config.model)
    else:
        raise UsageError(f"--llm must be 'http' or 'scripted:<fixture>', got {spec!r}")
    return RecordingBackend(backend, record) if record else backend


def text_arg(value: str) -> str:
    """``@path`` reads the text from a file."""
    if value.startswith("@"):
        return Path(value[1:]).read_text(encoding="utf-8")
    return value


def make_bench(config: Config, design, top: str, llm) -> Workbench:
    lim = config.limits
    return Workbench(design, top, config.sim_templates, config.formal_wrapper, llm, lim.loop, lim.truncation,
                     lim.sim_timeout, lim.formal_timeout, config.cover_prefix, lim.replication_cap,
                     lim.waveform_max_rows)


def _config(args) -> Config:
    config = load_config(args.config)
    return with_limits(config, max_turns=getattr(args, "max_turns", None),
                       iteration_limit=getattr(args, "iteration_limit", None),
                       replication_cap=getattr(args, "cap", None))


# -- commands ---------------------------------------------------------------

def cmd_experiment(args) -> int:
    config = _config(args)
    design = read_design(args.design)
    top = args.top or infer_top(design)
    experiment = text_arg(args.experiment)
    tools = [t.strip() for t in args.tools.split(",") if t.strip()]
    run_dir, manifest = start_run(config, "experiment", args.run_id)
    llm = make_llm(args.llm, config, args.record)
    bench = make_bench(config, design, top, llm)
    try:
        report, _ = do_experimentation(design, experiment, experiment_tools(bench, tools), config.limits.loop, llm,
                                       run_dir, truncation=config.limits.truncation)
    except Exception:
        finish_run(run_dir, manifest, "error")
        raise
    finish_run(run_dir, manifest, "done" if report.ended_by == "end_tool" else "error")
    print(f"report: {run_dir / 'report.md'}")
    print(f"ended by: {report.ended_by}; iterations: {report.iterations_used}; unverified claims: {report.unverified_count}")
    return EXIT_OK if report.ended_by == "end_tool" else EXIT_FAIL


def cmd_verify(args) -> int:
    config = _config(args)
    plan = load_plan(args.plan)
    design = read_design(args.design)
    top = args.top or infer_top(design)
    run_dir, manifest = start_run(config, f"verify --flow {args.flow} --mode {args.mode}", args.run_id)
    llm = make_llm(args.llm, config, args.record)
    bench = make_bench(config, design, top, llm)
    extra = "\n\n".join(f"=== {Path(p).name} ===\n{Path(p).read_text(encoding='utf-8')}" for p in args.context_file)
    try:
        if not plan.design_summary.strip():
            plan = replace(plan, design_summary=summarize_design(design, llm, run_dir))
        records = run_flow(plan, args.flow, bench, llm, run_dir, iteration_limit=config.limits.iteration_limit,
                           max_turns=config.limits.property_max_turns, mode=args.mode, extra_context=extra)
    except Exception:
        finish_run(run_dir, manifest, "error")
        raise
    failed = [r for r in records if r.error]
    finish_run(run_dir, manifest, "error" if failed else "done")
    for r in records:
        print(f"property {r.property_id} {r.property_name}: {r.final_status}"
              + (f" (error: {r.error})" if r.error else ""))
    print(f"records: {run_dir / 'records.json'}")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_report(args) -> int:
    table = compare(load_records(args.baseline), load_records(args.duet))
    md, cs = write_comparison(table, args.out)
    print(table.totals_line())
    print(f"wrote {md} and {cs}")
    return EXIT_OK


def cmd_wave_slice(args) -> int:
    doc = parse_vcd_file(args.vcd)
    query = SliceQuery(tuple(args.signals), args.start, args.end, args.max_rows)
    sys.stdout.write(render_table(slice_waveform(doc, query)) + "\n")
    return EXIT_OK


_TRACE_REF = re.compile(r"^(?P<path>.+?)#asserts\[(?P<idx>\d+)\]$")


def load_trace(ref: str):
    m = _TRACE_REF.match(ref)
    path, idx = (m.group("path"), int(m.group("idx"))) if m else (ref, None)
    result = parse_results(Path(path).read_text(encoding="utf-8"), path)
    asserts = result.of_kind("assert")
    if idx is None:
        picked = next((s for s in asserts if s.cex is not None), None)
    else:
        if idx >= len(asserts):
            raise UsageError(f"{ref}: only {len(asserts)} asserts")
        picked = asserts[idx]
    if picked is None or picked.cex is None:
        raise UsageError(f"{ref}: no counterexample trace there")
    return picked


def cmd_replicate(args) -> int:
    config = _config(args)
    design = read_design(args.design)
    top = args.top or infer_top(design)
    status = load_trace(args.trace)
    run_dir, manifest = start_run(config, "replicate", args.run_id)
    llm = make_llm(args.llm, config, args.record)
    bench = make_bench(config, design, top, llm)
    req = ReplicationRequest(text_arg(args.property), status.cex, design, top, bench.dut_interface)
    try:
        result = replicate(req, llm, bench.simulate, run_dir, cap=config.limits.replication_cap,
                           limits=config.limits.loop, sim_timeout=config.limits.sim_timeout,
                           truncation=config.limits.truncation)
    except Exception:
        finish_run(run_dir, manifest, "error")
        raise
    finish_run(run_dir, manifest, "done")
    print(f"status: {result.status} ({result.sim_iterations} simulations)")
    print(f"result: {run_dir / 'replication.json'}")
    return EXIT_OK if result.status == "replicated" else EXIT_FAIL


def cmd_enhance(args) -> int:
    config = _config(args)
    report = ExperimentReport.from_dict(json.loads(Path(args.report).read_text(encoding="utf-8")))
    run_dir, manifest = start_run(config, "enhance", args.run_id)
    llm = make_llm(args.llm, config, args.record)
    try:
        enhance_documents(text_arg(args.spec), text_arg(args.feature), report, llm, run_dir)
    except Exception:
        finish_run(run_dir, manifest, "error")
        raise
    finish_run(run_dir, manifest, "done")
    print(f"wrote {run_dir / 'enhanced_spec.md'} and {run_dir / 'enhanced_feature.md'}")
    return EXIT_OK


def cmd_plan(args) -> int:
    config = _config(args)
    design = read_design(args.design)
    llm = make_llm(args.llm, config, args.record)
    summary = summarize_design(design, llm)
    plan = draft_plan(summary, llm, args.limit)
    Path(args.out).write_text(json.dumps(plan.to_dict(), indent=2) + "\n", encoding="utf-8")
    print(f"plan with {len(plan.properties)} properties: {args.out}")
    return EXIT_OK


# -- parser -----------------------------------------------------------------

def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="config file (default: ./duet.config, then the user config dir)")
    common.add_argument("--llm", default="http", help="'http' or 'scripted:<fixture.jsonl>'")
    common.add_argument("--record", help="append every model exchange to this fixture file")
    common.add_argument("--run-id", help="run directory name under the runs root (must be new)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="duet", description="Agentic design understanding for RTL.")
    p.add_argument("--version", action="version", version=f"duet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    e = sub.add_parser("experiment", parents=[common], help="run one experiment and write a report")
    e.add_argument("--design", nargs="+", required=True)
    e.add_argument("--top")
    e.add_argument("--experiment", required=True, help="experiment text, or @file")
    e.add_argument("--tools", default=f"{SIM_TOOL},{WAVE_TOOL}", help="comma-separated tool names")
    e.add_argument("--max-turns", type=_positive_int)
    e.set_defaults(func=cmd_experiment)

    v = sub.add_parser("verify", parents=[common], help="run a verification plan with one flow")
    v.add_argument("--plan", required=True)
    v.add_argument("--design", nargs="+", required=True)
    v.add_argument("--top")
    v.add_argument("--flow", choices=("baseline", "duet"), required=True)
    v.add_argument("--mode", choices=("formal", "sim-feature"), default="formal")
    v.add_argument("--context-file", action="append", default=[], help="extra document given to every property")
    v.add_argument("--iteration-limit", type=_positive_int)
    v.add_argument("--max-turns", type=_positive_int)
    v.set_defaults(func=cmd_verify)

    r = sub.add_parser("report", help="compare baseline and duet records")
    r.add_argument("--baseline", required=True, help="records.json or its run directory")
    r.add_argument("--duet", required=True)
    r.add_argument("--out", default=".")
    r.add_argument("-v", "--verbose", action="store_true")
    r.set_defaults(func=cmd_report)

    w = sub.add_parser("wave", help="waveform utilities")
    wsub = w.add_subparsers(dest="wave_command", required=True)
    s = wsub.add_parser("slice", help="print a window of a VCD as a table")
    s.add_argument("--vcd", required=True)
    s.add_argument("--signals", nargs="+", required=True)
    s.add_argument("--from", dest="start", type=int, required=True)
    s.add_argument("--to", dest="end", type=int, required=True)
    s.add_argument("--max-rows", type=_positive_int, default=200)
    s.add_argument("-v", "--verbose", action="store_true")
    s.set_defaults(func=cmd_wave_slice)

    rp = sub.add_parser("replicate", parents=[common], help="reproduce a formal counterexample in simulation")
    rp.add_argument("--property", required=True, help="property text, or @file")
    rp.add_argument("--trace", required=True, help="results.json#asserts[i]")
    rp.add_argument("--design", nargs="+", required=True)
    rp.add_argument("--top")
    rp.add_argument("--cap", type=_positive_int)
    rp.set_defaults(func=cmd_replicate)

    en = sub.add_parser("enhance", parents=[common], help="improve spec and feature text with a report")
    en.add_argument("--spec", required=True, help="text or @file")
    en.add_argument("--feature", required=True, help="text or @file")
    en.add_argument("--report", required=True, help="report.json of an experiment run")
    en.set_defaults(func=cmd_enhance)

    pl = sub.add_parser("plan", parents=[common], help="draft a verification plan with the model")
    pl.add_argument("--design", nargs="+", required=True)
    pl.add_argument("--limit", type=_positive_int, default=10)
    pl.add_argument("--out", default="plan.json")
    pl.set_defaults(func=cmd_plan)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ConfigError, InvalidInput) as exc:
        print(f"duet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DuetError, OSError, ValueError, LookupError) as exc:
        print(f"duet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
