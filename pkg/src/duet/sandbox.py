"""Sandboxes and command templates for external EDA tools.

A template is a shell-like command line with exact-string placeholders
``{top}``, ``{files}`` and ``{outdir}``. A token that is exactly ``{files}``
expands to one argument per design file; elsewhere placeholders are
substituted in place (``{files}`` then joins paths with spaces).
"""

from __future__ import annotations

import os
import re
import shlex
import signal
import subprocess
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from .errors import ConfigError, InvalidInput, ToolEnvironmentError

PLACEHOLDERS = ("{top}", "{files}", "{outdir}")
_IDENT = re.compile(r"^[A-Za-z_][A-Za-z0-9_$]*$")


def check_identifier(name: str, what: str = "top_module") -> str:
    if not _IDENT.match(name or ""):
        raise InvalidInput(f"{what} {name!r} is not a valid identifier")
    return name


def require_placeholders(template: str, required: Iterable[str], label: str) -> None:
    for ph in required:
        if ph not in template:
            raise ConfigError(f"template {label} is missing placeholder {ph}: {template!r}")


def expand_template(template: str, top: str, files: Sequence[str | Path], outdir: str | Path) -> list[str]:
    files = [str(f) for f in files]
    argv: list[str] = []
    for tok in shlex.split(template):
        if tok == "{files}":
            argv.extend(files)
            continue
        argv.append(
            tok.replace("{top}", top).replace("{outdir}", str(outdir)).replace("{files}", " ".join(files))
        )
    return argv


@dataclass(frozen=True)
class CommandResult:
    argv: tuple[str, ...]
    exit_code: int
    output: str
    duration_ms: int
    timed_out: bool = False


def run_command(argv: Sequence[str], cwd: str | Path, timeout: float, label: str = "") -> CommandResult:
    """Run ``argv`` with stdout and stderr merged in order; kill the process group on timeout."""
    start = time.monotonic()
    try:
        proc = subprocess.Popen(
            list(argv), cwd=str(cwd), stdout=subprocess.PIPE, stderr=subprocess.STDOUT,
            stdin=subprocess.DEVNULL, start_new_session=True,
        )
    except FileNotFoundError:
        raise ToolEnvironmentError(f"executable {argv[0]!r} not found (template {label or ' '.join(argv)!r})") from None
    except PermissionError:
        raise ToolEnvironmentError(f"executable {argv[0]!r} is not runnable (template {label!r})") from None
    try:
        out, _ = proc.communicate(timeout=timeout)
        timed_out = False
    except subprocess.TimeoutExpired:
        try:
            os.killpg(proc.pid, signal.SIGKILL)
        except ProcessLookupError:
            pass
        out, _ = proc.communicate()
        timed_out = True
    duration = int((time.monotonic() - start) * 1000)
    if timed_out:
        duration = max(duration, int(timeout * 1000))
    return CommandResult(tuple(argv), proc.returncode, out.decode("utf-8", errors="replace"), duration, timed_out)


def make_sandbox(parent: str | Path, name: str = "sandbox") -> Path:
    """Create a fresh directory under ``parent``; never reuses an existing one."""
    parent = Path(parent)
    try:
        parent.mkdir(parents=True, exist_ok=True)
        k = 0
        while True:
            path = parent / (name if k == 0 else f"{name}-{k}")
            try:
                path.mkdir()
                return path
            except FileExistsError:
                k += 1
    except OSError as exc:
        raise OSError(f"cannot create sandbox under {parent}: {exc}") from exc


def write_files(sandbox: Path, files: Iterable[tuple[str, str]]) -> list[Path]:
    written = []
    for name, content in files:
        target = (sandbox / name).resolve()
        if sandbox.resolve() not in target.parents:
            raise InvalidInput(f"file name {name!r} escapes the sandbox")
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_bytes(content.encode("utf-8"))
        written.append(target)
    return written
