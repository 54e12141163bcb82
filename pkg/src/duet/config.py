"""Configuration loading and run-directory bookkeeping.

Config is TOML. Search order: ``--config``, ``./duet.config``, then
``<user config dir>/duet/config.toml``. Environment variables override scalar
fields (``DUET_<SECTION>_<KEY>``, e.g. ``DUET_LIMITS_MAX_TURNS=5``) and take
precedence over the file. Example::

    [model]
    endpoint_url = "http://localhost:8000/v1"
    model_name = "gpt-5"
    api_key_env_var_name = "OPENAI_API_KEY"

    [sim]
    compile = "iverilog -g2012 -o {outdir}/sim -s tb {files}"
    run = "vvp {outdir}/sim"

    [formal]
    wrapper = "python3 run_engine.py --top {top} --out {outdir} {files}"

    [limits]
    max_turns = 10
    replication_cap = 5

    [runs]
    root = "runs"
"""

from __future__ import annotations

import hashlib
import json
import os
import secrets
import time
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Mapping

import platformdirs
import tomli

from .agent import LoopLimits, Truncation
from .errors import ConfigError, InvalidInput
from .formal import check_wrapper_template
from .llm import ModelConfig
from .sim import SimTemplates

CONFIG_NAME = "duet.config"


@dataclass(frozen=True)
class Limits:
    max_turns: int = 10
    per_tool_timeout: float = 300.0
    max_wall_time: float = 1800.0
    replication_cap: int = 5
    truncate_head: int = 8192
    truncate_tail: int = 8192
    waveform_max_rows: int = 200
    iteration_limit: int = 10
    property_max_turns: int = 40
    sim_timeout: float = 60.0
    formal_timeout: float = 300.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name.startswith("truncate_"):
                if v < 0:
                    raise ConfigError(f"limits.{f.name} must be >= 0, got {v!r}")
            elif not v > 0:
                raise ConfigError(f"limits.{f.name} must be > 0, got {v!r}")

    @property
    def loop(self) -> LoopLimits:
        return LoopLimits(self.max_turns, self.per_tool_timeout, self.max_wall_time)

    @property
    def truncation(self) -> Truncation:
        return Truncation(self.truncate_head, self.truncate_tail)


@dataclass(frozen=True)
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    sim_templates: SimTemplates | None = None
    formal_wrapper: str | None = None
    limits: Limits = field(default_factory=Limits)
    runs_root: Path = Path("runs")
    cover_prefix: str = "vac_"
    source: str = ""

    def to_document(self) -> dict:
        return {
            "model": asdict(self.model),
            "sim": asdict(self.sim_templates) if self.sim_templates else None,
            "formal": {"wrapper": self.formal_wrapper, "cover_prefix": self.cover_prefix},
            "limits": asdict(self.limits),
            "runs": {"root": str(self.runs_root)},
        }

    @property
    def digest(self) -> str:
        text = json.dumps(self.to_document(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _coerce(value: str, like: Any, name: str):
    try:
        if isinstance(like, bool):
            return value.strip().lower() in ("1", "true", "yes", "on")
        if isinstance(like, int):
            return int(value)
        if isinstance(like, float):
            return float(value)
    except ValueError:
        raise ConfigError(f"{name}: cannot parse {value!r}") from None
    return value


_SCHEMA = {
    "model": {f.name: f.default for f in fields(ModelConfig)},
    "sim": {"compile": "", "run": ""},
    "formal": {"wrapper": "", "cover_prefix": "vac_"},
    "limits": {f.name: f.default for f in fields(Limits)},
    "runs": {"root": "runs"},
}


def _apply_env(doc: dict, environ: Mapping[str, str]) -> dict:
    doc = {k: dict(v) for k, v in doc.items()}
    for section, keys in _SCHEMA.items():
        for key, default in keys.items():
            var = f"DUET_{section}_{key}".upper()
            if var in environ:
                doc.setdefault(section, {})[key] = _coerce(environ[var], default, var)
    return doc


def config_from_document(doc: Mapping[str, Any], environ: Mapping[str, str] | None = None, source: str = "") -> Config:
    environ = os.environ if environ is None else environ
    for section, body in doc.items():
        if section not in _SCHEMA:
            raise ConfigError(f"{source or 'config'}: unknown section [{section}]")
        if not isinstance(body, Mapping):
            raise ConfigError(f"{source or 'config'}: [{section}] must be a table")
        unknown = set(body) - set(_SCHEMA[section])
        if unknown:
            raise ConfigError(f"{source or 'config'}: unknown keys in [{section}]: {sorted(unknown)}")
    doc = _apply_env(dict(doc), environ)
    try:
        model = ModelConfig(**doc.get("model", {}))
        limits = Limits(**doc.get("limits", {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    sim = doc.get("sim", {})
    templates = None
    if sim.get("compile") or sim.get("run"):
        templates = SimTemplates(sim.get("compile", ""), sim.get("run", ""))
    formal = doc.get("formal", {})
    wrapper = formal.get("wrapper") or None
    if wrapper:
        check_wrapper_template(wrapper)
    root = Path(doc.get("runs", {}).get("root", "runs"))
    if source and not root.is_absolute():
        root = Path(source).resolve().parent / root
    return Config(model, templates, wrapper, limits, root, formal.get("cover_prefix", "vac_"), source)


def find_config(explicit: str | Path | None = None, cwd: str | Path | None = None) -> Path | None:
    if explicit:
        p = Path(explicit)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        return p
    local = Path(cwd or ".") / CONFIG_NAME
    if local.is_file():
        return local
    user = Path(platformdirs.user_config_dir("duet")) / "config.toml"
    return user if user.is_file() else None


def load_config(path: str | Path | None = None, environ: Mapping[str, str] | None = None,
                cwd: str | Path | None = None) -> Config:
    """Load and validate a config; with no file found, defaults plus environment overrides."""
    found = find_config(path, cwd)
    if found is None:
        return config_from_document({}, environ)
    try:
        doc = tomli.loads(found.read_text(encoding="utf-8"))
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{found}: {exc}") from None
    return config_from_document(doc, environ, str(found))


# -- run directories --------------------------------------------------------

RUN_STATUSES = ("running", "done", "error")


@dataclass
class RunManifest:
    run_id: str
    command: str
    config_digest: str
    status: str = "running"
    started_at: str = ""
    finished_at: str = ""

    def write(self, run_dir: Path) -> None:
        if self.status not in RUN_STATUSES:
            raise InvalidInput(f"unknown run status {self.status!r}")
        (run_dir / "manifest.json").write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n",
                                               encoding="utf-8")

    @classmethod
    def read(cls, run_dir: str | Path) -> "RunManifest":
        return cls(**json.loads((Path(run_dir) / "manifest.json").read_text(encoding="utf-8")))


def new_run_id() -> str:
    return time.strftime("%Y%m%d-%H%M%S") + "-" + secrets.token_hex(3)


def start_run(config: Config, command: str, run_id: str | None = None) -> tuple[Path, RunManifest]:
    """Create ``<runs_root>/<run_id>`` and write its manifest; an existing run id is refused."""
    rid = run_id or new_run_id()
    if "/" in rid or rid in (".", "..") or not rid.strip():
        raise InvalidInput(f"invalid run id {rid!r}")
    root = Path(config.runs_root)
    root.mkdir(parents=True, exist_ok=True)
    run_dir = root / rid
    try:
        run_dir.mkdir()
    except FileExistsError:
        raise InvalidInput(f"run id {rid!r} already exists under {root}; runs are immutable") from None
    manifest = RunManifest(rid, command, config.digest, "running", time.strftime("%Y-%m-%dT%H:%M:%S"))
    manifest.write(run_dir)
    return run_dir, manifest


def finish_run(run_dir: Path, manifest: RunManifest, status: str) -> None:
    manifest.status = status
    manifest.finished_at = time.strftime("%Y-%m-%dT%H:%M:%S")
    manifest.write(run_dir)


def with_limits(config: Config, **overrides) -> Config:
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, limits=replace(config.limits, **overrides)) if overrides else config
