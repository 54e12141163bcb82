"""Prompt assets. Each prompt is a versioned text file; ``$name`` fields are
substituted with :class:`string.Template` so SystemVerilog braces pass through."""

from __future__ import annotations

from importlib import resources
from string import Template

PROMPT_VERSION = "1"


def load_prompt(name: str, /, **fields: str) -> str:
    text = resources.files(__name__).joinpath(f"{name}.txt").read_text(encoding="utf-8")
    return Template(text).substitute(fields) if fields else text
