"""VCD (IEEE 1364 value change dump) parsing and bounded waveform views.

Values are 4-state vectors stored as packed two-bit symbols. A parsed
document keeps its changes in flat columns (time, signal code, value) so
large dumps stay compact; per-signal change indices are built on demand.
"""

from __future__ import annotations

import difflib
import fnmatch
import re
from array import array
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .errors import SignalLookupError, VCDParseError

_SYMBOLS = "01xz"
_CODE = {"0": 0, "1": 1, "x": 2, "z": 3, "X": 2, "Z": 3}
# Non-1364 states some simulators emit; folded onto 4-state.
_FOLDED = {"u": 2, "U": 2, "w": 2, "W": 2, "-": 2, "l": 0, "L": 0, "h": 1, "H": 1}


class Vector4:
    """Immutable 4-state vector, MSB first, two bits per symbol."""

    __slots__ = ("width", "packed")

    def __init__(self, width: int, packed: int):
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "packed", packed)

    def __setattr__(self, name, value):
        raise AttributeError("Vector4 is immutable")

    @classmethod
    def from_string(cls, text: str) -> "Vector4":
        packed = 0
        for ch in text:
            code = _CODE.get(ch)
            if code is None:
                code = _FOLDED.get(ch)
                if code is None:
                    raise ValueError(f"invalid 4-state symbol {ch!r} in {text!r}")
            packed = (packed << 2) | code
        return cls(len(text), packed)

    @classmethod
    def from_int(cls, value: int, width: int) -> "Vector4":
        return cls.from_string(format(value & ((1 << width) - 1), f"0{width}b") if width else "")

    @classmethod
    def all_x(cls, width: int) -> "Vector4":
        return cls(width, int("10" * width, 2) if width else 0)

    def symbols(self) -> tuple[str, ...]:
        return tuple(_SYMBOLS[(self.packed >> (2 * i)) & 3] for i in reversed(range(self.width)))

    def __str__(self) -> str:
        return "".join(self.symbols())

    def __repr__(self) -> str:
        return f"Vector4({str(self)!r})"

    def __eq__(self, other) -> bool:
        return isinstance(other, Vector4) and self.width == other.width and self.packed == other.packed

    def __hash__(self) -> int:
        return hash((self.width, self.packed))

    def __len__(self) -> int:
        return self.width

    @property
    def is_known(self) -> bool:
        return not any(self.packed >> (2 * i + 1) & 1 for i in range(self.width))

    def to_int(self) -> int:
        if not self.is_known:
            raise ValueError(f"{self} has x/z bits")
        return int(str(self), 2) if self.width else 0

    def extend(self, width: int) -> "Vector4":
        """Left-extend to ``width`` per VCD rules (0/1 lead pads 0, x pads x, z pads z)."""
        if width <= self.width:
            return self
        lead = (self.packed >> (2 * (self.width - 1))) & 3 if self.width else 0
        pad = 0 if lead in (0, 1) else lead
        fill = 0
        for _ in range(width - self.width):
            fill = (fill << 2) | pad
        return Vector4(width, (fill << (2 * self.width)) | self.packed)


_SCALAR_CACHE = {ch: Vector4.from_string(ch) for ch in "01xz"}


def _vector(text: str) -> Vector4:
    v = _SCALAR_CACHE.get(text)
    return v if v is not None else Vector4.from_string(text)


@dataclass(frozen=True)
class Timescale:
    magnitude: int = 1
    unit: str = "ns"

    def __str__(self) -> str:
        return f"{self.magnitude}{self.unit}"


@dataclass(frozen=True)
class Signal:
    id_code: str
    hierarchical_name: str
    width: int
    var_type: str = "wire"
    bit_range: str = ""

    @property
    def is_real(self) -> bool:
        return self.var_type in ("real", "realtime")


@dataclass(frozen=True)
class Change:
    time: int
    id_code: str
    value: Vector4 | float


class WaveformDocument:
    """Parsed VCD. Immutable after construction; queries are read-only."""

    def __init__(self, timescale: Timescale, signals: Sequence[Signal], times, codes, values: list,
                 id_codes: Sequence[str], warnings: Sequence[str] = ()):
        self.timescale = timescale
        self.signals = tuple(signals)
        self._times = np.asarray(times, dtype=np.int64)
        self._codes = np.asarray(codes, dtype=np.int32)
        self._values = values
        self._id_codes = tuple(id_codes)
        self._code_of = {c: i for i, c in enumerate(self._id_codes)}
        self.warnings = tuple(warnings)
        self._by_name = {}
        for s in self.signals:
            self._by_name.setdefault(s.hierarchical_name, s)
        self._index_cache: dict[int, np.ndarray] = {}

    @classmethod
    def from_changes(cls, timescale: Timescale, signals: Sequence[Signal], changes: Iterable[Change]) -> "WaveformDocument":
        ids: list[str] = []
        for s in signals:
            if s.id_code not in ids:
                ids.append(s.id_code)
        code_of = {c: i for i, c in enumerate(ids)}
        times, codes, values = [], [], []
        for ch in changes:
            times.append(ch.time)
            codes.append(code_of[ch.id_code])
            values.append(ch.value)
        return cls(timescale, signals, times, codes, values, ids)

    def __len__(self) -> int:
        return len(self._values)

    @property
    def changes(self) -> list[Change]:
        ids = self._id_codes
        return [Change(int(t), ids[c], v) for t, c, v in zip(self._times.tolist(), self._codes.tolist(), self._values)]

    @property
    def end_time(self) -> int:
        return int(self._times[-1]) if len(self._times) else 0

    def __eq__(self, other) -> bool:
        if not isinstance(other, WaveformDocument):
            return NotImplemented
        return (self.timescale == other.timescale and self.signals == other.signals
                and self.changes == other.changes)

    def signal(self, name: str) -> Signal:
        try:
            return self._by_name[name]
        except KeyError:
            near = difflib.get_close_matches(name, list(self._by_name), n=5)
            hint = f"; did you mean: {', '.join(near)}" if near else ""
            raise SignalLookupError(f"unknown signal {name!r}{hint}") from None

    def change_indices(self, id_code: str) -> np.ndarray:
        code = self._code_of[id_code]
        idx = self._index_cache.get(code)
        if idx is None:
            idx = np.flatnonzero(self._codes == code)
            self._index_cache[code] = idx
        return idx

    def change_times(self, id_code: str) -> np.ndarray:
        return self._times[self.change_indices(id_code)]

    def values_at(self, signal: Signal, times: Sequence[int]) -> list:
        idx = self.change_indices(signal.id_code)
        pos = np.searchsorted(self._times[idx], np.asarray(times, dtype=np.int64), side="right") - 1
        out = []
        for p in pos.tolist():
            if p < 0:
                out.append(float("nan") if signal.is_real else Vector4.all_x(signal.width))
            else:
                v = self._values[idx[p]]
                out.append(v if signal.is_real else v.extend(signal.width))
        return out


# -- parsing ----------------------------------------------------------------

_TIMESCALE = re.compile(r"^(1|10|100)\s*(s|ms|us|ns|ps|fs)$")


class _Parser:
    def __init__(self, lines: Iterable[str]):
        self.lines = iter(lines)
        self.lineno = 0
        self.warnings: list[str] = []
        self.signals: list[Signal] = []
        self.ids: list[str] = []
        self.code_of: dict[str, int] = {}
        self.widths: dict[str, int] = {}
        self.reals: set[str] = set()
        self.timescale = Timescale()
        self.toks = self._stream()

    # header ------------------------------------------------------------
    def _stream(self) -> Iterator[str]:
        for line in self.lines:
            self.lineno += 1
            yield from line.split()

    def _section(self, keyword: str, line: int) -> list[str]:
        body = []
        for tok in self.toks:
            if tok == "$end":
                return body
            body.append(tok)
        raise VCDParseError(f"unexpected end of input inside {keyword} (opened at line {line})", self.lineno)

    def parse_header(self) -> None:
        scope: list[str] = []
        for tok in self.toks:
            line = self.lineno
            if tok == "$enddefinitions":
                self._section(tok, line)
                return
            if not tok.startswith("$"):
                raise VCDParseError(f"unexpected token {tok!r} in header", line)
            body = self._section(tok, line)
            if tok == "$timescale":
                text = "".join(body)
                m = _TIMESCALE.match(text)
                if not m:
                    raise VCDParseError(f"bad timescale {text!r}", line)
                self.timescale = Timescale(int(m.group(1)), m.group(2))
            elif tok == "$scope":
                if len(body) < 2:
                    raise VCDParseError("$scope needs a type and a name", line)
                scope.append(body[1])
            elif tok == "$upscope":
                if not scope:
                    raise VCDParseError("$upscope without matching $scope", line)
                scope.pop()
            elif tok == "$var":
                self._declare(body, scope, line)
            elif tok in ("$date", "$version", "$comment"):
                pass
            else:
                self.warnings.append(f"line {line}: skipped unknown header section {tok}")
        raise VCDParseError("unexpected end of input before $enddefinitions", self.lineno)

    def _declare(self, body: list[str], scope: list[str], line: int) -> None:
        if len(body) < 4:
            raise VCDParseError(f"malformed $var: {' '.join(body)!r}", line)
        var_type, size, id_code, ref = body[:4]
        bit_range = "".join(body[4:])
        try:
            width = int(size)
        except ValueError:
            raise VCDParseError(f"bad $var size {size!r}", line) from None
        name = ".".join([*scope, ref])
        self.signals.append(Signal(id_code, name, width, var_type, bit_range))
        if id_code not in self.code_of:
            self.code_of[id_code] = len(self.ids)
            self.ids.append(id_code)
            self.widths[id_code] = width
            if var_type in ("real", "realtime"):
                self.reals.add(id_code)

    # body --------------------------------------------------------------
    def parse_body(self) -> WaveformDocument:
        times = array("q")
        codes = array("i")
        values: list = []
        code_of = self.code_of
        now = 0
        seen_time = False
        in_comment = False
        pending: tuple[str, int] | None = None  # vector/real value awaiting its id code
        for tok in self.toks:
            if in_comment:
                if tok == "$end":
                    in_comment = False
                continue
            if pending is not None:
                value_text, kind = pending
                pending = None
                code = code_of.get(tok)
                if code is None:
                    raise VCDParseError(f"value change for undeclared id code {tok!r}", self.lineno)
                if kind == 1:
                    try:
                        v = float(value_text)
                    except ValueError:
                        raise VCDParseError(f"bad real value {value_text!r}", self.lineno) from None
                else:
                    v = self._vector(value_text, tok)
                times.append(now)
                codes.append(code)
                values.append(v)
                continue
            c = tok[0]
            if c == "#":
                try:
                    t = int(tok[1:])
                except ValueError:
                    raise VCDParseError(f"bad timestamp {tok!r}", self.lineno) from None
                if seen_time and t < now:
                    raise VCDParseError(f"timestamp #{t} follows #{now}; timestamps must not decrease", self.lineno)
                now, seen_time = t, True
            elif c in "01xXzZuUwWlLhH-" and len(tok) > 1:
                code = code_of.get(tok[1:])
                if code is None:
                    raise VCDParseError(f"value change for undeclared id code {tok[1:]!r}", self.lineno)
                times.append(now)
                codes.append(code)
                values.append(self._vector(c, tok[1:]))
            elif c in "bB":
                pending = (tok[1:], 0)
            elif c in "rR":
                pending = (tok[1:], 1)
            elif c == "$":
                if tok == "$comment":
                    in_comment = True
                elif tok == "$dumpoff":
                    self.warnings.append(f"line {self.lineno}: $dumpoff values applied as changes")
                elif tok in ("$dumpon", "$dumpvars", "$dumpall", "$end"):
                    pass
                else:
                    raise VCDParseError(f"unexpected keyword {tok!r} in value changes", self.lineno)
            else:
                raise VCDParseError(f"unrecognized value change {tok!r}", self.lineno)
        if pending is not None:
            raise VCDParseError(f"input truncated: value {pending[0]!r} has no id code", self.lineno)
        if in_comment:
            raise VCDParseError("input truncated inside $comment", self.lineno)
        return WaveformDocument(self.timescale, self.signals, np.frombuffer(times, dtype=np.int64) if len(times) else [],
                                np.frombuffer(codes, dtype=np.int32) if len(codes) else [], values, self.ids,
                                self.warnings)

    def _vector(self, text: str, id_code: str) -> Vector4:
        try:
            v = _vector(text)
        except ValueError as exc:
            raise VCDParseError(str(exc), self.lineno) from None
        width = self.widths[id_code]
        if v.width > width:
            self.warnings.append(f"line {self.lineno}: value {text} wider than {width} bits for {id_code!r}; truncated")
            v = Vector4.from_string(text[-width:])
        return v


def parse_vcd_lines(lines: Iterable[str]) -> WaveformDocument:
    p = _Parser(lines)
    p.parse_header()
    return p.parse_body()


def parse_vcd(text: str) -> WaveformDocument:
    return parse_vcd_lines(text.splitlines())


def parse_vcd_file(path: str | Path) -> WaveformDocument:
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        return parse_vcd_lines(fh)


# -- emission ---------------------------------------------------------------

def _format_value(v, signal: Signal) -> str:
    if isinstance(v, float):
        return f"r{v!r} {signal.id_code}"
    if signal.width == 1 and v.width == 1:
        return f"{v}{signal.id_code}"
    return f"b{v} {signal.id_code}"


def emit_vcd(doc: WaveformDocument) -> str:
    """Serialize a document; ``parse_vcd(emit_vcd(d)) == d``."""
    out = [f"$timescale {doc.timescale} $end"]
    current: list[str] = []
    first_sig: dict[str, Signal] = {}
    for s in doc.signals:
        *path, ref = s.hierarchical_name.split(".")
        common = 0
        while common < min(len(path), len(current)) and path[common] == current[common]:
            common += 1
        out += ["$upscope $end"] * (len(current) - common)
        out += [f"$scope module {p} $end" for p in path[common:]]
        current = path
        rng = f" {s.bit_range}" if s.bit_range else ""
        out.append(f"$var {s.var_type} {s.width} {s.id_code} {ref}{rng} $end")
        first_sig.setdefault(s.id_code, s)
    out += ["$upscope $end"] * len(current)
    out.append("$enddefinitions $end")
    last = None
    for ch in doc.changes:
        if ch.time != last:
            out.append(f"#{ch.time}")
            last = ch.time
        out.append(_format_value(ch.value, first_sig[ch.id_code]))
    return "\n".join(out) + "\n"


# -- queries ----------------------------------------------------------------

def value_at(doc: WaveformDocument, signal_name: str, time: int):
    """Value of the last change at or before ``time``; all-x before the first change."""
    sig = doc.signal(signal_name)
    return doc.values_at(sig, [time])[0]


@dataclass(frozen=True)
class SliceQuery:
    signal_selectors: tuple[str, ...]
    start_tick: int
    end_tick: int
    max_rows: int = 200

    def __post_init__(self):
        if isinstance(self.signal_selectors, str):
            object.__setattr__(self, "signal_selectors", (self.signal_selectors,))
        else:
            object.__setattr__(self, "signal_selectors", tuple(self.signal_selectors))
        if self.start_tick > self.end_tick:
            raise ValueError(f"window start {self.start_tick} is after end {self.end_tick}")
        if self.max_rows <= 0:
            raise ValueError("max_rows must be > 0")


@dataclass(frozen=True)
class SliceTable:
    header: tuple[str, ...]
    rows: tuple[tuple[int, tuple[Vector4, ...]], ...] = ()
    truncated: bool = False
    change_times: int = field(default=0)


def resolve_selectors(doc: WaveformDocument, selectors: Iterable[str]) -> list[Signal]:
    names = [s.hierarchical_name for s in doc.signals if not s.is_real]
    picked: list[str] = []
    for sel in selectors:
        matches = [sel] if sel in names else [n for n in names if fnmatch.fnmatchcase(n, sel)]
        for n in matches:
            if n not in picked:
                picked.append(n)
    if not picked:
        sels = ", ".join(selectors)
        near = difflib.get_close_matches(sels, names, n=5)
        hint = f"; near matches: {', '.join(near)}" if near else ""
        raise SignalLookupError(f"no signal matches {sels!r}{hint}")
    return [doc.signal(n) for n in picked]


def slice_waveform(doc: WaveformDocument, query: SliceQuery) -> SliceTable:
    """Rows at ``start_tick`` and at every selected change time in (start, end]."""
    sigs = resolve_selectors(doc, query.signal_selectors)
    lo, hi = query.start_tick, query.end_tick
    parts = []
    for s in sigs:
        t = doc.change_times(s.id_code)
        parts.append(t[(t > lo) & (t <= hi)])
    times = np.unique(np.concatenate(parts)) if parts else np.array([], dtype=np.int64)
    n = len(times)
    truncated = n > query.max_rows
    if truncated:
        keep = np.unique(np.round(np.linspace(0, n - 1, query.max_rows)).astype(np.int64))
        times = times[keep]
    row_times = [lo, *times.tolist()]
    columns = [doc.values_at(s, row_times) for s in sigs]
    rows = tuple((t, tuple(col[i] for col in columns)) for i, t in enumerate(row_times))
    return SliceTable(tuple(s.hierarchical_name for s in sigs), rows, truncated, n)


# The public operation name; ``slice`` would shadow the builtin inside this module.
slice = slice_waveform  # noqa: A001


def render_table(table: SliceTable) -> str:
    header = ("time", *table.header)
    cells = [[str(t), *(str(v) for v in vals)] for t, vals in table.rows]
    widths = [max(len(header[i]), *(len(r[i]) for r in cells)) if cells else len(header[i])
              for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in [list(header), *cells]]
    if table.truncated:
        lines.append(f"# thinned: {len(table.rows) - 1} of {table.change_times} change times shown")
    return "\n".join(lines)
