"""Textual state-checkpoint protocol: log grammar, parser, scoring, windows.

Generated testbenches log one machine-readable line per check event and a
single trailing summary. The grammar is bit-exact and normative for both the
testbench-generation prompt and this parser:

    CHECK time=<t> in:<name>=<val>[,<name>=<val>...] dut:<name>=<val>[,...] \
exp:<name>=<val>[,...] status=<MATCH|MISMATCH>
    SUMMARY total=<tc> mismatches=<m> first_mismatch=<t|none>

``<t>`` is a check-event ordinal (clock edge for sequential designs, stimulus
vector for combinational ones). Values are Verilog literal texts such as
``1``, ``0``, ``4'b0101``, ``8'hff``, ``x``, ``z``; they never contain spaces
or commas. A ``?`` bit in an expected value marks that bit as don't-care.

A record counts as matched when every output signal's DUT value equals its
expected value, where any ``x`` or ``z`` bit in a DUT output is a mismatch
unless the expected value marks that bit ``?``. Lines not matching the
grammar are ignored; a SUMMARY line, when present, is cross-validated against
the parsed records and any disagreement flags the testbench as buggy.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import EngineError

DEFAULT_WINDOW_LEN = 8


class TraceError(EngineError):
    """Simulation output violates the checkpoint protocol."""


class NoChecksFound(TraceError):
    """Zero CHECK lines: the testbench emitted no checkpoints."""


class SummaryMismatch(TraceError):
    """SUMMARY line disagrees with the parsed CHECK records."""


class EmptyTrace(EngineError):
    """Scoring requires at least one check."""


class NotAMismatch(EngineError):
    """Window anchor is not a mismatched record present in the trace."""


_CHECK_RE = re.compile(
    r"^\s*CHECK time=(\d+) in:(\S*) dut:(\S+) exp:(\S+) status=(MATCH|MISMATCH)\s*$"
)
_SUMMARY_RE = re.compile(
    r"^\s*SUMMARY total=(\d+) mismatches=(\d+) first_mismatch=(\d+|none)\s*$"
)


# ---------------------------------------------------------------------------
# Value comparison

_LITERAL_RE = re.compile(r"^(\d+)?'[sS]?([bBdDhHoO])([0-9a-fA-FxXzZ?_]+)$")

_HEX_BITS = {
    **{format(i, "x"): format(i, "04b") for i in range(16)},
    "x": "xxxx",
    "z": "zzzz",
    "?": "????",
}
_OCT_BITS = {
    **{format(i, "o"): format(i, "03b") for i in range(8)},
    "x": "xxx",
    "z": "zzz",
    "?": "???",
}


def value_bits(text: str) -> Optional[str]:
    """Normalize a Verilog value literal to a bit string (msb first).

    Returns characters in ``01xz?`` or None when the text is not a
    recognizable literal (comparison then falls back to exact text equality).
    """
    text = text.strip()
    if not text:
        return None
    if re.fullmatch(r"[01xXzZ?]+", text):
        return text.lower()
    if text.isdigit():
        return format(int(text), "b")
    m = _LITERAL_RE.match(text)
    if m is None:
        return None
    width_s, base, digits = m.groups()
    digits = digits.replace("_", "").lower()
    base = base.lower()
    if base == "b":
        if not re.fullmatch(r"[01xz?]+", digits):
            return None
        bits = digits
    elif base == "h":
        if not all(d in _HEX_BITS for d in digits):
            return None
        bits = "".join(_HEX_BITS[d] for d in digits)
    elif base == "o":
        if not all(d in _OCT_BITS for d in digits):
            return None
        bits = "".join(_OCT_BITS[d] for d in digits)
    else:  # decimal
        if not digits.isdigit():
            return None
        bits = format(int(digits), "b")
    if width_s:
        width = int(width_s)
        if width <= 0:
            return None
        if len(bits) < width:
            pad = bits[0] if bits[0] in "xz?" else "0"
            bits = pad * (width - len(bits)) + bits
        elif len(bits) > width:
            bits = bits[-width:]
    return bits


def values_match(dut_text: str, expected_text: str) -> bool:
    """Compare one DUT output value against its expected value.

    Bit rule: an expected ``?`` bit always matches; a DUT ``x``/``z`` bit
    never matches otherwise; remaining bits compare literally. Unparseable
    values fall back to exact text equality (still rejecting x/z in the DUT
    text).
    """
    dut_bits = value_bits(dut_text)
    exp_bits = value_bits(expected_text)
    if dut_bits is None or exp_bits is None:
        return dut_text == expected_text and not re.search(r"[xzXZ]", dut_text)
    width = max(len(dut_bits), len(exp_bits))
    dut_bits = dut_bits.rjust(width, "0")
    exp_bits = exp_bits.rjust(width, "0")
    for d, e in zip(dut_bits, exp_bits):
        if e == "?":
            continue
        if d in "xz":
            return False
        if d != e:
            return False
    return True


# ---------------------------------------------------------------------------
# Trace model


@dataclass(frozen=True)
class CheckRecord:
    """One check event: inputs, observed outputs, expected outputs.

    ``matched`` is derived, never trusted from the log: it is true iff every
    output signal's DUT value equals its expected value under values_match.
    """

    t: int
    inputs: dict[str, str]
    dut_outputs: dict[str, str]
    expected_outputs: dict[str, str]
    matched: bool = field(init=False)

    def __post_init__(self):
        if self.t < 0:
            raise ValueError("check ordinal must be >= 0")
        if set(self.dut_outputs) != set(self.expected_outputs):
            raise ValueError(
                f"dut/exp signal sets differ at t={self.t}: "
                f"{sorted(self.dut_outputs)} vs {sorted(self.expected_outputs)}"
            )
        if not self.dut_outputs:
            raise ValueError(f"record at t={self.t} has no output signals")
        ok = all(
            values_match(self.dut_outputs[name], self.expected_outputs[name])
            for name in self.dut_outputs
        )
        object.__setattr__(self, "matched", ok)


@dataclass(frozen=True)
class CheckTrace:
    records: tuple[CheckRecord, ...]
    total_checks: int
    mismatches: int

    @classmethod
    def from_records(cls, records) -> "CheckTrace":
        records = tuple(records)
        for prev, cur in zip(records, records[1:]):
            if cur.t <= prev.t:
                raise ValueError(f"check ordinals must strictly increase: {prev.t} -> {cur.t}")
        return cls(
            records=records,
            total_checks=len(records),
            mismatches=sum(1 for r in records if not r.matched),
        )


@dataclass(frozen=True)
class WaveWindow:
    """Checkpoint records covering [max(anchor - window_len, 0), anchor]."""

    anchor_t: int
    window_len: int
    records: tuple[CheckRecord, ...]


@dataclass(frozen=True)
class Score:
    """Normalized mismatch score in [0, 1]; 0 when not simulatable at all."""

    value: float
    simulatable: bool = True

    def __post_init__(self):
        if not (0.0 <= self.value <= 1.0):
            raise ValueError("score must lie in [0, 1]")
        if not self.simulatable and self.value != 0.0:
            raise ValueError("unsimulatable results must score 0")

    @classmethod
    def unsimulatable(cls) -> "Score":
        return cls(0.0, simulatable=False)


# ---------------------------------------------------------------------------
# Operations


def _parse_pairs(section: str, line_no: int) -> dict[str, str]:
    pairs: dict[str, str] = {}
    if not section:
        return pairs
    for chunk in section.split(","):
        name, sep, value = chunk.partition("=")
        if not sep or not name:
            raise TraceError(f"malformed signal pair {chunk!r} on line {line_no}")
        pairs[name] = value
    return pairs


def parse_trace(stdout: str) -> CheckTrace:
    """Parse simulation stdout into a CheckTrace.

    Lines matching the CHECK grammar become records in order; everything else
    is ignored. The last SUMMARY line, if any, is cross-validated against the
    parsed records (total, mismatch count, and first mismatch ordinal).
    """
    records: list[CheckRecord] = []
    summary: Optional[tuple[int, int, Optional[int]]] = None
    for line_no, line in enumerate(stdout.splitlines(), start=1):
        m = _CHECK_RE.match(line)
        if m:
            t_s, in_s, dut_s, exp_s, _status = m.groups()
            try:
                record = CheckRecord(
                    t=int(t_s),
                    inputs=_parse_pairs(in_s, line_no),
                    dut_outputs=_parse_pairs(dut_s, line_no),
                    expected_outputs=_parse_pairs(exp_s, line_no),
                )
            except ValueError as exc:
                raise TraceError(f"line {line_no}: {exc}") from exc
            records.append(record)
            continue
        s = _SUMMARY_RE.match(line)
        if s:
            total_s, mism_s, first_s = s.groups()
            summary = (int(total_s), int(mism_s), None if first_s == "none" else int(first_s))
    if not records:
        raise NoChecksFound("no CHECK lines found in simulation output")
    try:
        trace = CheckTrace.from_records(records)
    except ValueError as exc:
        raise TraceError(str(exc)) from exc
    if summary is not None:
        total, mismatches, first = summary
        computed_first = earliest_mismatch(trace)
        if total != trace.total_checks:
            raise SummaryMismatch(
                f"SUMMARY total={total} but {trace.total_checks} CHECK lines parsed"
            )
        if mismatches != trace.mismatches:
            raise SummaryMismatch(
                f"SUMMARY mismatches={mismatches} but {trace.mismatches} computed from records"
            )
        if first != computed_first:
            raise SummaryMismatch(
                f"SUMMARY first_mismatch={first} but records give {computed_first}"
            )
    return trace


def score(trace: CheckTrace) -> Score:
    """Normalized mismatch score: 1 - mismatches/total_checks, exact rational."""
    if trace.total_checks < 1:
        raise EmptyTrace("cannot score a trace with zero checks")
    value = 1 - Fraction(trace.mismatches, trace.total_checks)
    return Score(float(value))


def earliest_mismatch(trace: CheckTrace) -> Optional[int]:
    """Smallest check ordinal with a mismatch, or None when all matched."""
    for record in trace.records:
        if not record.matched:
            return record.t
    return None


def extract_window(trace: CheckTrace, anchor_t: int, window_len: int) -> WaveWindow:
    """Records with ordinal in the closed interval [max(anchor-len, 0), anchor].

    The anchor must be a mismatched record present in the trace.
    """
    if window_len < 1:
        raise ValueError("window_len must be >= 1")
    anchor = next((r for r in trace.records if r.t == anchor_t), None)
    if anchor is None or anchor.matched:
        raise NotAMismatch(f"t={anchor_t} is not a mismatch point in this trace")
    lo = max(anchor_t - window_len, 0)
    selected = tuple(r for r in trace.records if lo <= r.t <= anchor_t)
    return WaveWindow(anchor_t=anchor_t, window_len=window_len, records=selected)


def render_window(window: WaveWindow) -> str:
    """Deterministic columnar text for a window; prompt-ready.

    One row per check event; columns are the ordinal, each input, then each
    output as a dut/exp pair, then the match marker. Signal names are sorted,
    inputs before outputs; the final row is flagged as the first mismatch.
    """
    input_names = sorted({name for r in window.records for name in r.inputs})
    output_names = sorted({name for r in window.records for name in r.dut_outputs})
    header = ["t"]
    header += input_names
    for name in output_names:
        header += [f"{name}:dut", f"{name}:exp"]
    header.append("status")

    rows = [header]
    for r in window.records:
        row = [str(r.t)]
        row += [r.inputs.get(name, "-") for name in input_names]
        for name in output_names:
            row += [r.dut_outputs.get(name, "-"), r.expected_outputs.get(name, "-")]
        row.append("MATCH" if r.matched else "MISMATCH")
        rows.append(row)

    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    lines = []
    for idx, row in enumerate(rows):
        line = "  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row))
        if idx == len(rows) - 1 and idx > 0:
            line += "  <-- first mismatch"
        lines.append(line)
    return "\n".join(lines)


def format_trace(trace: CheckTrace) -> str:
    """Emit a trace back out in the CHECK/SUMMARY grammar (round-trippable)."""

    def pairs(mapping: dict[str, str]) -> str:
        return ",".join(f"{k}={v}" for k, v in mapping.items())

    lines = []
    for r in trace.records:
        status = "MATCH" if r.matched else "MISMATCH"
        lines.append(
            f"CHECK time={r.t} in:{pairs(r.inputs)} dut:{pairs(r.dut_outputs)} "
            f"exp:{pairs(r.expected_outputs)} status={status}"
        )
    first = earliest_mismatch(trace)
    lines.append(
        f"SUMMARY total={trace.total_checks} mismatches={trace.mismatches} "
        f"first_mismatch={'none' if first is None else first}"
    )
    return "\n".join(lines)


def render_excerpt(trace: CheckTrace, window_len: int = DEFAULT_WINDOW_LEN) -> str:
    """Human/LLM-readable excerpt: the window at the first mismatch, or a
    short head of the trace when everything matched."""
    first = earliest_mismatch(trace)
    if first is not None:
        return render_window(extract_window(trace, first, window_len))
    head = trace.records[: window_len + 1]
    partial = CheckTrace.from_records(head)
    return format_trace(partial)
