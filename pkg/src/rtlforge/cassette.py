"""Cassette files: recorded LLM request/response pairs for offline replay.

A cassette is JSON Lines, one object per recorded call:

    {"key": ..., "tag": ..., "request_digest": ..., "completions": [...],
     "recorded_at": ...}

``key`` is ``"<tag>:<request_digest>"`` where the digest is a SHA-256 over
the canonicalized messages and sampling parameters (see gateway.request_key).
The digest deliberately excludes the model id and the timestamp, so a cassette
survives a model rename but loudly misses when a prompt template changes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import EngineError

REQUIRED_FIELDS = ("key", "tag", "request_digest", "completions", "recorded_at")


class CassetteError(EngineError):
    """Cassette file is missing, unreadable, or structurally invalid."""


@dataclass(frozen=True)
class CassetteEntry:
    key: str
    tag: str
    request_digest: str
    completions: tuple[str, ...]
    recorded_at: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "key": self.key,
                "tag": self.tag,
                "request_digest": self.request_digest,
                "completions": list(self.completions),
                "recorded_at": self.recorded_at,
            },
            sort_keys=True,
        )


def _entry_from_obj(obj: dict, line_no: int) -> CassetteEntry:
    for field in REQUIRED_FIELDS:
        if field not in obj:
            raise CassetteError(f"cassette line {line_no}: missing field {field!r}")
    completions = obj["completions"]
    if not isinstance(completions, list) or not all(isinstance(c, str) for c in completions):
        raise CassetteError(f"cassette line {line_no}: completions must be a list of strings")
    if not completions:
        raise CassetteError(f"cassette line {line_no}: completions is empty")
    return CassetteEntry(
        key=str(obj["key"]),
        tag=str(obj["tag"]),
        request_digest=str(obj["request_digest"]),
        completions=tuple(completions),
        recorded_at=str(obj["recorded_at"]),
    )


def iter_entries(path: str | Path):
    """Yield (line_no, CassetteEntry) for every line of the cassette."""
    path = Path(path)
    if not path.exists():
        raise CassetteError(f"cassette not found: {path}")
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CassetteError(f"cassette line {line_no}: invalid JSON ({exc})") from exc
            yield line_no, _entry_from_obj(obj, line_no)


def load_cassette(path: str | Path) -> dict[str, CassetteEntry]:
    """Load a cassette into a key-indexed map. Later duplicates win."""
    entries: dict[str, CassetteEntry] = {}
    for _, entry in iter_entries(path):
        entries[entry.key] = entry
    return entries


def append_entry(path: str | Path, entry: CassetteEntry) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("a", encoding="utf-8") as fh:
        fh.write(entry.to_json() + "\n")


def verify_cassette(path: str | Path) -> list[str]:
    """Integrity-check a cassette; returns a list of problems (empty = clean).

    Checks per entry: required fields present, key consistent with
    tag/request_digest, and no duplicate keys across the file.
    """
    problems: list[str] = []
    seen: dict[str, int] = {}
    try:
        for line_no, entry in iter_entries(path):
            expected_key = f"{entry.tag}:{entry.request_digest}"
            if entry.key != expected_key:
                problems.append(
                    f"line {line_no}: key {entry.key!r} does not match tag:digest {expected_key!r}"
                )
            if entry.key in seen:
                problems.append(
                    f"line {line_no}: duplicate key {entry.key!r} (first at line {seen[entry.key]})"
                )
            else:
                seen[entry.key] = line_no
    except CassetteError as exc:
        problems.append(str(exc))
    return problems
