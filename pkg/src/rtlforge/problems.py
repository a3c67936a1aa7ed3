"""Benchmark problems: the JSONL schema and dataset layout adapters.

Native format is JSON Lines, one object per problem:

    {"task_id": "...", "spec": "...", "golden_testbench": "...",
     "reference_solution": "...", "module_interface": "..."}

Only ``task_id`` and ``spec`` are required; unknown fields are ignored.
Adapters also accept the two common spec-to-RTL benchmark layouts (a
HumanEval-style JSONL and a flat directory of ``*_prompt.txt`` /
``*_test.sv`` / ``*_ref.sv`` files).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import EngineError

DATASET_FORMATS = ("jsonl", "verilogeval-v1", "verilogeval-v2")


class ParseError(EngineError):
    def __init__(self, message: str, line: Optional[int] = None):
        where = f"line {line}: " if line is not None else ""
        super().__init__(f"{where}{message}")
        self.line = line


class DuplicateTaskId(EngineError):
    def __init__(self, task_id: str):
        super().__init__(f"duplicate task_id: {task_id!r}")
        self.task_id = task_id


@dataclass(frozen=True)
class Problem:
    task_id: str
    spec: str
    golden_testbench: Optional[str] = None
    reference_solution: Optional[str] = None
    module_interface: Optional[str] = None

    def __post_init__(self):
        if not self.task_id:
            raise ValueError("task_id must be non-empty")
        if not self.spec:
            raise ValueError("spec must be non-empty")

    def spec_text(self) -> str:
        """Specification as handed to the agents, with the port stub inlined."""
        if self.module_interface:
            return f"{self.spec}\n\nModule interface:\n{self.module_interface}"
        return self.spec


def _check_unique(problems: list[Problem]) -> list[Problem]:
    seen: set[str] = set()
    for p in problems:
        if p.task_id in seen:
            raise DuplicateTaskId(p.task_id)
        seen.add(p.task_id)
    return problems


def _load_jsonl(path: Path) -> list[Problem]:
    problems = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line_no) from exc
            if not isinstance(obj, dict):
                raise ParseError("problem entry must be a JSON object", line_no)
            if not obj.get("task_id"):
                raise ParseError("missing required field 'task_id'", line_no)
            if not obj.get("spec"):
                raise ParseError("missing required field 'spec'", line_no)
            problems.append(
                Problem(
                    task_id=str(obj["task_id"]),
                    spec=str(obj["spec"]),
                    golden_testbench=obj.get("golden_testbench"),
                    reference_solution=obj.get("reference_solution"),
                    module_interface=obj.get("module_interface"),
                )
            )
    return problems


def _load_humaneval_jsonl(path: Path) -> list[Problem]:
    """HumanEval-shaped JSONL: prompt is the port stub, test the golden bench."""
    problems = []
    with path.open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", line_no) from exc
            task_id = obj.get("task_id")
            if not task_id:
                raise ParseError("missing required field 'task_id'", line_no)
            spec = obj.get("detail_description") or obj.get("description") or obj.get("spec")
            if not spec:
                raise ParseError("no description field for task", line_no)
            problems.append(
                Problem(
                    task_id=str(task_id),
                    spec=str(spec),
                    golden_testbench=obj.get("test"),
                    reference_solution=obj.get("canonical_solution"),
                    module_interface=obj.get("prompt"),
                )
            )
    return problems


def _load_flat_dir(path: Path) -> list[Problem]:
    """Flat directory of <task>_prompt.txt with optional _test.sv / _ref.sv /
    _ifc.txt siblings."""
    problems = []
    for prompt_file in sorted(path.glob("*_prompt.txt")):
        task_id = prompt_file.name[: -len("_prompt.txt")]
        spec = prompt_file.read_text(encoding="utf-8")
        if not spec.strip():
            raise ParseError(f"empty prompt file for task {task_id!r}")

        def sibling(suffix: str) -> Optional[str]:
            candidate = path / f"{task_id}{suffix}"
            return candidate.read_text(encoding="utf-8") if candidate.exists() else None

        problems.append(
            Problem(
                task_id=task_id,
                spec=spec,
                golden_testbench=sibling("_test.sv") or sibling("_test.v"),
                reference_solution=sibling("_ref.sv") or sibling("_ref.v"),
                module_interface=sibling("_ifc.txt"),
            )
        )
    if not problems:
        raise ParseError(f"no *_prompt.txt files under {path}")
    return problems


def load_problems(path: str | Path, dataset_format: str = "jsonl") -> list[Problem]:
    """Load a problem set; raises ParseError / DuplicateTaskId on bad input."""
    path = Path(path)
    if not path.exists():
        raise ParseError(f"dataset not found: {path}")
    if dataset_format == "jsonl":
        return _check_unique(_load_jsonl(path))
    if dataset_format == "verilogeval-v1":
        return _check_unique(_load_humaneval_jsonl(path))
    if dataset_format == "verilogeval-v2":
        return _check_unique(_load_flat_dir(path))
    raise ParseError(f"unknown dataset format: {dataset_format!r}")
