"""Benchmark harness: run pipelines over a problem set, verify against golden
testbenches, compute pass@k, and emit reports.

pass@k uses exact big-integer binomials with a single final division:

    pass@k = 1 - C(n - c, k) / C(n, k)

where n is the number of independent runs for a problem and c the number of
passing runs. The aggregate is the mean over problems. Reports are written as
``report.json`` (full), ``report.csv`` (task_id,n,c_p,pass_at_1), and
``scores_by_round.csv`` (task_id,run_index,round,score) with deterministic
byte content so reruns diff clean.
"""

from __future__ import annotations

import csv
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from pathlib import Path
from typing import Callable, Optional

from .errors import EngineError
from .golden import DEFAULT_CRITERION, GoldenCriterion, evaluate_golden
from .pipeline import EngineRuntime, RunConfig, RunOutcome, WorkdirAllocator, run_pipeline
from .problems import DuplicateTaskId, ParseError, Problem, load_problems  # noqa: F401

__all__ = [
    "Problem",
    "load_problems",
    "ParseError",
    "DuplicateTaskId",
    "DomainError",
    "TrialRecord",
    "ProblemStats",
    "BenchReport",
    "pass_at_k",
    "evaluate_golden",
    "run_bench",
    "emit_report",
    "load_report",
]


class DomainError(EngineError):
    """pass@k arguments outside 0 <= c <= n, 1 <= k <= n."""


def pass_at_k(n: int, c: int, k: int) -> float:
    """Expected success when drawing k of n runs, c of which passed. Exact."""
    if not (0 <= c <= n):
        raise DomainError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not (1 <= k <= n):
        raise DomainError(f"need 1 <= k <= n, got k={k}, n={n}")
    value = 1 - Fraction(comb(n - c, k), comb(n, k))
    return float(value)


@dataclass
class TrialRecord:
    task_id: str
    run_index: int
    passed_golden: bool
    engine_score_history: list[float] = field(default_factory=list)
    llm_calls: int = 0
    wall_time: float = 0.0
    status: str = "error"


@dataclass(frozen=True)
class ProblemStats:
    task_id: str
    n: int
    c_p: int
    pass_at_1: float


@dataclass
class BenchReport:
    problems: list[ProblemStats]
    aggregate_pass_at_1: float
    config: dict = field(default_factory=dict)


def best_score_per_round(outcome: RunOutcome) -> list[float]:
    """Flatten a run's score history to the best selected score per round."""
    return [max(scores) if scores else 0.0 for _, scores in outcome.score_history]


def run_trial(
    problem: Problem,
    run_index: int,
    config: RunConfig,
    runtime: EngineRuntime,
    criterion: GoldenCriterion = DEFAULT_CRITERION,
) -> TrialRecord:
    """One pipeline run plus the official golden verification.

    ``passed_golden`` is decided by the unmodified golden testbench when one
    exists; problems without a golden bench fall back to the engine's own
    solved status.
    """
    start = time.monotonic()
    outcome = run_pipeline(problem, config, runtime)
    if problem.golden_testbench and outcome.best is not None:
        # Disjoint from the pipeline's sim/ tree so reruns never collide.
        allocator = WorkdirAllocator(Path(runtime.transcript_dir) / "golden_check")
        result = evaluate_golden(
            outcome.best.source,
            problem.golden_testbench,
            runtime.sim_runner,
            allocator.acquire("final"),
            criterion,
        )
        passed = result.passed
    else:
        passed = outcome.status == "solved"
    return TrialRecord(
        task_id=problem.task_id,
        run_index=run_index,
        passed_golden=passed,
        engine_score_history=best_score_per_round(outcome),
        llm_calls=outcome.llm_calls,
        wall_time=time.monotonic() - start,
        status=outcome.status,
    )


def run_bench(
    problems: list[Problem],
    config: RunConfig,
    runtime_factory: Callable[[str, int], EngineRuntime],
    n_runs: int = 1,
    criterion: GoldenCriterion = DEFAULT_CRITERION,
    workers: int = 1,
    records_sink: Optional[list[TrialRecord]] = None,
) -> list[TrialRecord]:
    """All problems x n_runs independent pipelines.

    Records are appended to ``records_sink`` as they complete, so an
    interrupted run still has everything finished so far available for a
    partial report (the interrupt is re-raised).
    """
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    jobs = [(p, j) for p in problems for j in range(n_runs)]
    records = records_sink if records_sink is not None else []

    def one(job) -> TrialRecord:
        problem, j = job
        runtime = runtime_factory(problem.task_id, j)
        try:
            return run_trial(problem, j, config, runtime, criterion)
        except EngineError as exc:
            return TrialRecord(
                task_id=problem.task_id,
                run_index=j,
                passed_golden=False,
                status=f"error: {exc}",
            )

    if workers <= 1:
        for job in jobs:
            records.append(one(job))
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(one, job) for job in jobs]
            try:
                for future in futures:
                    records.append(future.result())
            except KeyboardInterrupt:
                for future in futures:
                    future.cancel()
                raise
    return records


def _stats(records: list[TrialRecord]) -> list[ProblemStats]:
    by_task: dict[str, list[TrialRecord]] = {}
    for record in records:
        by_task.setdefault(record.task_id, []).append(record)
    stats = []
    for task_id in sorted(by_task):
        runs = by_task[task_id]
        n = len(runs)
        c = sum(1 for r in runs if r.passed_golden)
        stats.append(ProblemStats(task_id=task_id, n=n, c_p=c, pass_at_1=pass_at_k(n, c, 1)))
    return stats


def emit_report(
    records: list[TrialRecord],
    out_dir: str | Path,
    config_echo: Optional[dict] = None,
) -> BenchReport:
    """Write report.json / report.csv / scores_by_round.csv; returns the report."""
    if not records:
        raise ValueError("no trial records to report")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats = _stats(records)
    aggregate = sum(s.pass_at_1 for s in stats) / len(stats)
    report = BenchReport(problems=stats, aggregate_pass_at_1=aggregate, config=config_echo or {})

    payload = {
        "aggregate_pass_at_1": aggregate,
        "config": report.config,
        "problems": [
            {"task_id": s.task_id, "n": s.n, "c_p": s.c_p, "pass_at_1": s.pass_at_1}
            for s in stats
        ],
        "runs": [
            {
                "task_id": r.task_id,
                "run_index": r.run_index,
                "passed_golden": r.passed_golden,
                "status": r.status,
                "llm_calls": r.llm_calls,
                "score_history": r.engine_score_history,
            }
            for r in sorted(records, key=lambda r: (r.task_id, r.run_index))
        ],
    }
    (out_dir / "report.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )

    with (out_dir / "report.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "n", "c_p", "pass_at_1"])
        for s in stats:
            writer.writerow([s.task_id, s.n, s.c_p, repr(s.pass_at_1)])

    with (out_dir / "scores_by_round.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "run_index", "round", "score"])
        for r in sorted(records, key=lambda r: (r.task_id, r.run_index)):
            for round_index, score in enumerate(r.engine_score_history):
                writer.writerow([r.task_id, r.run_index, round_index, repr(score)])

    return report


def load_report(out_dir: str | Path) -> BenchReport:
    """Read back report.json (round-trip check and downstream tooling)."""
    payload = json.loads((Path(out_dir) / "report.json").read_text(encoding="utf-8"))
    stats = [
        ProblemStats(
            task_id=p["task_id"], n=p["n"], c_p=p["c_p"], pass_at_1=p["pass_at_1"]
        )
        for p in payload["problems"]
    ]
    return BenchReport(
        problems=stats,
        aggregate_pass_at_1=payload["aggregate_pass_at_1"],
        config=payload.get("config", {}),
    )
