"""Verilog toolchain driver: compile and simulate in isolated workdirs.

Wraps two external binaries (an ``iverilog``-style compiler and a ``vvp``
style runtime) behind structured results. Binary paths come from
ToolchainConfig with PATH lookup as fallback; every run happens in its own
working directory so concurrent simulations never interfere.
"""

from __future__ import annotations

import os
import re
import shutil
import subprocess
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from .errors import EngineError

_IDENT_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_$]*$")
TIMEOUT_GRACE = 2.0


class ToolchainMissing(EngineError):
    """Compiler or simulator binary cannot be found."""


class CompileFailed(EngineError):
    """Compilation failed; carries every parseable diagnostic."""

    def __init__(self, diagnostics: list["Diagnostic"]):
        first = diagnostics[0].message if diagnostics else "unknown error"
        super().__init__(f"compile failed: {first}")
        self.diagnostics = diagnostics


@dataclass(frozen=True)
class VerilogSource:
    """A unit of Verilog text: the DUT or a testbench.

    ``sentinel`` marks a placeholder for a candidate whose syntax could not
    be repaired; sentinels are never handed to the toolchain and score 0.
    """

    kind: str  # "dut" | "testbench"
    top_module: str
    code: str
    sentinel: bool = False

    def __post_init__(self):
        if self.kind not in ("dut", "testbench"):
            raise ValueError(f"invalid source kind: {self.kind!r}")
        if not self.code:
            raise ValueError("source code must be non-empty")
        if not _IDENT_RE.match(self.top_module):
            raise ValueError(f"invalid top module name: {self.top_module!r}")


@dataclass(frozen=True)
class Diagnostic:
    file: str
    line: Optional[int]  # None when the toolchain line was unparseable
    message: str
    severity: str = "error"  # "error" | "warning"

    def __post_init__(self):
        if not self.message:
            raise ValueError("diagnostic message must be non-empty")

    def render(self) -> str:
        loc = f"{self.file}:{self.line}" if self.line is not None else (self.file or "<toolchain>")
        return f"{loc}: {self.severity}: {self.message}"


@dataclass(frozen=True)
class SimRun:
    status: str  # "ok" | "compile_failed" | "runtime_failed" | "timed_out"
    stdout: str
    diagnostics: tuple[Diagnostic, ...] = ()
    wall_time: float = 0.0


@dataclass(frozen=True)
class CompiledArtifact:
    runnable: Path
    workdir: Path


@dataclass
class ToolchainConfig:
    compiler_path: Optional[str] = None
    vvp_path: Optional[str] = None
    sim_timeout: float = 30.0
    max_concurrent: Optional[int] = None
    compile_args: tuple[str, ...] = ("-g2012",)
    _sema: threading.Semaphore = field(init=False, repr=False)

    def __post_init__(self):
        slots = self.max_concurrent or os.cpu_count() or 4
        self._sema = threading.Semaphore(slots)

    def resolve_compiler(self) -> str:
        # Absolute path: the process launches with cwd set to the workdir.
        path = self.compiler_path or shutil.which("iverilog")
        if not path or not Path(path).exists():
            raise ToolchainMissing(
                "Verilog compiler not found (set compiler_path or install iverilog)"
            )
        return str(Path(path).resolve())

    def resolve_vvp(self) -> str:
        path = self.vvp_path or shutil.which("vvp")
        if not path or not Path(path).exists():
            raise ToolchainMissing(
                "simulation runtime not found (set vvp_path or install vvp)"
            )
        return str(Path(path).resolve())


def toolchain_available(config: Optional[ToolchainConfig] = None) -> bool:
    config = config or ToolchainConfig()
    try:
        config.resolve_compiler()
        config.resolve_vvp()
        return True
    except ToolchainMissing:
        return False


_DIAG_RE = re.compile(r"^(?P<file>[^:\s][^:]*?):(?P<line>\d+):\s*(?P<msg>.+)$")


def parse_diagnostics(stderr: str) -> list[Diagnostic]:
    """Line-oriented parse of ``file:line: message`` toolchain stderr.

    Unparseable lines are kept verbatim (line=None) so no information the
    repair loop could use is ever dropped.
    """
    diagnostics: list[Diagnostic] = []
    for raw in stderr.splitlines():
        line = raw.strip()
        if not line:
            continue
        severity = "warning" if "warning" in line.lower() else "error"
        m = _DIAG_RE.match(line)
        if m:
            msg = m.group("msg").strip()
            diagnostics.append(
                Diagnostic(
                    file=m.group("file"),
                    line=int(m.group("line")),
                    message=msg or line,
                    severity=severity,
                )
            )
        else:
            diagnostics.append(Diagnostic(file="", line=None, message=line, severity=severity))
    return diagnostics


def _source_filename(source: VerilogSource, index: int, counts: dict[str, int]) -> str:
    base = "dut" if source.kind == "dut" else "tb"
    n = counts.get(base, 0)
    counts[base] = n + 1
    return f"{base}.v" if n == 0 else f"{base}{n}.v"


def write_sources(sources: list[VerilogSource], workdir: Path) -> list[Path]:
    counts: dict[str, int] = {}
    paths = []
    for i, source in enumerate(sources):
        path = workdir / _source_filename(source, i, counts)
        path.write_text(source.code, encoding="utf-8")
        paths.append(path)
    return paths


def compile_sources(
    sources: list[VerilogSource],
    workdir: str | Path,
    config: Optional[ToolchainConfig] = None,
    ignore_missing: bool = False,
) -> CompiledArtifact:
    """Compile sources in ``workdir``; returns a runnable simulation artifact.

    Raises CompileFailed with every parseable diagnostic on failure, and
    ToolchainMissing when no compiler can be resolved. ``ignore_missing``
    tells the compiler to treat unresolved module instantiations as black
    boxes (used to syntax-check a testbench before any DUT exists).
    """
    if not sources:
        raise ValueError("no sources to compile")
    if any(s.sentinel for s in sources):
        raise ValueError("sentinel sources are not compilable")
    config = config or ToolchainConfig()
    compiler = config.resolve_compiler()
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    if any(workdir.iterdir()):
        raise ValueError(f"workdir is not empty: {workdir}")
    paths = write_sources(sources, workdir)
    out = workdir / "sim.vvp"
    cmd = [compiler, *config.compile_args]
    if ignore_missing:
        cmd.append("-i")
    cmd += ["-o", out.name, *[p.name for p in paths]]
    try:
        proc = subprocess.run(
            cmd,
            cwd=str(workdir),
            capture_output=True,
            text=True,
            timeout=config.sim_timeout + TIMEOUT_GRACE,
        )
    except subprocess.TimeoutExpired as exc:
        raise CompileFailed(
            [Diagnostic(file="", line=None, message=f"compiler timed out: {exc}")]
        ) from exc
    except OSError as exc:
        raise ToolchainMissing(f"cannot launch compiler {cmd[0]}: {exc}") from exc
    if proc.returncode != 0 or not out.exists():
        diagnostics = [d for d in parse_diagnostics(proc.stderr) if d.severity == "error"]
        if not diagnostics:
            diagnostics = [
                Diagnostic(
                    file="",
                    line=None,
                    message=f"compiler exited with status {proc.returncode}",
                )
            ]
        raise CompileFailed(diagnostics)
    return CompiledArtifact(runnable=out, workdir=workdir)


def simulate(
    artifact: CompiledArtifact,
    timeout: Optional[float] = None,
    config: Optional[ToolchainConfig] = None,
) -> SimRun:
    """Run a compiled artifact; capture stdout in full; kill on timeout."""
    config = config or ToolchainConfig()
    timeout = config.sim_timeout if timeout is None else timeout
    vvp = config.resolve_vvp()
    start = time.monotonic()
    with config._sema:
        try:
            proc = subprocess.Popen(
                [vvp, artifact.runnable.name],
                cwd=str(artifact.workdir),
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
            )
        except OSError as exc:
            raise ToolchainMissing(f"cannot launch simulator {vvp}: {exc}") from exc
        try:
            stdout, stderr = proc.communicate(timeout=timeout)
        except subprocess.TimeoutExpired:
            proc.kill()
            stdout, stderr = proc.communicate()
            wall = time.monotonic() - start
            return SimRun(
                status="timed_out",
                stdout=stdout or "",
                diagnostics=tuple(parse_diagnostics(stderr or "")),
                wall_time=max(wall, timeout),
            )
    wall = time.monotonic() - start
    if proc.returncode != 0:
        diags = parse_diagnostics(stderr or "") or [
            Diagnostic(file="", line=None, message=f"simulator exited with status {proc.returncode}")
        ]
        return SimRun(
            status="runtime_failed",
            stdout=stdout or "",
            diagnostics=tuple(diags),
            wall_time=wall,
        )
    return SimRun(
        status="ok",
        stdout=stdout or "",
        diagnostics=tuple(parse_diagnostics(stderr or "")),
        wall_time=wall,
    )


def run_sim(
    sources: list[VerilogSource],
    workdir: str | Path,
    timeout: Optional[float] = None,
    config: Optional[ToolchainConfig] = None,
) -> SimRun:
    """Compile then simulate; compile failure short-circuits simulation."""
    config = config or ToolchainConfig()
    start = time.monotonic()
    try:
        artifact = compile_sources(sources, workdir, config)
    except CompileFailed as exc:
        return SimRun(
            status="compile_failed",
            stdout="",
            diagnostics=tuple(exc.diagnostics),
            wall_time=time.monotonic() - start,
        )
    return simulate(artifact, timeout, config)


def check_syntax(
    source: VerilogSource,
    workdir: str | Path,
    config: Optional[ToolchainConfig] = None,
) -> list[Diagnostic]:
    """Compile a single source with missing modules ignored.

    Returns error diagnostics (empty list = syntactically clean). This is the
    probe behind the bounded syntax-repair loop; testbenches are checkable
    before any DUT exists because unresolved instantiations are tolerated.
    """
    try:
        compile_sources([source], workdir, config, ignore_missing=True)
    except CompileFailed as exc:
        return list(exc.diagnostics)
    return []


class ToolchainSimRunner:
    """Production simulation seam: writes sources, compiles, simulates."""

    def __init__(self, config: Optional[ToolchainConfig] = None):
        self.config = config or ToolchainConfig()

    def run(self, sources: list[VerilogSource], workdir: str | Path) -> SimRun:
        return run_sim(sources, workdir, config=self.config)


class ToolchainSyntaxChecker:
    """Production syntax-check seam backed by the toolchain."""

    def __init__(self, config: Optional[ToolchainConfig] = None):
        self.config = config or ToolchainConfig()

    def __call__(self, source: VerilogSource, workdir: str | Path) -> list[Diagnostic]:
        return check_syntax(source, workdir, self.config)
