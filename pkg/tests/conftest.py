from __future__ import annotations

import pytest

from rtlforge.agents import PromptLibrary
from rtlforge.pipeline import EngineRuntime
from rtlforge.simbridge import ToolchainConfig, toolchain_available

from toolstub import ScriptedBackend, StubSimRunner, StubSyntaxChecker, write_stub_toolchain

requires_toolchain = pytest.mark.skipif(
    not toolchain_available(), reason="Verilog toolchain (iverilog/vvp) not installed"
)


@pytest.fixture(scope="session")
def templates() -> PromptLibrary:
    return PromptLibrary()


@pytest.fixture(scope="session")
def stub_toolchain(tmp_path_factory) -> tuple[str, str]:
    """(compiler_path, vvp_path) of the marker-driven subprocess stubs."""
    bindir = tmp_path_factory.mktemp("stubbin")
    return write_stub_toolchain(bindir)


@pytest.fixture
def stub_tool_config(stub_toolchain) -> ToolchainConfig:
    compiler, vvp = stub_toolchain
    return ToolchainConfig(compiler_path=compiler, vvp_path=vvp, sim_timeout=5.0)


@pytest.fixture
def make_runtime(tmp_path, templates):
    """EngineRuntime factory over the in-process stub toolchain."""

    def factory(script, subdir: str = "run") -> tuple[EngineRuntime, ScriptedBackend]:
        backend = ScriptedBackend(script)
        runtime = EngineRuntime(
            backend=backend,
            sim_runner=StubSimRunner(),
            syntax_checker=StubSyntaxChecker(),
            templates=templates,
            transcript_dir=tmp_path / subdir,
        )
        return runtime, backend

    return factory


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    seen: dict[str, str] = {}
    for status in ("passed", "failed", "error", "skipped"):
        for report in terminalreporter.stats.get(status, []):
            nodeid = getattr(report, "nodeid", "")
            if "test_acceptance" not in nodeid:
                continue
            name = nodeid.split("::")[-1]
            if status == "skipped":
                seen.setdefault(name, "SKIP")
            elif status in ("failed", "error"):
                seen[name] = "FAIL"
            else:
                seen.setdefault(name, "PASS")
    if not seen:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(seen):
        terminalreporter.write_line(f"[acceptance] {name}: {seen[name]}")
