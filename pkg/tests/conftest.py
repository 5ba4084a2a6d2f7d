import time
from dataclasses import dataclass
from pathlib import Path

import pytest
from threadpoolctl import threadpool_limits

from pseudovc import pipeline as pl


@dataclass
class DeskRun:
    ws: pl.Workspace
    seconds: float
    out: dict

    @property
    def root(self) -> Path:
        return self.ws.root


def run_desk(root, seed=0) -> DeskRun:
    ws = pl.Workspace(root, seed)
    t = time.perf_counter()
    # same BLAS threading as the CLI so float reductions match
    with threadpool_limits(1):
        out = pl.run_pipeline(ws, log=lambda msg: None)
    return DeskRun(ws, time.perf_counter() - t, out)


@pytest.fixture(scope="session")
def desk(tmp_path_factory) -> DeskRun:
    """One full desk-scale pipeline run shared by every test that needs trained models."""
    return run_desk(tmp_path_factory.mktemp("desk"))


# acceptance criterion number -> (passed, detail); printed in the terminal summary
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
