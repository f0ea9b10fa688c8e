"""Shared fixtures and the acceptance-line reporter."""

from __future__ import annotations

import pytest

from pottsmeta.lattice import ModelParams
from pottsmeta import oracle

ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> None:
    """Record one acceptance line; printed again in the terminal summary."""
    line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def big() -> ModelParams:
    """The default large instance: q=3 on a 9x9 torus with h=0.9."""
    return ModelParams(3, 9, 9, 0.9)


@pytest.fixture(scope="session")
def micro3() -> ModelParams:
    return ModelParams(3, 3, 3, 0.9, relaxed=True)


@pytest.fixture(scope="session")
def graph3(micro3):
    return oracle.build_graph(micro3)


@pytest.fixture(scope="session")
def graph2():
    return oracle.build_graph(ModelParams(2, 3, 3, 0.9, relaxed=True))
