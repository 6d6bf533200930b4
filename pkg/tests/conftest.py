from __future__ import annotations

import pytest

from _graphs import FIG1_SEEDS, fig1_graph, fig1_transition

ACCEPTANCE: list[tuple[str, bool, str]] = []


def record(criterion: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE.append((criterion, ok, detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE:
        line = f"{'PASS' if ok else 'FAIL'}  {name}"
        if detail:
            line += f"  ({detail})"
        terminalreporter.write_line(line)


@pytest.fixture
def fig1():
    return fig1_graph()


@pytest.fixture
def fig1_w():
    return fig1_transition()


@pytest.fixture
def fig1_seeds():
    return FIG1_SEEDS
