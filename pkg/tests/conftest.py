"""Collects acceptance-criterion verdicts and prints one line per criterion at the end."""

from __future__ import annotations

from dataclasses import dataclass

import pytest


@dataclass
class Verdict:
    criterion: str
    title: str
    passed: bool | None  # None: informational (non-gating) line
    detail: str


_VERDICTS: dict[str, Verdict] = {}


class Reporter:
    def record(self, criterion: str, title: str, passed: bool | None, detail: str) -> Verdict:
        v = Verdict(criterion, title, passed, detail)
        _VERDICTS[criterion] = v
        print(_format(v))
        return v

    def check(self, criterion: str, title: str, passed: bool, detail: str):
        """Record the verdict, then fail the calling test if it is negative."""
        self.record(criterion, title, bool(passed), detail)
        if not passed:
            pytest.fail(f"{criterion} {title}: {detail}", pytrace=False)


def _format(v: Verdict) -> str:
    status = {True: "PASS", False: "FAIL", None: "INFO"}[v.passed]
    return f"[{status}] {v.criterion:<5} {v.title}: {v.detail}"


@pytest.fixture(scope="session")
def report() -> Reporter:
    return Reporter()


def _criterion_key(key: str):
    head, _, tail = key.partition(".")
    return int(head[1:]), tail


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_VERDICTS, key=_criterion_key):
        terminalreporter.write_line(_format(_VERDICTS[key]))
