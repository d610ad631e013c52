"""Collects one PASS/FAIL line per acceptance criterion and prints them after the run."""

import pytest

_PARTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_PARTS] = {}


def _line(criterion, parts):
    ok = all(p[0] for p in parts)
    detail = "; ".join(("" if p[0] else "[fail] ") + p[1] for p in parts)
    return f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"


@pytest.fixture
def report(request):
    """``report(criterion, ok, detail)`` records one part of a criterion's verdict.

    A criterion checked by several tests fails if any of its parts fails.
    """
    parts = request.config.stash[_PARTS]

    def _report(criterion: int, ok: bool, detail: str) -> None:
        parts.setdefault(criterion, []).append((bool(ok), detail))
        print(_line(criterion, parts[criterion]))

    return _report


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    parts = config.stash.get(_PARTS, {})
    if not parts:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(parts):
        terminalreporter.write_line(_line(k, parts[k]))
