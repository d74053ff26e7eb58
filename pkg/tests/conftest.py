"""Shared pytest hooks: the acceptance suite reports one line per criterion."""

import pytest

_ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


class AcceptanceRecorder:
    def record(self, number: int, title: str, checks: dict[str, tuple[bool, str]]) -> bool:
        """Store the verdict for one criterion; returns whether every check passed."""
        passed = all(ok for ok, _ in checks.values())
        detail = "; ".join(f"{name}: {text}{'' if ok else ' [FAIL]'}" for name, (ok, text) in checks.items())
        _ACCEPTANCE[number] = (title, passed, detail)
        print(f"#{number:<2} {'PASS' if passed else 'FAIL'}  {title}  ({detail})")
        return passed


@pytest.fixture(scope="session")
def acceptance():
    return AcceptanceRecorder()


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[number]
        terminalreporter.write_line(f"#{number:<2} {'PASS' if passed else 'FAIL'}  {title}")
        terminalreporter.write_line(f"      {detail}")
    n_pass = sum(1 for _, ok, _ in _ACCEPTANCE.values() if ok)
    terminalreporter.write_line(f"{n_pass}/{len(_ACCEPTANCE)} criteria passed")
