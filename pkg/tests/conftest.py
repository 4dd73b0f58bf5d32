"""Collects acceptance outcomes and prints one line per criterion after the run."""

import contextlib

import pytest

ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


class _Record:
    def __init__(self):
        self.detail = ""


@contextlib.contextmanager
def _criterion(number: int, title: str):
    rec = _Record()
    try:
        yield rec
    except BaseException:
        ACCEPTANCE[number] = ("FAIL", title, rec.detail)
        raise
    ACCEPTANCE[number] = ("PASS", title, rec.detail)


@pytest.fixture()
def criterion():
    return _criterion


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        status, title, detail = ACCEPTANCE[number]
        line = f"criterion {number:2d} {status}  {title}"
        terminalreporter.write_line(f"{line}  [{detail}]" if detail else line)
