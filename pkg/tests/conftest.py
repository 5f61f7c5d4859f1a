from __future__ import annotations

from hypothesis import settings

from helpers import ACCEPTANCE

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(
            f"criterion {number:2d} [{title}]: {'PASS' if passed else 'FAIL'} ({detail})")
