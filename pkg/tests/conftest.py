import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.register_profile("ci", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture
def rng():
    return np.random.Generator(np.random.Philox(1234))


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record one acceptance line: ``verdict(number, title, ok, detail)``."""
    lines = request.config.stash.setdefault(_VERDICTS, [])

    def record(number, title, ok, detail=""):
        lines.append((number, title, bool(ok), detail))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, detail in sorted(lines, key=lambda x: x[0]):
        terminalreporter.write_line(f"C{number:<2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
