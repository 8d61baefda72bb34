import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("ci", deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large])
settings.load_profile("ci")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for outcome in ("passed", "failed"):
        for rep in terminalreporter.stats.get(outcome, []):
            if rep.when != "call" or "test_criterion_" not in rep.nodeid:
                continue
            name = rep.nodeid.split("test_criterion_")[1]
            measured = dict(rep.user_properties).get("measured", "")
            lines.append((name, "PASS" if outcome == "passed" else "FAIL", measured))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for name, status, measured in sorted(lines):
        num, _, label = name.partition("_")
        terminalreporter.write_line(f"criterion {int(num):2d} {status}  {label}: {measured}")
