import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_collection_modifyitems(items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is not None:
            item.user_properties.append(("criterion", mark.args))


def pytest_terminal_summary(terminalreporter):
    rows = {}
    for outcome in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" in props and (rep.when == "call" or outcome != "passed"):
                num, title = props["criterion"]
                prev = rows.get(num, ("PASS", title))
                rows[num] = ("FAIL" if outcome != "passed" or prev[0] == "FAIL" else "PASS", title)
    if rows:
        terminalreporter.section("acceptance criteria")
        for num in sorted(rows):
            status, title = rows[num]
            terminalreporter.write_line(f"criterion {num:>2}  {status}  {title}")
