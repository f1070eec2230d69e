import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from csolab.sprites import SpriteProvider

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def train_sprites():
    return SpriteProvider.synthetic("train")


@pytest.fixture(scope="session")
def test_sprites():
    return SpriteProvider.synthetic("test")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- acceptance summary ----------------------------------------------------------
# Tests marked ``criterion(n, text)`` report one PASS/FAIL line each at the end.

_criteria: dict[int, list] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, text): acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    n, text = mark.args
    entry = _criteria.setdefault(n, [text, "PASS", ""])
    if rep.failed:
        entry[1] = "FAIL"
    elif rep.skipped and entry[1] == "PASS":
        entry[1] = "SKIP"
    detail = getattr(item, "criterion_detail", "")
    if detail and detail not in entry[2]:
        entry[2] = f"{entry[2]}; {detail}" if entry[2] else detail


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        text, status, detail = _criteria[n]
        line = f"criterion {n}: {status}  {text}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))


@pytest.fixture
def report(request):
    """Attach a one-line detail string to the criterion summary."""
    def _set(text: str):
        request.node.criterion_detail = text
    return _set
