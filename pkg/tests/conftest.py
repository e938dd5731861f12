import shutil

import pytest
from hypothesis import HealthCheck, settings

from helpers import ACCEPTANCE_LINES, FIXTURE_CACHE
from metatasks.build import build_metatask
from metatasks.openml_client import ClientConfig, OpenMLClient

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def offline_cache(tmp_path):
    """A private copy of the recorded OpenML responses."""
    dest = tmp_path / "cache"
    shutil.copytree(FIXTURE_CACHE, dest)
    return dest


@pytest.fixture(scope="session")
def fixture_metatasks():
    """The three fixture tasks built offline, keyed by task id."""
    client = OpenMLClient(ClientConfig(cache_dir=FIXTURE_CACHE, offline_mode=True))
    out = {}
    for task_id in (900001, 900002, 900003):
        out[task_id] = build_metatask(client, task_id)
    return out


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
