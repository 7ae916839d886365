import os

import pytest
from hypothesis import settings

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")

ACCEPTANCE_LINES = []


def pytest_addoption(parser):
    parser.addoption(
        "--paper-scale",
        action="store_true",
        default=False,
        help="run the full-scale (n = 1e6, hours) variants of the acceptance checks",
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "trivial: exact examples with directly asserted values")
    config.addinivalue_line("markers", "slow: takes more than a few seconds")
    config.addinivalue_line("markers", "acceptance: acceptance criteria")
    config.addinivalue_line("markers", "paper_scale: only runs with --paper-scale or SHIFTEDEULER_PAPER_SCALE=1")


def paper_scale_enabled(config) -> bool:
    return bool(config.getoption("--paper-scale")) or os.environ.get("SHIFTEDEULER_PAPER_SCALE") == "1"


def pytest_collection_modifyitems(config, items):
    if paper_scale_enabled(config):
        return
    skip = pytest.mark.skip(reason="paper-scale run; enable with --paper-scale")
    for item in items:
        if "paper_scale" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES, key=lambda s: (len(s.split()[1]), s)):
        terminalreporter.write_line(line)
