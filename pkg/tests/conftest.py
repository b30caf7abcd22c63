"""Session-wide helpers: a cache of full training runs shared by the
end-to-end tests, and the pass/fail summary of the acceptance checks."""
import time
from dataclasses import dataclass

import pytest

from avid_acsm.config import TrainConfig
from avid_acsm.trainer import TrainResult, train

SESSION_START = time.monotonic()
ACCEPTANCE_LINES: list[str] = []

# full-size runs probe only once, at the last epoch; intermediate probes
# are logging and would double the cost
RUN_BASE = TrainConfig(probe_every=0)


@dataclass
class CachedRun:
    result: TrainResult
    seconds: float

    @property
    def history(self):
        return self.result.history


_RUNS: dict[TrainConfig, CachedRun] = {}


def full_run(**overrides) -> CachedRun:
    cfg = RUN_BASE.replace(**overrides)
    if cfg not in _RUNS:
        start = time.monotonic()
        result = train(cfg)
        _RUNS[cfg] = CachedRun(result, time.monotonic() - start)
    return _RUNS[cfg]


def report(criterion: int, ok: bool, detail: str) -> bool:
    ACCEPTANCE_LINES.append(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


@pytest.fixture(scope="session")
def runs():
    return full_run


def pytest_collection_modifyitems(items):
    # the whole-suite time budget is checked after everything else has run
    last = [it for it in items if it.get_closest_marker("suite_budget")]
    items[:] = [it for it in items if it not in last] + last


def pytest_configure(config):
    config.addinivalue_line("markers", "suite_budget: runs after every other test")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
