import sys
import warnings
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from imperfect_qkd import io  # noqa: E402
from imperfect_qkd.pipeline import run_pipeline  # noqa: E402

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def datasets():
    return {km: io.paper_dataset(km) for km in io.PAPER_DISTANCES}


@pytest.fixture(scope="session")
def reference_reports(datasets):
    out = {}
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for km, d in datasets.items():
            out[km] = run_pipeline(d["counts"], d["flaws"], d["config"], d["security"])
    return out


@pytest.fixture(scope="session")
def calib_inputs():
    return io.paper_calibration_inputs()


@pytest.fixture(scope="session")
def acceptance():
    """Record one pass/fail line per criterion; echoed in the terminal summary."""
    def record(tag, ok, detail):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {tag}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
