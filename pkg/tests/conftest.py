import os
import sys
from pathlib import Path

import pytest

from ltgc.equinoctial import nominal_constants
from ltgc.shooting import NominalRecord

DATA = Path(__file__).parent / "data"

# Deterministic, single-threaded torch for every test.
os.environ.setdefault("OMP_NUM_THREADS", "1")


@pytest.fixture(scope="session")
def k():
    return nominal_constants()


@pytest.fixture(scope="session")
def nominal():
    """Frozen seed-0 nominal solution (regenerate with `ltgc nominal`)."""
    return NominalRecord.load(DATA / "nominal.json")


@pytest.fixture(scope="session")
def small_db(tmp_path_factory, nominal):
    """Twenty-trajectory rho = 0.2 database used by unit tests."""
    from ltgc.backgen import DatabaseSpec, PerturbationSpec, build_database

    spec = DatabaseSpec(name="unit", perturbation=PerturbationSpec("ball", 0.2),
                        samples_per_traj=25, trajectories=20, seed=7)
    return build_database(spec, nominal, tmp_path_factory.mktemp("db"), binary=True)


_ACCEPTANCE_RAN: set = set()


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" in report.nodeid and report.when in ("setup", "call"):
        _ACCEPTANCE_RAN.add(int(report.nodeid.split("test_criterion_")[1][:2]))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE_RAN:
        return
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", {})
    terminalreporter.section("acceptance criteria")
    for n in range(1, 12):
        if n not in _ACCEPTANCE_RAN:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
            continue
        ok, detail = results.get(n, (False, "errored before reporting"))
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
