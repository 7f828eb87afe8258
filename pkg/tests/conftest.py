from __future__ import annotations

import os
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ledgerlab.fixtures import FIXTURE_SEED, FixtureSet, synthetic_records  # noqa: E402
from ledgerlab.identity import MembershipDirectory  # noqa: E402
from ledgerlab.ledger import BlockStore  # noqa: E402
from ledgerlab.network import FaultSchedule, ScenarioConfig, Workload, build_consortium  # noqa: E402

FIXTURE_ROOT = Path(__file__).resolve().parents[1] / "fixtures" / "v1"

# criterion number -> (passed, summary); filled by test_acceptance.py
CRITERIA: dict[int, tuple[bool, str]] = {}


@pytest.fixture(autouse=True)
def _no_env_seed(monkeypatch):
    monkeypatch.delenv("LEDGERLAB_SEED", raising=False)


@pytest.fixture(scope="session")
def fx() -> FixtureSet:
    return FixtureSet.at(FIXTURE_ROOT)


@pytest.fixture(scope="session")
def bundle(fx) -> MembershipDirectory:
    return MembershipDirectory.read_bundle(fx.bundle)


@pytest.fixture(scope="session")
def golden_bytes(fx) -> bytes:
    return fx.ledger.read_bytes()


@pytest.fixture(scope="session")
def golden_store(golden_bytes) -> BlockStore:
    return BlockStore.from_bytes(golden_bytes)


@pytest.fixture(scope="session")
def reference_run(fx):
    """The fixture workload through the full pipeline, run once per session."""
    from ledgerlab.sim import run_scenario

    config = ScenarioConfig.from_json(__import__("json").loads(fx.scenario.read_text()))
    workload = Workload.read(fx.workload)
    return run_scenario(config, FaultSchedule(), workload)


@pytest.fixture(scope="session")
def consortium():
    return build_consortium(ScenarioConfig(seed=7))


@pytest.fixture(scope="session")
def records():
    return synthetic_records(24, FIXTURE_SEED)


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(CRITERIA):
        ok, summary = CRITERIA[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {summary}")


if os.environ.get("LEDGERLAB_TEST_DEBUG"):
    import logging

    logging.basicConfig(level=logging.DEBUG)
