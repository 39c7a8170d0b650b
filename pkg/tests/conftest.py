from pathlib import Path

import pytest

from greenfuzz.corpus import SeedRecord
from greenfuzz.coverage import EdgeTrace
from greenfuzz.energy import EnergyReading
from greenfuzz.targets import fixture_corpus


def record(id, edges, energy=1.0, size=1, exec_us=1, ram=0.0, map_size=1 << 16):
    """A SeedRecord with hit class 1 on every edge in ``edges``."""
    trace = EdgeTrace({e: 1 for e in edges}, map_size)
    return SeedRecord(id, b"x" * size, trace, EnergyReading(energy, ram, exec_us), exec_us)


@pytest.fixture
def write_corpus(tmp_path):
    def write(model_or_seeds, name="corpus") -> Path:
        seeds = fixture_corpus(model_or_seeds) if isinstance(model_or_seeds, str) else model_or_seeds
        d = tmp_path / name
        d.mkdir()
        for k, v in seeds.items():
            (d / k).write_bytes(v)
        return d

    return write


@pytest.fixture(autouse=True)
def _no_meter_override(monkeypatch):
    monkeypatch.delenv("GREENFUZZ_METER", raising=False)


# criterion number -> verdict line, filled in by test_acceptance.py
ACCEPTANCE: dict[str, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split(".")[0]), k)):
            terminalreporter.write_line(ACCEPTANCE[key])
