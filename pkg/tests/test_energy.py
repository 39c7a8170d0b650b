import logging
import math
import os

import pytest
from hypothesis import given
from hypothesis import strategies as st

from greenfuzz.energy import (
    CostModel,
    EnergyReading,
    MeterBusy,
    MeterFault,
    MeterPermissionError,
    MeterUnavailable,
    RaplMeter,
    SyntheticMeter,
    counter_delta,
    discover_rapl_zones,
    make_meter,
    rapl_read,
    synthetic_cost,
)
from greenfuzz.errors import ConfigError
from greenfuzz.targets import SyntheticTarget


def make_zone(root, index, name, energy="1000\n", max_range="1000000000\n"):
    z = root / f"intel-rapl:{index}"
    z.mkdir(parents=True)
    (z / "name").write_text(name + "\n")
    (z / "energy_uj").write_text(energy)
    (z / "max_energy_range_uj").write_text(max_range)
    return z


@pytest.fixture
def powercap(tmp_path):
    root = tmp_path / "powercap"
    make_zone(root, "0", "package-0", "123456\n")
    make_zone(root, "0:0", "core", "5\n")
    make_zone(root, "0:1", "dram", "777\n")
    return root


def test_reading_validation():
    assert EnergyReading(1.0, 0.5, 3).total() == 1.5
    for bad in (math.nan, math.inf, -1.0):
        with pytest.raises(MeterFault):
            EnergyReading(bad, 0.0, 0)
        with pytest.raises(MeterFault):
            EnergyReading(0.0, bad, 0)
    with pytest.raises(MeterFault):
        EnergyReading(0.0, 0.0, -1)


def test_wraparound_example():
    assert counter_delta(999_999_900, 50, 1_000_000_000) == 150
    assert 150 / 1e6 == pytest.approx(1.5e-4)


@given(st.integers(1, 2**40).flatmap(lambda r: st.tuples(st.just(r), st.integers(0, r - 1), st.integers(0, r - 1))))
def test_wraparound_property(args):
    r, before, after = args
    d = counter_delta(before, after, r)
    assert 0 <= d < r
    assert d == (after - before) % r
    assert (before + d) % r == after


def test_counter_delta_rejects_nonsense():
    with pytest.raises(MeterFault):
        counter_delta(1, 2, 0)
    with pytest.raises(MeterFault):
        counter_delta(-1, 2, 10)
    with pytest.raises(MeterFault):
        counter_delta(1, 11, 10)


def test_synthetic_meter_reports_charge():
    m = SyntheticMeter()

    def run():
        m.charge(EnergyReading(12.0, 1.5, 40))
        return "done"

    result, reading = m.measure_around(run)
    assert result == "done"
    assert reading == EnergyReading(12.0, 1.5, 40)
    assert m.now_us() == 40


def test_synthetic_meter_zero_work():
    m = SyntheticMeter()
    assert m.measure_around(lambda: None)[1] == EnergyReading(0.0, 0.0, 0)


def test_synthetic_meter_sums_multiple_charges():
    m = SyntheticMeter()

    def run():
        m.charge(EnergyReading(0.1, 0.0, 1))
        m.charge(EnergyReading(0.2, 0.3, 2))

    assert m.measure_around(run)[1] == EnergyReading(math.fsum([0.1, 0.2]), 0.3, 3)


def test_meter_is_exclusive():
    m = SyntheticMeter()
    with pytest.raises(MeterBusy):
        m.measure_around(lambda: m.measure_around(lambda: None))
    # the failed nesting left the meter usable
    m.measure_around(lambda: None)


class TwoEdges(SyntheticTarget):
    name = "two-edges"
    labels = ["one", "two"]

    def cost_model(self):
        return CostModel(edge_cpu_j={self.e["one"]: 2.0, self.e["two"]: 3.0}, edge_ram_j={self.e["one"]: 0.5})

    def run(self, data):
        if not data:
            return {}, None
        return {self.e["one"]: 1, self.e["two"]: 1}, None


def test_synthetic_cost_sums_edge_costs():
    t = TwoEdges()
    r = synthetic_cost(b"x", t)
    assert (r.cpu_joules, r.ram_joules) == (5.0, 0.5)
    assert synthetic_cost(b"", t).total() == 0.0
    assert synthetic_cost(b"x", t) == synthetic_cost(b"x", t)


@given(
    st.dictionaries(st.integers(0, 50), st.integers(1, 20), max_size=10),
    st.dictionaries(st.integers(51, 100), st.integers(1, 20), max_size=10),
)
def test_cost_model_is_additive(a, b):
    costs = {e: (e % 7 + 1) * 0.125 for e in range(101)}
    model = CostModel(edge_cpu_j=costs, edge_ram_j=costs)
    ra, rb = model.reading(b"", a), model.reading(b"", b)
    both = model.reading(b"", {**a, **b})
    # costs are multiples of 1/8, so float sums are exact
    assert both.cpu_joules == ra.cpu_joules + rb.cpu_joules
    assert both.ram_joules == ra.ram_joules + rb.ram_joules


def test_discover_and_read(powercap):
    zones = discover_rapl_zones(powercap)
    assert [z.name for z in zones["package"]] == ["package-0"]
    assert [z.name for z in zones["dram"]] == ["dram"]
    assert rapl_read("package", powercap) == 123456
    assert rapl_read("dram", powercap) == 777


def test_missing_tree_is_unavailable(tmp_path):
    with pytest.raises(MeterUnavailable):
        rapl_read("package", tmp_path / "nope")
    with pytest.raises(MeterUnavailable):
        RaplMeter(tmp_path / "nope")


def test_dram_absent_degrades_to_cpu_only(tmp_path, caplog):
    root = tmp_path / "pc"
    make_zone(root, "0", "package-0")
    with pytest.raises(MeterUnavailable) as exc:
        rapl_read("dram", root)
    assert exc.value.domain == "dram"
    assert rapl_read("package", root) == 1000
    with caplog.at_level(logging.WARNING):
        meter = RaplMeter(root)
    assert meter.capabilities.has_cpu and not meter.capabilities.has_ram
    assert "dram" in caplog.text


def test_malformed_counter_is_fault(tmp_path):
    root = tmp_path / "pc"
    make_zone(root, "0", "package-0", energy="12ab\n")
    with pytest.raises(MeterFault):
        rapl_read("package", root)


@pytest.mark.skipif(os.geteuid() == 0, reason="root ignores file permissions")
def test_permission_denied_has_hint(tmp_path):
    root = tmp_path / "pc"
    z = make_zone(root, "0", "package-0")
    (z / "energy_uj").chmod(0)
    with pytest.raises(MeterPermissionError, match="chmod"):
        rapl_read("package", root)


def test_permission_error_mapping(tmp_path, monkeypatch):
    root = tmp_path / "pc"
    make_zone(root, "0", "package-0")
    real = type(root).read_text

    def deny(self, *a, **kw):
        if self.name == "energy_uj":
            raise PermissionError(13, "Permission denied")
        return real(self, *a, **kw)

    monkeypatch.setattr(type(root), "read_text", deny)
    with pytest.raises(MeterPermissionError):
        rapl_read("package", root)


def test_rapl_meter_wraps_and_converts(tmp_path):
    root = tmp_path / "pc"
    pkg = make_zone(root, "0", "package-0", energy="999999900\n")
    dram = make_zone(root, "0:0", "dram", energy="10\n")
    meter = RaplMeter(root)

    def work():
        (pkg / "energy_uj").write_text("50\n")
        (dram / "energy_uj").write_text("20\n")

    _, reading = meter.measure_around(work)
    assert reading.cpu_joules == 150 / 1e6
    assert reading.ram_joules == 10 / 1e6
    assert reading.duration_us >= 0


def test_make_meter(monkeypatch, tmp_path):
    assert isinstance(make_meter("synthetic"), SyntheticMeter)
    with pytest.raises(ConfigError):
        make_meter("gpu")
    monkeypatch.setenv("GREENFUZZ_METER", "rapl")
    with pytest.raises(MeterUnavailable):
        make_meter("synthetic", rapl_root=tmp_path)
