"""Energy meters: Intel RAPL via powercap sysfs, and a deterministic synthetic meter.

Every meter follows the same protocol in ``measure_around``: snapshot the
counters, run the execution, snapshot again and attribute the difference to
that one execution. RAPL counters are system-wide, so campaigns serialise
executions per meter.
"""

from __future__ import annotations

import errno
import logging
import math
import os
import time
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import TypeVar

from .errors import ConfigError, GreenFuzzError

log = logging.getLogger(__name__)

T = TypeVar("T")

POWERCAP_ROOT = Path("/sys/class/powercap")
MICROJOULES_PER_JOULE = 1_000_000


class EnergyError(GreenFuzzError):
    pass


class MeterUnavailable(EnergyError):
    """A counter or domain is missing on this machine."""

    def __init__(self, domain: str, detail: str = ""):
        self.domain = domain
        super().__init__(f"energy domain {domain!r} unavailable" + (f": {detail}" if detail else ""))


class MeterPermissionError(EnergyError):
    """The counter exists but cannot be read by this user."""

    def __init__(self, path: Path):
        self.path = path
        super().__init__(
            f"permission denied reading {path}; RAPL counters are root-only on recent kernels. "
            f"Run as root or grant read access, e.g. `sudo chmod a+r {path}`."
        )


class MeterFault(EnergyError):
    """The meter produced an impossible value (malformed counter, negative delta)."""


class MeterBusy(EnergyError):
    """A second measurement was started while one is in flight on the same meter."""


@dataclass(frozen=True)
class EnergyReading:
    cpu_joules: float = 0.0
    ram_joules: float = 0.0
    duration_us: int = 0

    def __post_init__(self):
        for name in ("cpu_joules", "ram_joules"):
            value = getattr(self, name)
            if not math.isfinite(value) or value < 0:
                raise MeterFault(f"{name} must be finite and non-negative, got {value!r}")
        if self.duration_us < 0:
            raise MeterFault(f"negative duration {self.duration_us}")

    def total(self) -> float:
        return self.cpu_joules + self.ram_joules

    def __add__(self, other: EnergyReading) -> EnergyReading:
        return EnergyReading(
            self.cpu_joules + other.cpu_joules,
            self.ram_joules + other.ram_joules,
            self.duration_us + other.duration_us,
        )


ZERO = EnergyReading()


@dataclass(frozen=True)
class MeterCapabilities:
    has_cpu: bool
    has_ram: bool
    resolution_uj: int

    def __post_init__(self):
        if (self.has_cpu or self.has_ram) and self.resolution_uj <= 0:
            raise ValueError("resolution must be positive when a domain is present")


def counter_delta(before: int, after: int, max_range: int) -> int:
    """Wraparound-corrected difference of two readings of a counter in [0, max_range]."""
    if max_range <= 0:
        raise MeterFault(f"max_energy_range must be positive, got {max_range}")
    for value in (before, after):
        if not 0 <= value <= max_range:
            raise MeterFault(f"counter value {value} outside [0, {max_range}]")
    delta = (after - before) % max_range
    if delta < 0:  # unreachable for sane inputs; surfaced rather than clamped
        raise MeterFault(f"negative energy delta {delta}")
    return delta


class Meter:
    """Base class. Subclasses provide ``_snapshot`` and ``_reading``."""

    name = "meter"
    capabilities = MeterCapabilities(False, False, 0)

    def __init__(self):
        self._busy = False

    def now_us(self) -> int:
        """Campaign clock in microseconds."""
        return time.monotonic_ns() // 1000

    def measure_around(self, execute: Callable[[], T]) -> tuple[T, EnergyReading]:
        if self._busy:
            raise MeterBusy(f"{self.name} meter already has a measurement in flight")
        self._busy = True
        try:
            before = self._snapshot()
            result = execute()
            after = self._snapshot()
        finally:
            self._busy = False
        return result, self._reading(before, after)

    def _snapshot(self):
        raise NotImplementedError

    def _reading(self, before, after) -> EnergyReading:
        raise NotImplementedError


class SyntheticMeter(Meter):
    """Deterministic meter fed by synthetic cost models.

    Targets running under this meter ``charge`` it with their modelled cost.
    Time is virtual: the clock advances by the modelled duration of each
    charged execution, so campaigns are bit-reproducible.
    """

    name = "synthetic"
    capabilities = MeterCapabilities(has_cpu=True, has_ram=True, resolution_uj=1)

    def __init__(self):
        super().__init__()
        self._pending: list[EnergyReading] = []
        self._clock_us = 0
        self.charges = 0

    def charge(self, reading: EnergyReading) -> None:
        self._pending.append(reading)
        self._clock_us += reading.duration_us
        self.charges += 1

    def now_us(self) -> int:
        return self._clock_us

    def _snapshot(self):
        return len(self._pending)

    def _reading(self, before, after) -> EnergyReading:
        charged = self._pending[before:after]
        del self._pending[:]
        if not charged:
            return ZERO
        if len(charged) == 1:
            return charged[0]
        return EnergyReading(
            math.fsum(r.cpu_joules for r in charged),
            math.fsum(r.ram_joules for r in charged),
            sum(r.duration_us for r in charged),
        )


@dataclass(frozen=True)
class RaplZone:
    path: Path
    name: str
    max_range_uj: int

    @property
    def energy_file(self) -> Path:
        return self.path / "energy_uj"


def _read_uj(path: Path, domain: str) -> int:
    try:
        text = path.read_text()
    except PermissionError:
        raise MeterPermissionError(path) from None
    except OSError as exc:
        if exc.errno == errno.EACCES:
            raise MeterPermissionError(path) from None
        raise MeterUnavailable(domain, f"cannot read {path}: {exc.strerror}") from None
    try:
        value = int(text.strip())
    except ValueError:
        raise MeterFault(f"malformed counter in {path}: {text!r}") from None
    if value < 0:
        raise MeterFault(f"negative counter in {path}: {value}")
    return value


def discover_rapl_zones(root: Path = POWERCAP_ROOT) -> dict[str, list[RaplZone]]:
    """Map domain ('package' / 'dram') to its zones under the powercap tree."""
    domains: dict[str, list[RaplZone]] = {"package": [], "dram": []}
    if not root.is_dir():
        return domains
    for path in sorted(root.glob("intel-rapl:*")):
        try:
            name = (path / "name").read_text().strip()
        except OSError:
            continue
        if name.startswith("package"):
            domain = "package"
        elif name == "dram":
            domain = "dram"
        else:
            continue
        max_range = _read_uj(path / "max_energy_range_uj", domain)
        domains[domain].append(RaplZone(path, name, max_range))
    return domains


def rapl_read(domain: str, root: Path = POWERCAP_ROOT, package: int = 0) -> int:
    """Raw ``energy_uj`` counter of one RAPL domain, in microjoules.

    Wraparound is the caller's business (see ``counter_delta``).
    """
    if domain not in ("package", "dram"):
        raise ValueError(f"unknown RAPL domain {domain!r}")
    zones = discover_rapl_zones(root)[domain]
    if len(zones) <= package:
        raise MeterUnavailable(domain, f"no such zone under {root}")
    return _read_uj(zones[package].energy_file, domain)


class RaplMeter(Meter):
    name = "rapl"

    def __init__(self, root: Path | str = POWERCAP_ROOT):
        super().__init__()
        self.root = Path(root)
        domains = discover_rapl_zones(self.root)
        self.package_zones = domains["package"]
        self.dram_zones = domains["dram"]
        if not self.package_zones:
            raise MeterUnavailable("package", f"no intel-rapl package zone under {self.root}")
        # probe once so permission problems surface at startup
        for zone in self.package_zones + self.dram_zones:
            _read_uj(zone.energy_file, zone.name)
        if not self.dram_zones:
            log.warning("RAPL dram domain absent; measuring CPU package energy only")
        self.capabilities = MeterCapabilities(True, bool(self.dram_zones), 1)

    def _snapshot(self):
        return (
            time.monotonic_ns(),
            [_read_uj(z.energy_file, "package") for z in self.package_zones],
            [_read_uj(z.energy_file, "dram") for z in self.dram_zones],
        )

    def _reading(self, before, after) -> EnergyReading:
        t0, pkg0, dram0 = before
        t1, pkg1, dram1 = after
        cpu = sum(counter_delta(b, a, z.max_range_uj) for z, b, a in zip(self.package_zones, pkg0, pkg1))
        ram = sum(counter_delta(b, a, z.max_range_uj) for z, b, a in zip(self.dram_zones, dram0, dram1))
        return EnergyReading(
            cpu / MICROJOULES_PER_JOULE,
            ram / MICROJOULES_PER_JOULE,
            (t1 - t0) // 1000,
        )


@dataclass(frozen=True)
class CostModel:
    """Energy and time model of a synthetic target.

    Costs are per edge *hit*, so repeated hits of one edge add up. Edges not in
    the tables cost the defaults.
    """

    edge_cpu_j: Mapping[int, float] = field(default_factory=dict)
    default_edge_cpu_j: float = 0.0
    byte_cpu_j: float = 0.0
    base_cpu_j: float = 0.0
    edge_ram_j: Mapping[int, float] = field(default_factory=dict)
    default_edge_ram_j: float = 0.0
    byte_ram_j: float = 0.0
    base_ram_j: float = 0.0
    base_us: int = 1
    edge_us: float = 0.0
    byte_us: float = 0.0

    def reading(self, data: bytes, hits: Mapping[int, int]) -> EnergyReading:
        n = len(data)
        cpu = self.edge_cpu_j
        ram = self.edge_ram_j
        dcpu = self.default_edge_cpu_j
        dram = self.default_edge_ram_j
        cpu_terms = [self.base_cpu_j, self.byte_cpu_j * n]
        ram_terms = [self.base_ram_j, self.byte_ram_j * n]
        total_hits = 0
        for edge, count in hits.items():
            cpu_terms.append(count * cpu.get(edge, dcpu))
            ram_terms.append(count * ram.get(edge, dram))
            total_hits += count
        duration = self.base_us + int(self.edge_us * total_hits + self.byte_us * n)
        return EnergyReading(math.fsum(cpu_terms), math.fsum(ram_terms), duration)


def synthetic_cost(data: bytes, target) -> EnergyReading:
    """Modelled energy of running ``data`` through a synthetic target (pure)."""
    hits, _status = target.run(data)
    return target.cost.reading(data, hits)


def meter_kind(kind: str | None = None) -> str:
    """Effective meter name; ``GREENFUZZ_METER`` overrides ``kind``."""
    return os.environ.get("GREENFUZZ_METER") or kind or "synthetic"


def make_meter(kind: str | None = None, rapl_root: Path | str = POWERCAP_ROOT) -> Meter:
    """Build a meter by name. ``GREENFUZZ_METER`` overrides ``kind``."""
    kind = meter_kind(kind)
    if kind == "synthetic":
        return SyntheticMeter()
    if kind == "rapl":
        return RaplMeter(rapl_root)
    raise ConfigError(f"unknown meter kind {kind!r} (expected 'rapl' or 'synthetic')")
