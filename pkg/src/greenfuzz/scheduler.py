"""Seed scheduling: perf scores, energy multipliers, champions and culling.

Two energy heuristics sit on top of a classic AFL schedule:

* airtime: the perf score of a seed is scaled by a factor between 5x (the
  cheapest seed seen so far) and 1/5x (the most expensive), interpolated
  geometrically on linearly normalised energy;
* favoured selection: the per-edge champion score ``exec_us * size`` is
  scaled by a factor between 4/5x and 5/4x, interpolated geometrically on
  log-normalised total energy.

With ``energy_aware=False`` no energy value is ever read and the scheduler is
the coverage-only baseline.
"""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass, field

from .coverage import EdgeTrace
from .corpus import SeedRecord
from .energy import EnergyReading

EPSILON_J = 1e-9
HAVOC_MAX_MULT = 16

# (ratio of exec time to queue average, multiplier); first matching row wins
SLOW_TIERS = ((4.0, 0.1), (3.0, 0.25), (2.0, 0.5), (4 / 3, 0.75))
FAST_TIERS = ((1 / 4, 3.0), (1 / 3, 2.0), (1 / 2, 1.5))


@dataclass(frozen=True)
class SchedulerConfig:
    airtime_min_mult: float = 0.2
    airtime_max_mult: float = 5.0
    favoured_min_mult: float = 0.8
    favoured_max_mult: float = 1.25
    havoc_max_mult: int = HAVOC_MAX_MULT
    energy_heuristics: bool = True

    def __post_init__(self):
        if not 0 < self.airtime_min_mult <= self.airtime_max_mult:
            raise ValueError("need 0 < airtime_min_mult <= airtime_max_mult")
        if not 0 < self.favoured_min_mult <= self.favoured_max_mult:
            raise ValueError("need 0 < favoured_min_mult <= favoured_max_mult")
        if self.havoc_max_mult < 1:
            raise ValueError("havoc_max_mult must be at least 1")


DEFAULT = SchedulerConfig()


@dataclass
class EnergyBounds:
    """Campaign-global energy extremes over measured seeds."""

    min_total_j: float = math.inf
    max_total_j: float = -math.inf
    min_cpu_j: float = math.inf
    max_cpu_j: float = -math.inf
    min_ram_j: float = math.inf
    max_ram_j: float = -math.inf

    @property
    def initialised(self) -> bool:
        return self.min_total_j <= self.max_total_j

    def update(self, e: EnergyReading) -> None:
        total = e.total()
        self.min_total_j = min(self.min_total_j, total)
        self.max_total_j = max(self.max_total_j, total)
        self.min_cpu_j = min(self.min_cpu_j, e.cpu_joules)
        self.max_cpu_j = max(self.max_cpu_j, e.cpu_joules)
        self.min_ram_j = min(self.min_ram_j, e.ram_joules)
        self.max_ram_j = max(self.max_ram_j, e.ram_joules)

    @classmethod
    def of(cls, readings: Iterable[EnergyReading]) -> EnergyBounds:
        bounds = cls()
        for e in readings:
            bounds.update(e)
        return bounds


def _airtime(value: float, lo: float, hi: float, cfg: SchedulerConfig) -> float:
    if not hi > lo:
        return 1.0
    s = min(max((value - lo) / (hi - lo), 0.0), 1.0)
    return cfg.airtime_max_mult * (cfg.airtime_min_mult / cfg.airtime_max_mult) ** s


def energy_perf_multiplier(
    e: EnergyReading, b: EnergyBounds, cfg: SchedulerConfig = DEFAULT, domain: str = "total"
) -> float:
    """Airtime factor: ``airtime_max_mult`` at the cheapest bound, falling
    geometrically to ``airtime_min_mult`` at the most expensive one."""
    if domain == "total":
        return _airtime(e.total(), b.min_total_j, b.max_total_j, cfg)
    if domain == "cpu":
        return _airtime(e.cpu_joules, b.min_cpu_j, b.max_cpu_j, cfg)
    if domain == "ram":
        return _airtime(e.ram_joules, b.min_ram_j, b.max_ram_j, cfg)
    raise ValueError(f"unknown energy domain {domain!r}")


def favoured_factor(e: EnergyReading, b: EnergyBounds, cfg: SchedulerConfig = DEFAULT) -> float:
    if not b.initialised:
        return 1.0
    lo = max(b.min_total_j, EPSILON_J)
    hi = max(b.max_total_j, EPSILON_J)
    if hi <= lo:
        return 1.0
    x = max(e.total(), EPSILON_J)
    t = (math.log(x) - math.log(lo)) / (math.log(hi) - math.log(lo))
    t = min(max(t, 0.0), 1.0)
    return cfg.favoured_min_mult * (cfg.favoured_max_mult / cfg.favoured_min_mult) ** t


def favoured_score(
    seed: SeedRecord, bounds: EnergyBounds, cfg: SchedulerConfig = DEFAULT, energy_aware: bool = True
) -> float:
    """Champion score; lower is better."""
    score = float(seed.exec_time_us * seed.size_bytes)
    if energy_aware:
        score *= favoured_factor(seed.energy, bounds, cfg)
    return score


@dataclass
class QueueEntry:
    seed: SeedRecord
    depth: int = 0
    handicap: int = 0
    favoured: bool = False
    was_fuzzed: bool = False
    perf_score: float = 0.0
    parent: str | None = None

    @property
    def id(self) -> str:
        return self.seed.id


def base_perf_score(
    entry: QueueEntry, avg_exec_us: float, avg_trace_size: float, cfg: SchedulerConfig = DEFAULT
) -> float:
    """Classic AFL score from speed, trace size, handicap and depth."""
    score = 100.0
    exec_us = entry.seed.exec_time_us
    if avg_exec_us > 0:
        ratio = exec_us / avg_exec_us
        for bound, mult in SLOW_TIERS:
            if ratio >= bound:
                score *= mult
                break
        else:
            for bound, mult in FAST_TIERS:
                if ratio <= bound:
                    score *= mult
                    break

    size = len(entry.seed.trace)
    if avg_trace_size > 0:
        if size * 0.3 > avg_trace_size:
            score *= 3
        elif size * 0.5 > avg_trace_size:
            score *= 2
        elif size * 0.75 > avg_trace_size:
            score *= 1.5
        elif size * 3 < avg_trace_size:
            score *= 0.25
        elif size * 2 < avg_trace_size:
            score *= 0.5
        elif size * 1.5 < avg_trace_size:
            score *= 0.75

    if entry.handicap >= 4:
        score *= 4
    elif entry.handicap:
        score *= 2

    d = entry.depth
    if d >= 26:
        score *= 5
    elif d >= 14:
        score *= 4
    elif d >= 8:
        score *= 3
    elif d >= 4:
        score *= 2

    return min(max(score, 1.0), cfg.havoc_max_mult * 100.0)


def scaled_perf_score(
    entry: QueueEntry,
    bounds: EnergyBounds,
    avg_exec_us: float,
    avg_trace_size: float,
    cfg: SchedulerConfig = DEFAULT,
    has_ram: bool = True,
) -> float:
    """Base score times the geometric mean of the CPU and RAM airtime factors."""
    score = base_perf_score(entry, avg_exec_us, avg_trace_size, cfg)
    e = entry.seed.energy
    mult = energy_perf_multiplier(e, bounds, cfg, "cpu")
    if has_ram:
        mult = math.sqrt(mult * energy_perf_multiplier(e, bounds, cfg, "ram"))
    return min(max(score * mult, 1.0), cfg.havoc_max_mult * 100.0)


@dataclass
class Champion:
    seed: SeedRecord
    score: float


ChampionTable = dict  # edge index -> Champion


def update_champions(
    table: dict[int, Champion],
    seed: SeedRecord,
    trace: EdgeTrace,
    bounds: EnergyBounds,
    cfg: SchedulerConfig = DEFAULT,
    energy_aware: bool = True,
) -> set[int]:
    """Make ``seed`` the champion of every edge where it scores strictly lower."""
    score = favoured_score(seed, bounds, cfg, energy_aware)
    changed = set()
    for edge in trace.edges:
        incumbent = table.get(edge)
        if incumbent is None or score < incumbent.score:
            table[edge] = Champion(seed, score)
            changed.add(edge)
    return changed


def cull_queue(queue: Iterable[QueueEntry], table: dict[int, Champion]) -> set[str]:
    """Greedy walk over edges in index order; champions of still-uncovered
    edges become favoured. Returns the favoured seed ids."""
    covered: set[int] = set()
    favoured: set[str] = set()
    for edge in sorted(table):
        if edge in covered:
            continue
        champ = table[edge].seed
        favoured.add(champ.id)
        covered |= champ.edges
    for entry in queue:
        entry.favoured = entry.id in favoured
    return favoured


def skip_probability(entry: QueueEntry, pending_favoured: int) -> float:
    if entry.favoured:
        return 0.0
    if pending_favoured:
        return 0.99
    return 0.95 if entry.was_fuzzed else 0.75


@dataclass
class Scheduler:
    """Queue, champion table and energy bounds of one campaign."""

    cfg: SchedulerConfig = DEFAULT
    has_ram: bool = True
    queue: list[QueueEntry] = field(default_factory=list)
    champions: dict[int, Champion] = field(default_factory=dict)
    bounds: EnergyBounds = field(default_factory=EnergyBounds)
    _exec_sum: int = 0
    _trace_sum: int = 0
    dirty: bool = True

    @property
    def energy_aware(self) -> bool:
        return self.cfg.energy_heuristics

    def add(self, entry: QueueEntry) -> None:
        self.queue.append(entry)
        self._exec_sum += entry.seed.exec_time_us
        self._trace_sum += len(entry.seed.trace)
        if self.energy_aware:
            self.bounds.update(entry.seed.energy)
        if update_champions(self.champions, entry.seed, entry.seed.trace, self.bounds, self.cfg, self.energy_aware):
            self.dirty = True

    @property
    def avg_exec_us(self) -> float:
        return self._exec_sum / len(self.queue) if self.queue else 0.0

    @property
    def avg_trace_size(self) -> float:
        return self._trace_sum / len(self.queue) if self.queue else 0.0

    def cull(self) -> set[str]:
        self.dirty = False
        return cull_queue(self.queue, self.champions)

    def pending_favoured(self) -> int:
        return sum(1 for q in self.queue if q.favoured and not q.was_fuzzed)

    def perf_score(self, entry: QueueEntry) -> float:
        if self.energy_aware:
            score = scaled_perf_score(
                entry, self.bounds, self.avg_exec_us, self.avg_trace_size, self.cfg, self.has_ram
            )
        else:
            score = base_perf_score(entry, self.avg_exec_us, self.avg_trace_size, self.cfg)
        entry.perf_score = score
        return score
