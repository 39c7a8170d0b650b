"""Campaign time series (``plot_data.csv``) and curve resampling."""

from __future__ import annotations

import csv
import io
import math
from collections.abc import Sequence
from dataclasses import astuple, dataclass, fields
from pathlib import Path


@dataclass(frozen=True)
class StatsTick:
    t_seconds: float
    total_execs: int
    unique_edges: int
    cumulative_cpu_j: float
    cumulative_ram_j: float
    execs_per_sec: float
    queue_len: int
    favoured_count: int

    @property
    def cumulative_energy_j(self) -> float:
        return self.cumulative_cpu_j + self.cumulative_ram_j


FIELDS = tuple(f.name for f in fields(StatsTick))
_TYPES = tuple(f.type for f in fields(StatsTick))


def _fmt(value) -> str:
    # repr round-trips floats exactly
    return repr(value) if isinstance(value, float) else str(value)


def format_tick(tick: StatsTick) -> str:
    return ",".join(_fmt(v) for v in astuple(tick)) + "\n"


class StatsRecorder:
    """Collects ticks every ``tick_seconds`` or ``tick_execs``, whichever
    comes first, appending each one to ``plot_data.csv`` as it is taken."""

    def __init__(self, path: Path | None = None, tick_seconds: float = 1.0, tick_execs: int = 100):
        self.ticks: list[StatsTick] = []
        self.tick_seconds = tick_seconds
        self.tick_execs = tick_execs
        self._last_t = -math.inf
        self._last_execs = 0
        self._fh = None
        if path is not None:
            self._fh = open(path, "w", newline="")
            self._fh.write(",".join(FIELDS) + "\n")

    def due(self, t: float, execs: int) -> bool:
        return execs - self._last_execs >= self.tick_execs or t - self._last_t >= self.tick_seconds

    def record(self, t, execs, edges, cpu_j, ram_j, queue_len, favoured) -> StatsTick | None:
        if self.ticks:
            last = self.ticks[-1]
            if execs == last.total_execs or t <= last.t_seconds:
                return None
            rate = (execs - last.total_execs) / (t - last.t_seconds)
        else:
            rate = execs / t if t > 0 else 0.0
        tick = StatsTick(float(t), execs, edges, float(cpu_j), float(ram_j), float(rate), queue_len, favoured)
        self.ticks.append(tick)
        self._last_t = t
        self._last_execs = execs
        if self._fh is not None:
            self._fh.write(format_tick(tick))
            self._fh.flush()
        return tick

    def close(self) -> None:
        if self._fh is not None:
            self._fh.close()
            self._fh = None


def dumps_plot_data(ticks: Sequence[StatsTick]) -> str:
    return ",".join(FIELDS) + "\n" + "".join(format_tick(t) for t in ticks)


def loads_plot_data(text: str) -> list[StatsTick]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        return []
    if tuple(header) != FIELDS:
        raise ValueError(f"unexpected plot_data header {header}")
    ticks = []
    for row in reader:
        if not row:
            continue
        values = [float(v) if typ == "float" else int(v) for v, typ in zip(row, _TYPES)]
        ticks.append(StatsTick(*values))
    return ticks


def read_plot_data(path: Path | str) -> list[StatsTick]:
    return loads_plot_data(Path(path).read_text())


def check_ticks(ticks: Sequence[StatsTick]) -> list[str]:
    """Violations of the tick invariants (empty when the series is sound)."""
    problems = []
    for prev, cur in zip(ticks, ticks[1:]):
        if not cur.t_seconds > prev.t_seconds:
            problems.append(f"time not increasing at {cur.t_seconds}")
        if cur.total_execs < prev.total_execs:
            problems.append(f"executions decreased at t={cur.t_seconds}")
        if cur.unique_edges < prev.unique_edges:
            problems.append(f"edges decreased at t={cur.t_seconds}")
        if cur.cumulative_cpu_j < prev.cumulative_cpu_j or cur.cumulative_ram_j < prev.cumulative_ram_j:
            problems.append(f"cumulative energy decreased at t={cur.t_seconds}")
    return problems


def resample(
    ticks: Sequence[StatsTick], grid: Sequence[float], axis: str = "t_seconds", field: str = "unique_edges"
) -> list[float]:
    """Step-function value of ``field`` at each grid point: the last tick at or
    before it, 0 before the first tick, the final value after the last."""
    out = []
    i = 0
    value = 0.0
    for g in grid:
        while i < len(ticks) and getattr(ticks[i], axis) <= g:
            value = getattr(ticks[i], field)
            i += 1
        out.append(value)
    return out


def shared_grid(runs: Sequence[Sequence[StatsTick]], axis: str = "t_seconds", step: float = 1.0) -> list[float]:
    end = max((getattr(r[-1], axis) for r in runs if r), default=0)
    n = int(math.ceil(end / step)) if end > 0 else 0
    return [k * step for k in range(n + 1)]


def mean_curve(
    runs: Sequence[Sequence[StatsTick]],
    grid: Sequence[float],
    axis: str = "t_seconds",
    field: str = "unique_edges",
) -> list[float]:
    if not runs:
        return [0.0] * len(grid)
    columns = [resample(r, grid, axis, field) for r in runs]
    return [math.fsum(col[k] for col in columns) / len(columns) for k in range(len(grid))]


def first_reaching(grid: Sequence[float], curve: Sequence[float], level: float) -> float | None:
    for g, v in zip(grid, curve):
        if v >= level:
            return g
    return None
