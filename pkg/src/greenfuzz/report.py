"""Mean edges-over-time curves across campaign runs (plot-ready CSV + text)."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from .ablation import arm_label
from .engine import CampaignReport
from .errors import ConfigError
from .stats import StatsTick, mean_curve, read_plot_data, shared_grid

AXES = {"time": "t_seconds", "execs": "total_execs"}


@dataclass
class Run:
    path: Path
    label: str
    ticks: list[StatsTick]
    report: CampaignReport | None


def find_runs(paths) -> list[Path]:
    """Every directory at or below ``paths`` holding a ``plot_data.csv``."""
    found = []
    for p in map(Path, paths):
        if not p.exists():
            raise ConfigError(f"no such run directory: {p}")
        if (p / "plot_data.csv").is_file():
            found.append(p)
        else:
            found.extend(sorted(q.parent for q in p.rglob("plot_data.csv")))
    if not found:
        raise ConfigError("no plot_data.csv found under the given paths")
    return sorted(set(found))


def load_run(path: Path) -> Run:
    ticks = read_plot_data(path / "plot_data.csv")
    report = None
    label = path.name
    rj = path / "report.json"
    if rj.is_file():
        report = CampaignReport.from_json(rj.read_text())
        label = arm_label(report.cmin, report.fuzz)
    return Run(path, label, ticks, report)


@dataclass
class CurveSet:
    axis: str
    grid: list[float]
    curves: dict[str, list[float]]
    members: dict[str, list[Run]]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        labels = sorted(self.curves)
        w.writerow([self.axis] + labels)
        for k, g in enumerate(self.grid):
            w.writerow([repr(g)] + [repr(self.curves[lab][k]) for lab in labels])
        return buf.getvalue()

    def to_text(self) -> str:
        lines = [f"mean unique edges over {self.axis}, {len(self.grid)} grid points"]
        for lab in sorted(self.curves):
            runs = self.members[lab]
            curve = self.curves[lab]
            final = curve[-1] if curve else 0.0
            lines.append(f"{lab}: {len(runs)} run(s), final mean edges {final:.2f}")
            energies = [r.ticks[-1].cumulative_energy_j for r in runs if r.ticks]
            if energies:
                lines.append(f"  mean cumulative energy {sum(energies) / len(energies):.6g} J")
            for r in runs:
                seed = f" rng={r.report.rng_seed}" if r.report else ""
                lines.append(f"  - {r.path}{seed}")
        return "\n".join(lines) + "\n"


def mean_curves(runs: list[Run], axis: str = "time", step: float | None = None) -> CurveSet:
    """Group runs by configuration and average their step curves on one grid
    (1 s bins on the time axis, ``step`` executions on the execs axis)."""
    if axis not in AXES:
        raise ConfigError(f"axis must be one of {sorted(AXES)}")
    field = AXES[axis]
    if step is None:
        step = 1.0 if axis == "time" else 100.0
    if step <= 0:
        raise ConfigError("grid step must be positive")
    groups: dict[str, list[Run]] = {}
    for r in runs:
        groups.setdefault(r.label, []).append(r)
    grid = shared_grid([r.ticks for r in runs], field, step)
    curves = {lab: mean_curve([r.ticks for r in rs], grid, field) for lab, rs in groups.items()}
    return CurveSet(field, grid, curves, groups)
