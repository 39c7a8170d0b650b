"""The 2x2 ablation: corpus minimisation x energy heuristics, R repetitions each.

All four arms of one repetition share the same derived rng seed, target and
corpus; only the two toggles differ. Summaries give mean and population
variance per arm, with the best value of each column marked.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .energy import meter_kind
from .engine import CampaignConfig, CampaignReport, run_campaign
from .errors import ConfigError

ARMS = (("coverage", "baseline"), ("coverage", "green"), ("green", "baseline"), ("green", "green"))


def arm_label(cmin: str, fuzz: str) -> str:
    return f"cmin={cmin} heuristics={fuzz}"


def derive_seed(base_seed: int, rep: int) -> int:
    """64-bit seed of repetition ``rep``; the same for every arm."""
    h = hashlib.blake2b(f"{base_seed}:{rep}".encode(), digest_size=8)
    return int.from_bytes(h.digest(), "big")


def plan(base: CampaignConfig, repetitions: int, out_dir: Path | None = None) -> list[CampaignConfig]:
    if repetitions < 1:
        raise ConfigError("repetitions must be at least 1")
    configs = []
    for rep in range(repetitions):
        seed = derive_seed(base.rng_seed, rep)
        for cmin, fuzz in ARMS:
            out = None if out_dir is None else out_dir / f"{cmin}-{fuzz}" / f"rep{rep}"
            configs.append(dataclasses.replace(base, cmin=cmin, fuzz=fuzz, rng_seed=seed, output_dir=out))
    return configs


@dataclass(frozen=True)
class Stat:
    mean: float
    var: float

    @classmethod
    def of(cls, values) -> Stat:
        values = [float(v) for v in values]
        return cls(statistics.fmean(values), statistics.pvariance(values))


@dataclass
class ArmSummary:
    cmin: str
    fuzz: str
    runs: int
    throughput: Stat  # execs/s
    energy_kj: Stat
    coverage: Stat  # percent when declared, else edges
    initial_energy_j: Stat
    crashes: Stat

    @property
    def label(self) -> str:
        return arm_label(self.cmin, self.fuzz)


@dataclass
class AblationSummary:
    repetitions: int
    coverage_unit: str  # "pct" or "edges"
    base_digests: list[str]  # one per repetition, shared by its four arms
    arms: list[ArmSummary]
    reports: list[CampaignReport]

    def arm(self, cmin: str, fuzz: str) -> ArmSummary:
        for a in self.arms:
            if (a.cmin, a.fuzz) == (cmin, fuzz):
                return a
        raise KeyError((cmin, fuzz))

    def best(self) -> dict[str, set[str]]:
        """Best arm labels per column (ties all marked): max throughput,
        min energy, max coverage."""
        cols = {
            "throughput": [a.throughput.mean for a in self.arms],
            "energy_kj": [-a.energy_kj.mean for a in self.arms],
            "coverage": [a.coverage.mean for a in self.arms],
        }
        return {col: {a.label for a, v in zip(self.arms, vals) if v == max(vals)} for col, vals in cols.items()}

    def to_csv(self) -> str:
        best = self.best()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(
            [
                "cmin",
                "heuristics",
                "runs",
                "throughput_mean",
                "throughput_var",
                "energy_kj_mean",
                "energy_kj_var",
                f"coverage_{self.coverage_unit}_mean",
                f"coverage_{self.coverage_unit}_var",
                "initial_energy_j_mean",
                "crashes_mean",
                "best",
            ]
        )
        for a in self.arms:
            marks = [col for col, labels in best.items() if a.label in labels]
            w.writerow(
                [
                    a.cmin,
                    a.fuzz,
                    a.runs,
                    repr(a.throughput.mean),
                    repr(a.throughput.var),
                    repr(a.energy_kj.mean),
                    repr(a.energy_kj.var),
                    repr(a.coverage.mean),
                    repr(a.coverage.var),
                    repr(a.initial_energy_j.mean),
                    repr(a.crashes.mean),
                    "+".join(marks),
                ]
            )
        return buf.getvalue()

    def to_text(self) -> str:
        best = self.best()
        unit = "Coverage (%)" if self.coverage_unit == "pct" else "Edges"
        head = f"{'Configuration':<34} {'Throughput (exec/s)':>26} {'Energy (kJ)':>26} {unit:>22}"
        lines = [
            f"ablation: {self.repetitions} repetition(s) per arm, mean +- variance, * = best",
            head,
            "-" * len(head),
        ]
        for a in self.arms:

            def cell(col, s, digits):
                mark = "*" if a.label in best[col] else " "
                return f"{s.mean:.{digits}f} +- {s.var:.3g}{mark}"

            lines.append(
                f"{a.label:<34} {cell('throughput', a.throughput, 1):>26} "
                f"{cell('energy_kj', a.energy_kj, 4):>26} {cell('coverage', a.coverage, 2):>22}"
            )
        lines.append(f"rng seeds: {', '.join(str(r.rng_seed) for r in self.reports[:: len(ARMS)])}")
        return "\n".join(lines) + "\n"


def summarise(reports: list[CampaignReport], repetitions: int) -> AblationSummary:
    by_seed: dict[int, set[str]] = {}
    for r in reports:
        by_seed.setdefault(r.rng_seed, set()).add(r.base_digest)
    if any(len(d) != 1 for d in by_seed.values()):
        raise RuntimeError("ablation arms differ in more than the two toggles")
    declared = all(r.coverage_pct is not None for r in reports)
    arms = []
    for cmin, fuzz in ARMS:
        rs = [r for r in reports if (r.cmin, r.fuzz) == (cmin, fuzz)]
        arms.append(
            ArmSummary(
                cmin,
                fuzz,
                len(rs),
                throughput=Stat.of(r.execs_per_sec for r in rs),
                energy_kj=Stat.of(r.energy_j / 1000 for r in rs),
                coverage=Stat.of(r.coverage_pct if declared else r.unique_edges for r in rs),
                initial_energy_j=Stat.of(r.initial_energy_j for r in rs),
                crashes=Stat.of(r.unique_crashes for r in rs),
            )
        )
    digests = [by_seed[seed].pop() for seed in by_seed]
    return AblationSummary(repetitions, "pct" if declared else "edges", digests, arms, reports)


def run_ablation(
    base: CampaignConfig, repetitions: int, out_dir: Path | None = None, parallel: bool = False
) -> AblationSummary:
    """Run every arm of every repetition, sequentially unless ``parallel``."""
    configs = plan(base, repetitions, out_dir)
    if parallel:
        if meter_kind(base.meter) != "synthetic":
            raise ConfigError("--parallel is only allowed with the synthetic meter")
        with ProcessPoolExecutor() as pool:
            reports = list(pool.map(run_campaign, configs))
    else:
        reports = [run_campaign(c) for c in configs]
    summary = summarise(reports, repetitions)
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.csv").write_text(summary.to_csv())
        (out_dir / "summary.txt").write_text(summary.to_text())
    return summary
