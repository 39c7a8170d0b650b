"""The fuzzing loop: profile, minimise, then cull / select / havoc until done."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import SeedRecord, list_seed_files, minimise, profile_corpus
from .coverage import CoverageMap
from .energy import Meter, make_meter
from .errors import ConfigError, GreenFuzzError
from .mutate import MAX_INPUT_LEN, havoc_mutate, splice
from .scheduler import QueueEntry, Scheduler, SchedulerConfig, skip_probability
from .stats import StatsRecorder, StatsTick
from .targets import ExecResult, Status, TargetSpec, execute, resolve

log = logging.getLogger(__name__)

CMIN_MODES = ("green", "coverage", "off")
FUZZ_MODES = ("green", "baseline")


@dataclass(frozen=True)
class HavocConfig:
    divisor: float = 4.0
    min_execs: int = 16
    stack_pow2: int = 7
    splice_prob: float = 0.1
    max_input_len: int = MAX_INPUT_LEN

    def __post_init__(self):
        if self.divisor <= 0 or self.min_execs < 1 or self.stack_pow2 < 1 or self.max_input_len < 1:
            raise ConfigError("havoc constants must be positive")
        if not 0 <= self.splice_prob <= 1:
            raise ConfigError("splice_prob must be within [0, 1]")


@dataclass(frozen=True)
class CampaignConfig:
    target: TargetSpec
    corpus_dir: Path
    output_dir: Path | None = None
    meter: str = "synthetic"
    cmin: str = "green"
    fuzz: str = "green"
    max_execs: int | None = None
    duration_s: float | None = None
    rng_seed: int = 0
    havoc: HavocConfig = HavocConfig()
    airtime_min_mult: float = 0.2
    airtime_max_mult: float = 5.0
    favoured_min_mult: float = 0.8
    favoured_max_mult: float = 1.25
    havoc_max_mult: int = 16
    tick_seconds: float = 1.0
    tick_execs: int = 100

    def __post_init__(self):
        if (self.max_execs is None) == (self.duration_s is None):
            raise ConfigError("set exactly one stop condition: max_execs or duration")
        if self.max_execs is not None and self.max_execs < 0:
            raise ConfigError("max_execs must be non-negative")
        if self.duration_s is not None and self.duration_s < 0:
            raise ConfigError("duration must be non-negative")
        if self.cmin not in CMIN_MODES:
            raise ConfigError(f"cmin must be one of {CMIN_MODES}, got {self.cmin!r}")
        if self.fuzz not in FUZZ_MODES:
            raise ConfigError(f"fuzz heuristics must be one of {FUZZ_MODES}, got {self.fuzz!r}")
        if not 0 <= self.rng_seed < 1 << 64:
            raise ConfigError("rng_seed must be a 64-bit unsigned integer")
        try:
            self.scheduler_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def scheduler_config(self) -> SchedulerConfig:
        return SchedulerConfig(
            airtime_min_mult=self.airtime_min_mult,
            airtime_max_mult=self.airtime_max_mult,
            favoured_min_mult=self.favoured_min_mult,
            favoured_max_mult=self.favoured_max_mult,
            havoc_max_mult=self.havoc_max_mult,
            energy_heuristics=self.fuzz == "green",
        )

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["corpus_dir"] = str(self.corpus_dir)
        d["output_dir"] = None if self.output_dir is None else str(self.output_dir)
        d["target"]["command"] = list(self.target.command)
        return d

    def base_digest(self, corpus_digest: str = "") -> str:
        """Digest of everything but the two ablation toggles and the output path."""
        d = self.to_dict()
        for key in ("cmin", "fuzz", "output_dir", "corpus_dir"):
            d.pop(key)
        d["corpus"] = corpus_digest
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


@dataclass
class CampaignReport:
    config: dict
    base_digest: str
    corpus_digest: str
    rng_seed: int
    cmin: str
    fuzz: str
    corpus_seeds: int
    kept_seeds: int
    crashed_seeds: int
    initial_energy_j: float
    profiling_execs: int = 0
    fuzz_execs: int = 0
    total_execs: int = 0
    unique_edges: int = 0
    total_edges_declared: int | None = None
    coverage_pct: float | None = None
    cpu_j: float = 0.0
    ram_j: float = 0.0
    energy_j: float = 0.0
    elapsed_s: float = 0.0
    execs_per_sec: float = 0.0
    queue_len: int = 0
    favoured: int = 0
    unique_crashes: int = 0
    timeouts: int = 0
    cycles: int = 0
    schedule: list = field(default_factory=list)

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), indent=1, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> CampaignReport:
        return cls(**json.loads(text))


def corpus_digest(paths) -> str:
    h = hashlib.sha256()
    for p in paths:
        h.update(p.name.encode() + b"\0")
        h.update(hashlib.sha256(p.read_bytes()).digest())
    return h.hexdigest()


class Campaign:
    def __init__(self, config: CampaignConfig, meter: Meter | None = None):
        self.config = config
        self.meter = meter if meter is not None else make_meter(config.meter)
        self.target = resolve(config.target)
        self.rng = random.Random(config.rng_seed)
        self.coverage = CoverageMap(config.target.map_size)
        self.sched = Scheduler(config.scheduler_config(), has_ram=self.meter.capabilities.has_ram)
        self.havoc = config.havoc
        self.total_execs = 0
        self.fuzz_execs = 0
        self.cpu_j = 0.0
        self.ram_j = 0.0
        self.crashes: dict[str, bytes] = {}
        self.timeouts = 0
        self.cycles = 0
        self.schedule: list[tuple[str, int]] = []
        self.favoured_count = 0
        self._seq = 0
        self._start_us = 0
        self.out = config.output_dir
        self.stats: StatsRecorder | None = None

    # -- bookkeeping --------------------------------------------------------

    def elapsed(self) -> float:
        return (self.meter.now_us() - self._start_us) / 1e6

    def _account(self, result: ExecResult, fuzzing: bool = False) -> None:
        self.total_execs += 1
        if fuzzing:
            self.fuzz_execs += 1
        self.cpu_j += result.energy.cpu_joules
        self.ram_j += result.energy.ram_joules
        t = self.elapsed()
        if self.stats.due(t, self.total_execs):
            self._tick(t)

    def _tick(self, t: float | None = None) -> StatsTick | None:
        return self.stats.record(
            self.elapsed() if t is None else t,
            self.total_execs,
            self.coverage.unique_edges,
            self.cpu_j,
            self.ram_j,
            len(self.sched.queue),
            self.favoured_count,
        )

    def done(self) -> bool:
        cfg = self.config
        if cfg.max_execs is not None:
            return self.fuzz_execs >= cfg.max_execs
        return self.elapsed() >= cfg.duration_s

    def _enqueue(self, record: SeedRecord, origin: str, parent: QueueEntry | None) -> QueueEntry:
        self._seq += 1
        qid = f"id_{self._seq:06d}_{origin}"
        record = dataclasses.replace(record, id=qid)
        entry = QueueEntry(
            record,
            depth=0 if parent is None else parent.depth + 1,
            handicap=self.cycles,
            parent=None if parent is None else parent.id,
        )
        self.sched.add(entry)
        if self.out is not None:
            (self.out / "queue" / f"{qid}.bin").write_bytes(record.data)
        return entry

    def _save_crash(self, data: bytes, result: ExecResult) -> None:
        digest = result.trace.digest()
        if digest in self.crashes:
            return
        self.crashes[digest] = data
        if self.out is not None:
            (self.out / "crashes" / f"{digest}.bin").write_bytes(data)

    # -- the loop -----------------------------------------------------------

    def fuzz_one(self, entry: QueueEntry) -> dict:
        hv = self.havoc
        rng = self.rng
        score = self.sched.perf_score(entry)
        planned = max(hv.min_execs, int(score / hv.divisor + 0.5))
        self.schedule.append((entry.id, planned))
        report = {"id": entry.id, "perf_score": score, "planned": planned, "execs": 0, "queued": 0, "crashes": 0}
        queue = self.sched.queue
        for _ in range(planned):
            if self.done():
                break
            base = entry.seed.data
            if hv.splice_prob and len(queue) > 1 and rng.random() < hv.splice_prob:
                other = queue[rng.randrange(len(queue))]
                if other is not entry:
                    base = splice(base, other.seed.data, rng)
            stack = 1 << (1 + rng.randrange(hv.stack_pow2))
            child = havoc_mutate(base, rng, stack, hv.max_input_len)
            result = execute(self.target, child, self.meter)
            report["execs"] += 1
            if result.status is Status.CRASH:
                report["crashes"] += 1
                self._save_crash(child, result)
            elif result.status is Status.TIMEOUT:
                self.timeouts += 1
            elif self.coverage.merge_and_detect(result.trace):
                record = SeedRecord("", child, result.trace, result.energy, result.exec_time_us)
                self._enqueue(record, f"src{entry.id[3:9]}", entry)
                report["queued"] += 1
            self._account(result, fuzzing=True)
        entry.was_fuzzed = True
        if entry.handicap >= 4:
            entry.handicap -= 4
        elif entry.handicap:
            entry.handicap -= 1
        return report

    def _cull(self) -> None:
        self.favoured_count = len(self.sched.cull())

    def run(self) -> CampaignReport:
        cfg = self.config
        seeds = list_seed_files(cfg.corpus_dir)
        if not seeds:
            raise ConfigError(f"corpus directory {cfg.corpus_dir} is empty")
        cdigest = corpus_digest(seeds)
        if self.out is not None:
            for sub in ("queue", "crashes"):
                (self.out / sub).mkdir(parents=True, exist_ok=True)
        self.stats = StatsRecorder(
            None if self.out is None else self.out / "plot_data.csv", cfg.tick_seconds, cfg.tick_execs
        )
        self._start_us = self.meter.now_us()
        try:
            profile = profile_corpus(seeds, self.target, self.meter, on_exec=self._account)
            if not profile.records:
                raise GreenFuzzError("no seed in the corpus ran cleanly; nothing to fuzz")
            kept = minimise(profile.records, cfg.cmin)
            for record in kept:
                self._enqueue(record, "orig", None)
                self.coverage.merge_and_detect(record.trace)
            self._cull()
            self._tick()
            profiling_execs = self.total_execs

            while not self.done():
                i = 0
                queue = self.sched.queue
                while i < len(queue) and not self.done():
                    if self.sched.dirty:
                        self._cull()
                    entry = queue[i]
                    p = skip_probability(entry, self.sched.pending_favoured())
                    if p and self.rng.random() < p:
                        i += 1
                        continue
                    self.fuzz_one(entry)
                    i += 1
                self.cycles += 1
            if self.sched.dirty:
                self._cull()
            self._tick()
        finally:
            self.stats.close()
            self.target.close()

        elapsed = self.elapsed()
        total_declared = cfg.target.total_edges_declared or self.target.total_edges
        report = CampaignReport(
            config=cfg.to_dict(),
            base_digest=cfg.base_digest(cdigest),
            corpus_digest=cdigest,
            rng_seed=cfg.rng_seed,
            cmin=cfg.cmin,
            fuzz=cfg.fuzz,
            corpus_seeds=len(seeds),
            kept_seeds=len(kept),
            crashed_seeds=len(profile.crashes),
            initial_energy_j=sum(r.energy.total() for r in kept),
            profiling_execs=profiling_execs,
            fuzz_execs=self.fuzz_execs,
            total_execs=self.total_execs,
            unique_edges=self.coverage.unique_edges,
            total_edges_declared=total_declared,
            coverage_pct=100.0 * self.coverage.unique_edges / total_declared if total_declared else None,
            cpu_j=self.cpu_j,
            ram_j=self.ram_j,
            energy_j=self.cpu_j + self.ram_j,
            elapsed_s=elapsed,
            execs_per_sec=self.total_execs / elapsed if elapsed > 0 else 0.0,
            queue_len=len(self.sched.queue),
            favoured=self.favoured_count,
            unique_crashes=len(self.crashes),
            timeouts=self.timeouts,
            cycles=self.cycles,
            schedule=[list(s) for s in self.schedule],
        )
        if self.out is not None:
            (self.out / "report.json").write_text(report.to_json())
        return report

    @property
    def ticks(self) -> list[StatsTick]:
        return self.stats.ticks if self.stats else []


def run_campaign(config: CampaignConfig, meter: Meter | None = None) -> CampaignReport:
    return Campaign(config, meter).run()
