"""Corpus profiling and minimisation.

``green_minimise`` keeps, for every edge, the seed with the lowest measured
energy. ``coverage_minimise`` is the coverage-only baseline: a greedy AFL-cmin
style reduction preferring small, then fast seeds.
"""

from __future__ import annotations

import hashlib
import json
import logging
import re
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .coverage import EdgeTrace
from .energy import EnergyReading, Meter
from .errors import ConfigError, GreenFuzzError
from .targets import Status, Target, execute

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SeedRecord:
    id: str
    data: bytes
    trace: EdgeTrace
    energy: EnergyReading
    exec_time_us: int

    @property
    def size_bytes(self) -> int:
        return len(self.data)

    @property
    def edges(self) -> frozenset[int]:
        return self.trace.edges


@dataclass(frozen=True)
class CrashReport:
    id: str
    status: Status
    signal: int | None
    trace_digest: str


@dataclass
class CorpusProfile:
    records: list[SeedRecord] = field(default_factory=list)
    crashes: list[CrashReport] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    energy: EnergyReading = EnergyReading()

    @property
    def executions(self) -> int:
        return len(self.records) + len(self.crashes)


def list_seed_files(directory: Path | str) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise ConfigError(f"corpus directory {directory} does not exist")
    return sorted(p for p in directory.iterdir() if p.is_file() and not p.name.startswith("."))


def profile_corpus(
    seeds: Iterable[Path | tuple[str, bytes]],
    target: Target,
    meter: Meter,
    on_exec=None,
) -> CorpusProfile:
    """Run every seed exactly once, recording its trace and energy.

    Seeds are paths or ``(id, bytes)`` pairs. Unreadable seeds are skipped with
    a warning; crashing or hanging seeds are reported and left out of
    ``records``. ``on_exec(result)`` is called after each execution.
    """
    if target is None:
        raise ConfigError("no target to profile against")
    profile = CorpusProfile()
    for seed in seeds:
        if isinstance(seed, tuple):
            seed_id, data = seed
        else:
            seed_id = seed.name
            try:
                data = seed.read_bytes()
            except OSError as exc:
                log.warning("skipping unreadable seed %s: %s", seed, exc)
                profile.skipped.append(str(seed))
                continue
        result = execute(target, data, meter)
        profile.energy = profile.energy + result.energy
        if on_exec is not None:
            on_exec(result)
        if result.status is Status.OK:
            profile.records.append(SeedRecord(seed_id, data, result.trace, result.energy, result.exec_time_us))
        else:
            log.warning("seed %s %s during profiling; excluded", seed_id, result.status.value)
            profile.crashes.append(CrashReport(seed_id, result.status, result.signal, result.trace.digest()))
    return profile


def energy_key(record: SeedRecord):
    """Ordering used to pick per-edge champions: energy, then size, time, id."""
    return (record.energy.total(), record.size_bytes, record.exec_time_us, record.id)


def _coverage_key(record: SeedRecord):
    return (record.size_bytes, record.exec_time_us, record.id)


def _check_unique(records: Sequence[SeedRecord]) -> None:
    if len({r.id for r in records}) != len(records):
        raise ValueError("seed ids must be unique")


def _fallback(records: Sequence[SeedRecord]) -> set[str]:
    smallest = min(records, key=_coverage_key)
    log.warning(
        "no seed produced any coverage; keeping the smallest seed %r so the corpus is not empty",
        smallest.id,
    )
    return {smallest.id}


def green_minimise(records: Sequence[SeedRecord]) -> tuple[set[str], dict[int, str]]:
    """Per-edge minimum-energy champions and the set of seeds they name."""
    _check_unique(records)
    best: dict[int, SeedRecord] = {}
    for record in records:
        key = energy_key(record)
        for edge in record.edges:
            incumbent = best.get(edge)
            if incumbent is None or key < energy_key(incumbent):
                best[edge] = record
    champions = {edge: best[edge].id for edge in sorted(best)}
    kept = set(champions.values())
    if not kept and records:
        kept = _fallback(records)
    return kept, champions


def coverage_minimise(records: Sequence[SeedRecord]) -> set[str]:
    """Greedy cover: for each still-uncovered edge, in index order, keep the
    smallest (then fastest) seed hitting it and mark all its edges covered."""
    _check_unique(records)
    hitters: dict[int, list[SeedRecord]] = {}
    for record in records:
        for edge in record.edges:
            hitters.setdefault(edge, []).append(record)
    covered: set[int] = set()
    kept: set[str] = set()
    for edge in sorted(hitters):
        if edge in covered:
            continue
        winner = min(hitters[edge], key=_coverage_key)
        kept.add(winner.id)
        covered |= winner.edges
    if not kept and records:
        kept = _fallback(records)
    return kept


def minimise(records: Sequence[SeedRecord], mode: str) -> list[SeedRecord]:
    """Apply a minimisation mode, returning kept records in input order."""
    if mode == "green":
        kept, _ = green_minimise(records)
    elif mode == "coverage":
        kept = coverage_minimise(records)
    elif mode == "off":
        return list(records)
    else:
        raise ConfigError(f"unknown cmin mode {mode!r}")
    return [r for r in records if r.id in kept]


_SAFE = re.compile(r"[^A-Za-z0-9._-]+")


def write_minimised(kept: Sequence[SeedRecord], out_dir: Path | str) -> dict:
    """Copy kept seeds into ``out_dir`` and write ``manifest.json`` beside them."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise GreenFuzzError(f"cannot create output directory {out}: {exc}") from exc
    used: set[str] = {"manifest.json"}
    entries = []
    for record in kept:
        name = _SAFE.sub("_", Path(record.id).name) or "seed"
        if name in used:
            digest = hashlib.sha1(record.data).hexdigest()[:8]
            name = f"{name}-{digest}"
            n = 1
            while name in used:
                name = f"{name}-{n}"
                n += 1
        used.add(name)
        try:
            (out / name).write_bytes(record.data)
        except OSError as exc:
            raise GreenFuzzError(f"cannot write {out / name}: {exc}") from exc
        entries.append(
            {
                "id": record.id,
                "file": name,
                "edges": len(record.edges),
                "energy_j": record.energy.total(),
                "size": record.size_bytes,
            }
        )
    union: set[int] = set()
    for record in kept:
        union |= record.edges
    manifest = {
        "seeds": entries,
        "kept": len(entries),
        "total_edges": len(union),
        "total_energy_j": sum(e["energy_j"] for e in entries),
        "total_size": sum(e["size"] for e in entries),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest
