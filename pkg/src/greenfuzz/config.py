"""Campaign configuration: one option table shared by TOML files and flags.

Each option has a config-file key and a command-line flag (the key with
dashes). Precedence is built-in default < config file < flag.

Example file::

    target = "synthetic:keymatch"
    corpus = "seeds/"
    cmin = "green"
    energy_heuristics = "on"
    max_execs = 50000
    rng = 7
"""

from __future__ import annotations

import re
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Callable

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .engine import CampaignConfig, HavocConfig
from .errors import ConfigError
from .targets import parse_target

_UNITS = {"ms": 1e-3, "s": 1.0, "m": 60.0, "min": 60.0, "h": 3600.0}


def parse_duration(value) -> float:
    """Seconds from ``90``, ``"90s"``, ``"250ms"``, ``"5m"`` or ``"1h"``."""
    if isinstance(value, bool):
        raise ConfigError(f"bad duration {value!r}")
    if isinstance(value, (int, float)):
        seconds = float(value)
    else:
        m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+)\s*(ms|s|min|m|h)?\s*", str(value))
        if not m:
            raise ConfigError(f"bad duration {value!r} (try 10s, 5m, 1h)")
        seconds = float(m.group(1)) * _UNITS[m.group(2) or "s"]
    if seconds < 0:
        raise ConfigError("duration must be non-negative")
    return seconds


def _cmin_mode(value) -> str:
    v = str(value).lower()
    if v == "afl":
        return "coverage"
    if v not in ("green", "coverage", "off"):
        raise ConfigError(f"cmin must be green, coverage (afl) or off, got {value!r}")
    return v


def _heuristics(value) -> str:
    if value is True:
        return "green"
    if value is False:
        return "baseline"
    v = str(value).lower()
    if v in ("green", "on"):
        return "green"
    if v in ("baseline", "afl", "off"):
        return "baseline"
    raise ConfigError(f"energy_heuristics must be on/green or off/baseline/afl, got {value!r}")


def _meter(value) -> str:
    v = str(value).lower()
    if v not in ("synthetic", "rapl"):
        raise ConfigError(f"meter must be synthetic or rapl, got {value!r}")
    return v


def _int(value) -> int:
    if isinstance(value, bool):
        raise ConfigError(f"expected an integer, got {value!r}")
    try:
        return int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected an integer, got {value!r}") from None


def _float(value) -> float:
    if isinstance(value, bool):
        raise ConfigError(f"expected a number, got {value!r}")
    try:
        return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"expected a number, got {value!r}") from None


def _bool(value) -> bool:
    if isinstance(value, bool):
        return value
    v = str(value).lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean, got {value!r}")


@dataclass(frozen=True)
class Option:
    key: str
    convert: Callable[[Any], Any]
    default: Any
    help: str
    flags: tuple[str, ...] = ()

    @property
    def flag_names(self) -> tuple[str, ...]:
        return ("--" + self.key.replace("_", "-"),) + self.flags


OPTIONS = (
    Option("target", str, None, "synthetic:<model> or external:<command> (@@ = input file path)"),
    Option("corpus", str, None, "seed corpus directory"),
    Option("output", str, None, "output directory"),
    Option("meter", _meter, "synthetic", "energy meter: synthetic or rapl (env GREENFUZZ_METER wins)"),
    Option("cmin", _cmin_mode, "green", "corpus minimisation: green, coverage (afl) or off"),
    Option(
        "energy_heuristics",
        _heuristics,
        "green",
        "energy-guided scheduling: green/on or baseline/afl/off",
        flags=("--heuristics",),
    ),
    Option("max_execs", _int, None, "stop after this many fuzzing executions"),
    Option("duration", parse_duration, None, "stop after this long, e.g. 10s, 5m, 1h"),
    Option("rng", _int, 0, "64-bit rng seed", flags=("--rng-seed",)),
    Option("timeout_ms", _int, 1000, "per-execution timeout in milliseconds"),
    Option("total_edges", _int, None, "declared edge total of the target, enables coverage %"),
    Option("map_size", _int, 1 << 16, "coverage map size (power of two)"),
    Option("airtime_min_mult", _float, 0.2, "airtime factor for the most expensive seed"),
    Option("airtime_max_mult", _float, 5.0, "airtime factor for the cheapest seed"),
    Option("favoured_min_mult", _float, 0.8, "champion score factor for the cheapest seed"),
    Option("favoured_max_mult", _float, 1.25, "champion score factor for the most expensive seed"),
    Option("havoc_max_mult", _int, 16, "perf score cap, in multiples of 100"),
    Option("havoc_divisor", _float, 4.0, "perf score per havoc execution"),
    Option("havoc_min_execs", _int, 16, "minimum havoc executions per selected seed"),
    Option("havoc_stack_pow2", _int, 7, "stacked mutations drawn from 2^1 .. 2^N"),
    Option("splice_prob", _float, 0.1, "chance a havoc child starts from a splice"),
    Option("max_input_len", _int, 1 << 20, "maximum generated input length"),
    Option("tick_seconds", _float, 1.0, "plot_data tick interval in seconds"),
    Option("tick_execs", _int, 100, "plot_data tick interval in executions"),
    Option("repetitions", _int, 3, "ablation repetitions per arm", flags=("-R",)),
    Option("parallel", _bool, False, "run ablation campaigns in parallel (synthetic meter only)"),
)
BY_KEY = {o.key: o for o in OPTIONS}
_STOP_KEYS = ("max_execs", "duration")


def load_file(path: Path | str) -> dict:
    """Raw key/value pairs from a TOML file; unknown keys are rejected."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad config {path}: {exc}") from None
    unknown = sorted(set(data) - set(BY_KEY))
    if unknown:
        raise ConfigError(f"unknown config keys in {path}: {', '.join(unknown)}")
    return data


def resolve_options(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then file values, then non-None overrides; all converted.

    A stop condition given as an override replaces the file's one, so a
    flag can switch a config file from ``max_execs`` to ``duration``.
    """
    file_values = dict(file_values or {})
    overrides = overrides or {}
    if any(overrides.get(k) is not None for k in _STOP_KEYS):
        for k in _STOP_KEYS:
            file_values.pop(k, None)
    out = {}
    for opt in OPTIONS:
        raw = opt.default
        if opt.key in file_values:
            raw = file_values[opt.key]
        if overrides.get(opt.key) is not None:
            raw = overrides[opt.key]
        out[opt.key] = None if raw is None else opt.convert(raw)
    return out


def campaign_config(values: dict, output_dir: Path | None = None) -> CampaignConfig:
    if not values.get("target"):
        raise ConfigError("no target given (--target or `target` key)")
    if not values.get("corpus"):
        raise ConfigError("no corpus directory given (--corpus or `corpus` key)")
    spec = parse_target(values["target"], timeout_ms=values["timeout_ms"], map_size=values["map_size"])
    if values.get("total_edges") is not None:
        spec = replace(spec, total_edges_declared=values["total_edges"])
    if output_dir is None and values.get("output"):
        output_dir = Path(values["output"])
    return CampaignConfig(
        target=spec,
        corpus_dir=Path(values["corpus"]),
        output_dir=output_dir,
        meter=values["meter"],
        cmin=values["cmin"],
        fuzz=values["energy_heuristics"],
        max_execs=values["max_execs"],
        duration_s=values["duration"],
        rng_seed=values["rng"],
        havoc=HavocConfig(
            divisor=values["havoc_divisor"],
            min_execs=values["havoc_min_execs"],
            stack_pow2=values["havoc_stack_pow2"],
            splice_prob=values["splice_prob"],
            max_input_len=values["max_input_len"],
        ),
        airtime_min_mult=values["airtime_min_mult"],
        airtime_max_mult=values["airtime_max_mult"],
        favoured_min_mult=values["favoured_min_mult"],
        favoured_max_mult=values["favoured_max_mult"],
        havoc_max_mult=values["havoc_max_mult"],
        tick_seconds=values["tick_seconds"],
        tick_execs=values["tick_execs"],
    )
