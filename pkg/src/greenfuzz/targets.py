"""Targets and single executions.

A target is either a registered synthetic model, run in-process, or an
external command spawned once per execution. Both report edges as raw hit
counts that end up in an ``EdgeTrace``; both are measured through the
meter's ``measure_around`` bracket.
"""

from __future__ import annotations

import enum
import hashlib
import os
import shlex
import shutil
import signal
import subprocess
import tempfile
from collections.abc import Callable, Sequence
from dataclasses import dataclass, replace
from pathlib import Path

from .coverage import MAP_SIZE, EdgeTrace
from .energy import CostModel, EnergyReading, Meter, SyntheticMeter
from .errors import ConfigError, GreenFuzzError

TRACE_ENV = "GREENFUZZ_TRACE_FILE"


class TargetError(GreenFuzzError):
    """The target could not be run at all (spawn failure, unknown model)."""


class Status(enum.Enum):
    OK = "ok"
    CRASH = "crash"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class ExecResult:
    status: Status
    trace: EdgeTrace
    energy: EnergyReading
    exec_time_us: int
    signal: int | None = None


@dataclass(frozen=True)
class TargetSpec:
    kind: str  # "synthetic" | "external"
    model: str | None = None
    command: tuple[str, ...] = ()
    input_mode: str = "stdin"  # "stdin" | "file"
    timeout_ms: int = 1000
    total_edges_declared: int | None = None
    map_size: int = MAP_SIZE

    def __post_init__(self):
        if self.timeout_ms <= 0:
            raise ConfigError("timeout_ms must be positive")
        if self.kind == "synthetic":
            if self.model not in MODELS:
                raise ConfigError(f"unknown synthetic model {self.model!r}; known: {', '.join(sorted(MODELS))}")
        elif self.kind == "external":
            if not self.command:
                raise ConfigError("external target needs a command")
            if self.input_mode not in ("stdin", "file"):
                raise ConfigError(f"unknown input mode {self.input_mode!r}")
        else:
            raise ConfigError(f"unknown target kind {self.kind!r}")

    def describe(self) -> str:
        if self.kind == "synthetic":
            return f"synthetic:{self.model}"
        return "external:" + shlex.join(self.command)


def parse_target(text: str, timeout_ms: int = 1000, map_size: int = MAP_SIZE) -> TargetSpec:
    """Parse ``synthetic:<model>`` or ``external:<command ...>``.

    For external commands, an ``@@`` argument is replaced by the path of the
    input file; without it the input goes to stdin.
    """
    kind, sep, rest = text.partition(":")
    if not sep or not rest:
        raise ConfigError(f"target must look like 'synthetic:<model>' or 'external:<command>', got {text!r}")
    if kind == "synthetic":
        return TargetSpec("synthetic", model=rest, timeout_ms=timeout_ms, map_size=map_size)
    if kind == "external":
        command = tuple(shlex.split(rest))
        mode = "file" if "@@" in command else "stdin"
        return TargetSpec("external", command=command, input_mode=mode, timeout_ms=timeout_ms, map_size=map_size)
    raise ConfigError(f"unknown target kind {kind!r}")


class Target:
    map_size: int
    total_edges: int | None = None

    def run_under(self, data: bytes, meter: Meter):
        """Run once inside a meter bracket; returns (trace, status, signal)."""
        raise NotImplementedError

    def close(self) -> None:
        pass


def execute(target: Target, data: bytes, meter: Meter) -> ExecResult:
    (trace, status, sig), energy = meter.measure_around(lambda: target.run_under(data, meter))
    return ExecResult(status, trace, energy, energy.duration_us, sig)


# --- synthetic models -------------------------------------------------------


def edge_table(labels: Sequence[str], map_size: int) -> dict[str, int]:
    """Hash labels into map indices, probing linearly past collisions."""
    if len(labels) > map_size:
        raise ConfigError(f"{len(labels)} edges do not fit a map of size {map_size}")
    table: dict[str, int] = {}
    used: set[int] = set()
    for label in labels:
        digest = hashlib.blake2b(label.encode(), digest_size=8).digest()
        index = int.from_bytes(digest, "little") % map_size
        while index in used:
            index = (index + 1) % map_size
        used.add(index)
        table[label] = index
    return table


class SyntheticTarget(Target):
    """In-process target whose energy comes from a ``CostModel``."""

    name = "synthetic"
    labels: Sequence[str] = ()

    def __init__(self, map_size: int = MAP_SIZE, timeout_ms: int = 1000, flat: bool = False):
        self.map_size = map_size
        self.timeout_us = timeout_ms * 1000
        self.e = edge_table(self.labels, map_size)
        self.total_edges = len(self.labels)
        cost = self.cost_model()
        if flat:
            # same control flow and timing, but every execution costs the same energy
            cost = replace(
                cost,
                edge_cpu_j={},
                default_edge_cpu_j=0.0,
                byte_cpu_j=0.0,
                base_cpu_j=1e-3,
                edge_ram_j={},
                default_edge_ram_j=0.0,
                byte_ram_j=0.0,
                base_ram_j=1e-4,
            )
        self.cost = cost

    def cost_model(self) -> CostModel:
        return CostModel()

    @classmethod
    def seed_corpus(cls) -> dict[str, bytes]:
        return {}

    def run(self, data: bytes) -> tuple[dict[int, int], Status]:
        """Raw hit counts by edge index, plus the outcome. Pure."""
        raise NotImplementedError

    def run_under(self, data: bytes, meter: Meter):
        hits, status = self.run(data)
        reading = self.cost.reading(data, hits)
        if status is Status.OK and reading.duration_us > self.timeout_us:
            status = Status.TIMEOUT
        if isinstance(meter, SyntheticMeter):
            meter.charge(reading)
        sig = signal.SIGSEGV if status is Status.CRASH else None
        return EdgeTrace.from_hits(hits, self.map_size), status, sig


def _bump(hits: dict[int, int], index: int, n: int = 1) -> None:
    hits[index] = hits.get(index, 0) + n


class Fork3(SyntheticTarget):
    """Three-way branch on the first byte, each arm three levels deep.

    ``A`` is cheap, ``B`` moderate and ``C`` expensive. ``BBB!`` crashes.
    """

    name = "fork3"
    labels = ["entry", "other"] + [f"{arm}{level}" for arm in "ABC" for level in (1, 2, 3)] + ["B!"]

    def cost_model(self) -> CostModel:
        cpu = {}
        for arm, unit in zip("ABC", (1e-4, 1e-3, 1e-2)):
            for level in (1, 2, 3):
                cpu[self.e[f"{arm}{level}"]] = unit
        return CostModel(edge_cpu_j=cpu, default_edge_cpu_j=1e-5, byte_ram_j=1e-6, base_us=5, edge_us=2, byte_us=0.1)

    def run(self, data):
        e = self.e
        hits = {e["entry"]: 1}
        if not data or data[0] not in b"ABC":
            hits[e["other"]] = 1
            return hits, Status.OK
        arm = chr(data[0])
        level = 1
        while level <= 3 and level <= len(data) and data[level - 1] == data[0]:
            hits[e[f"{arm}{level}"]] = 1
            level += 1
        if arm == "B" and level == 4 and data[3:4] == b"!":
            hits[e["B!"]] = 1
            return hits, Status.CRASH
        return hits, Status.OK

    @classmethod
    def seed_corpus(cls) -> dict[str, bytes]:
        return {"a": b"AAx", "b": b"Bx", "c": b"CCC", "x": b"x"}


class KeyMatch(SyntheticTarget):
    """Command matcher with case-insensitive keywords.

    Input is NUL-terminated and holds up to four space-separated tokens, each
    ``KEY[=digits]``. Upper-case and lower-case spellings reach exactly the same
    edges, but every lower-case byte goes through a slow case-folding retry
    loop, hitting the compare edge ``FOLD_REPEAT`` times instead of once. So
    ``fuzz`` is smaller than ``FUZZ\\0`` yet costs about ten times the energy.
    ``JINX=666`` crashes.
    """

    name = "keymatch"
    KEYS = (b"FUZZ", b"HEAP", b"GRAN", b"ECHO", b"MOLD", b"JINX", b"KIWI", b"PLUM")
    MAX_TOKENS = 4
    FOLD_REPEAT = 11
    labels = (
        ["entry", "cmp", "nokey", "empty"]
        + [f"ntok:{n}" for n in range(1, 5)]
        + ["num1", "num2", "num3"]
        + [f"{key.decode()}:{part}" for key in KEYS for part in ("1", "2", "3", "4", "full", "arg")]
    )

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._first = {key[0]: k for k, key in enumerate(self.KEYS)}
        self._chain = [[self.e[f"{key.decode()}:{j}"] for j in "1234"] for key in self.KEYS]
        self._tail = [{part: self.e[f"{key.decode()}:{part}"] for part in ("full", "arg")} for key in self.KEYS]
        self._ntok = [self.e[f"ntok:{n}"] for n in range(1, 5)]

    def cost_model(self) -> CostModel:
        return CostModel(
            edge_cpu_j={self.e["cmp"]: 2e-4},
            default_edge_cpu_j=1e-5,
            byte_cpu_j=1e-6,
            base_cpu_j=1e-5,
            edge_ram_j={self.e["cmp"]: 2e-5},
            byte_ram_j=1e-7,
            base_ram_j=1e-6,
            base_us=20,
            edge_us=1.0,
            byte_us=0.05,
        )

    def run(self, data):
        e = self.e
        cmp = e["cmp"]
        hits = {e["entry"]: 1}
        end = data.find(0)
        if end >= 0:
            data = data[:end]
        tokens = [t for t in data.split(b" ") if t][: self.MAX_TOKENS]
        if not tokens:
            hits[e["empty"]] = 1
        status = Status.OK
        for n, tok in enumerate(tokens):
            hits[self._ntok[n]] = 1
            first = tok[0] & 0xDF if 97 <= tok[0] <= 122 else tok[0]
            k = self._first.get(first)
            if k is None:
                _bump(hits, e["nokey"])
                continue
            key = self.KEYS[k]
            chain = self._chain[k]
            matched = 0
            for j in range(min(4, len(tok))):
                ch = tok[j]
                if 97 <= ch <= 122:
                    _bump(hits, cmp, self.FOLD_REPEAT)
                    ch &= 0xDF
                else:
                    _bump(hits, cmp)
                if ch != key[j]:
                    break
                _bump(hits, chain[j])
                matched += 1
            if matched < 4:
                continue
            tail = self._tail[k]
            _bump(hits, tail["full"])
            if tok[4:5] != b"=":
                continue
            _bump(hits, tail["arg"])
            digits = 0
            for ch in tok[5:]:
                if not 48 <= ch <= 57:
                    break
                digits += 1
            if digits:
                _bump(hits, e[f"num{min(digits, 3)}"])
            if key == b"JINX" and tok[5:] == b"666":
                status = Status.CRASH
        return hits, status

    @classmethod
    def seed_corpus(cls) -> dict[str, bytes]:
        """Every seed twice, with identical edges: ``cheap`` upper-case and NUL
        terminated, ``pricey`` lower-case and one byte shorter."""
        seeds = {}
        for key in cls.KEYS:
            name = key.decode().lower()
            for suffix, tail in (("", b""), ("-arg", b"=0")):
                seeds[f"{name}{suffix}-cheap"] = key + tail + b"\0"
                seeds[f"{name}{suffix}-pricey"] = key.lower() + tail
        return seeds


_NEST_MAX_DEPTH = 16
_NEST_KINDS = ("arr", "end_arr", "obj", "end_obj", "str", "chr", "num", "lit", "comma", "colon", "junk")


class NestedParser(SyntheticTarget):
    """Lenient scanner for a JSON-like nested syntax.

    Edges are (token kind, nesting depth) pairs plus (previous kind -> kind)
    transitions, so new edges appear as inputs nest deeper and mix
    constructs. Cost per token grows with depth. Input starting with ``~`` is
    a compact encoding: ``~``, then (count, byte) pairs that expand to
    ``count % 8`` copies of ``byte`` before scanning, then a checksum byte
    (sum of the pairs mod 256). Like a compressed stream, the compact form is
    small but expensive to expand, and most mutations of it fail the
    checksum.
    """

    name = "nested"
    MAX_DEPTH = _NEST_MAX_DEPTH
    LIMIT = 512
    KINDS = _NEST_KINDS
    labels = (
        ["entry", "empty", "mismatch", "unclosed", "overflow", "expand", "bad_checksum", "expand_run"]
        + [f"{k}@{d}" for k in _NEST_KINDS for d in range(_NEST_MAX_DEPTH + 1)]
        + [
            f"{a}>{b}"
            for a in ("start",) + _NEST_KINDS
            for b in _NEST_KINDS
            # characters only occur inside strings; num runs count once
            if (b != "chr" or a == "str") and (a != "chr" or b == "str")
            if not (a == b == "num")
        ]
    )

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        kinds = self.KINDS
        self._at = {k: [self.e[f"{k}@{d}"] for d in range(self.MAX_DEPTH + 1)] for k in kinds}
        self._tr = {a: {b: self.e[f"{a}>{b}"] for b in kinds if f"{a}>{b}" in self.e} for a in ("start",) + kinds}
        cls = {}
        for ch in range(256):
            if ch == ord("["):
                cls[ch] = "arr"
            elif ch == ord("]"):
                cls[ch] = "end_arr"
            elif ch == ord("{"):
                cls[ch] = "obj"
            elif ch == ord("}"):
                cls[ch] = "end_obj"
            elif ch == ord('"'):
                cls[ch] = "str"
            elif 48 <= ch <= 57:
                cls[ch] = "num"
            elif ch in b"tfn":
                cls[ch] = "lit"
            elif ch == ord(","):
                cls[ch] = "comma"
            elif ch == ord(":"):
                cls[ch] = "colon"
            else:
                cls[ch] = "junk"
        self._cls = [cls[ch] for ch in range(256)]

    def cost_model(self) -> CostModel:
        cpu = {}
        ram = {}
        for k in self.KINDS:
            for d in range(self.MAX_DEPTH + 1):
                cpu[self.e[f"{k}@{d}"]] = 2e-5 * (1 + d)
                ram[self.e[f"{k}@{d}"]] = 2e-6 * (1 + d)
        cpu[self.e["expand_run"]] = 4e-4
        ram[self.e["expand_run"]] = 1e-4
        return CostModel(
            edge_cpu_j=cpu,
            default_edge_cpu_j=2e-6,
            byte_cpu_j=1e-6,
            base_cpu_j=1e-5,
            edge_ram_j=ram,
            byte_ram_j=1e-7,
            base_ram_j=1e-6,
            base_us=20,
            edge_us=0.5,
            byte_us=0.05,
        )

    def run(self, data):
        e = self.e
        hits = {e["entry"]: 1}
        if data[:1] == b"~":
            _bump(hits, e["expand"])
            body = data[1:-1]
            if len(data) < 2 or sum(body) % 256 != data[-1]:
                _bump(hits, e["bad_checksum"])
                return hits, Status.OK
            out = bytearray()
            for i in range(0, len(body) - 1, 2):
                count = body[i] % 8
                if count:
                    _bump(hits, e["expand_run"], count)
                    out += bytes((body[i + 1],)) * count
                if len(out) >= self.LIMIT:
                    break
            data = bytes(out)
        end = data.find(0)
        if end >= 0:
            data = data[:end]
        if not data:
            hits[e["empty"]] = 1
            return hits, Status.OK
        if len(data) > self.LIMIT:
            _bump(hits, e["overflow"])
            data = data[: self.LIMIT]
        at = self._at
        tr = self._tr
        cls = self._cls
        top = self.MAX_DEPTH
        stack: list[str] = []
        prev = "start"
        in_str = False
        for ch in data:
            if in_str:
                if ch == 34:
                    in_str = False
                    kind = "str"
                else:
                    kind = "chr"
            else:
                kind = cls[ch]
                if kind == "str":
                    in_str = True
            depth = len(stack)
            idx = at[kind][depth if depth < top else top]
            hits[idx] = hits.get(idx, 0) + 1
            if kind != prev or kind not in ("chr", "num"):
                idx = tr[prev][kind]
                hits[idx] = hits.get(idx, 0) + 1
            prev = kind
            if kind == "arr" or kind == "obj":
                stack.append(kind)
            elif kind == "end_arr" or kind == "end_obj":
                if stack and stack[-1] == ("arr" if kind == "end_arr" else "obj"):
                    stack.pop()
                else:
                    _bump(hits, e["mismatch"])
        if stack:
            _bump(hits, e["unclosed"])
        return hits, Status.OK

    DOCUMENTS = (
        b"[]",
        b"{}",
        b'"ab"',
        b"[1,true]",
        b'{"k":"v"}',
        b"[[[[1]]]]",
        b"{{{{}}}}",
        b'[[[["aaa"]]]]',
        b"[[[[[[[[0]]]]]]]]",
        b"[[[[{{{{nnn}}}}]]]]",
    )

    @staticmethod
    def compact(text: bytes) -> bytes:
        """Run-length form accepted after a leading ``~``, checksum last."""
        out = bytearray(b"~")
        i = 0
        while i < len(text):
            j = i
            while j < len(text) and text[j] == text[i] and j - i < 7:
                j += 1
            out += bytes((j - i, text[i]))
            i = j
        out.append(sum(out[1:]) % 256)
        return bytes(out)

    @classmethod
    def seed_corpus(cls) -> dict[str, bytes]:
        """Each document in plain and compact form. Repetitive documents are
        smaller compacted but far dearer to run."""
        seeds = {}
        for n, doc in enumerate(cls.DOCUMENTS):
            seeds[f"doc{n:02d}-plain"] = doc
            seeds[f"doc{n:02d}-compact"] = cls.compact(doc)
        return seeds


_BASE_MODELS = {c.name: c for c in (Fork3, KeyMatch, NestedParser)}
MODELS: dict[str, Callable[..., SyntheticTarget]] = {}
for _cls in _BASE_MODELS.values():
    MODELS[_cls.name] = _cls
    MODELS[_cls.name + "-flat"] = lambda *a, _cls=_cls, **kw: _cls(*a, flat=True, **kw)


# --- external processes -----------------------------------------------------


class ExternalTarget(Target):
    """Spawn-per-execution target. The process (or its instrumentation shim)
    writes showmap-format lines to the file named by ``$GREENFUZZ_TRACE_FILE``."""

    # charged to a synthetic meter, which cannot observe a real process
    cost = CostModel(default_edge_cpu_j=1e-5, byte_cpu_j=1e-7, base_cpu_j=1e-3, base_us=1000)

    def __init__(self, spec: TargetSpec):
        self.command = list(spec.command)
        self.input_mode = spec.input_mode
        self.timeout_s = spec.timeout_ms / 1000
        self.map_size = spec.map_size
        self.total_edges = spec.total_edges_declared
        self._tmp = tempfile.TemporaryDirectory(prefix="greenfuzz-")
        self._trace_path = Path(self._tmp.name) / "trace"
        self._input_path = Path(self._tmp.name) / "input"

    def close(self) -> None:
        self._tmp.cleanup()

    def run_under(self, data: bytes, meter: Meter):
        trace, status, sig = self._spawn(data)
        if isinstance(meter, SyntheticMeter):
            meter.charge(self.cost.reading(data, dict(trace.items())))
        return trace, status, sig

    def _spawn(self, data: bytes):
        self._trace_path.unlink(missing_ok=True)
        argv = self.command
        stdin_data = data
        if self.input_mode == "file":
            self._input_path.write_bytes(data)
            argv = [str(self._input_path) if a == "@@" else a for a in argv]
            stdin_data = b""
        env = dict(os.environ, **{TRACE_ENV: str(self._trace_path)})
        try:
            proc = subprocess.Popen(
                argv,
                stdin=subprocess.PIPE,
                stdout=subprocess.DEVNULL,
                stderr=subprocess.DEVNULL,
                env=env,
                start_new_session=True,
            )
        except OSError as exc:
            raise TargetError(f"cannot spawn {argv[0]!r}: {exc}") from exc
        status, sig = Status.OK, None
        try:
            proc.communicate(stdin_data, timeout=self.timeout_s)
        except subprocess.TimeoutExpired:
            try:
                os.killpg(proc.pid, signal.SIGKILL)
            except ProcessLookupError:
                pass
            proc.communicate()
            status = Status.TIMEOUT
        if status is Status.OK and proc.returncode < 0:
            status, sig = Status.CRASH, -proc.returncode
        try:
            text = self._trace_path.read_text()
        except FileNotFoundError:
            text = ""
        return EdgeTrace.from_showmap(text, self.map_size), status, sig


def resolve(spec: TargetSpec) -> Target:
    if spec.kind == "synthetic":
        return MODELS[spec.model](map_size=spec.map_size, timeout_ms=spec.timeout_ms)
    if not os.path.exists(spec.command[0]) and not shutil.which(spec.command[0]):
        raise ConfigError(f"target command {spec.command[0]!r} not found")
    return ExternalTarget(spec)


def fixture_corpus(model: str) -> dict[str, bytes]:
    """Seed corpus shipped with a synthetic model."""
    base = _BASE_MODELS.get(model.removesuffix("-flat"))
    if base is None:
        raise ConfigError(f"unknown synthetic model {model!r}")
    return base.seed_corpus()
