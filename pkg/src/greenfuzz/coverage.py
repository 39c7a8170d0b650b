"""Edge coverage: per-run traces, hit-count classes and the campaign-global map.

Traces are stored sparsely (edge index -> hit class) because synthetic and
external targets report only the edges they touched; ``EdgeTrace.buckets``
materialises the dense ``MAP_SIZE`` view when one is needed.
"""

from __future__ import annotations

import hashlib
from collections.abc import Iterable, Mapping
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, GreenFuzzError

MAP_SIZE = 1 << 16

HIT_CLASSES = (0, 1, 2, 3, 4, 8, 16, 32, 128)


def _class_of(count: int) -> int:
    if count < 4:
        return count
    if count < 8:
        return 4
    if count < 16:
        return 8
    if count < 32:
        return 16
    if count < 128:
        return 32
    return 128


_CLASS_LUT = np.array([_class_of(c) for c in range(256)], dtype=np.uint8)
_CLASS_LIST = [_class_of(c) for c in range(256)]


def classify_count(count: int) -> int:
    """Bucket a single raw hit count into its AFL hit class."""
    if count < 0:
        raise ValueError(f"negative hit count {count}")
    return _CLASS_LIST[count] if count < 256 else 128


class TraceFormatError(GreenFuzzError, ValueError):
    """A showmap-format trace could not be parsed."""


class EdgeTrace:
    """Immutable set of (edge index, hit class) pairs for one execution."""

    __slots__ = ("map_size", "_classes", "_edges", "_digest")

    def __init__(self, classes: Mapping[int, int] | None = None, map_size: int = MAP_SIZE):
        _check_map_size(map_size)
        clean: dict[int, int] = {}
        for index, cls in (classes or {}).items():
            index = int(index)
            cls = int(cls)
            if not 0 <= index < map_size:
                raise ValueError(f"edge index {index} outside map of size {map_size}")
            if cls not in HIT_CLASSES:
                raise ValueError(f"{cls} is not a hit class")
            if cls:
                clean[index] = cls
        self._init(map_size, clean)

    def _init(self, map_size: int, classes: dict[int, int]) -> None:
        self.map_size = map_size
        self._classes = dict(sorted(classes.items()))
        self._edges: frozenset[int] | None = None
        self._digest: str | None = None

    @classmethod
    def from_hits(cls, hits: Mapping[int, int], map_size: int = MAP_SIZE) -> EdgeTrace:
        """Build a trace from sparse raw hit counts (index -> count)."""
        classes = {}
        for index, count in hits.items():
            if count <= 0:
                if count < 0:
                    raise ValueError(f"negative hit count {count} at edge {index}")
                continue
            if not 0 <= index < map_size:
                raise ValueError(f"edge index {index} outside map of size {map_size}")
            classes[index] = _CLASS_LIST[count] if count < 256 else 128
        trace = cls.__new__(cls)
        trace._init(map_size, classes)
        return trace

    @classmethod
    def from_showmap(cls, text: str, map_size: int = MAP_SIZE) -> EdgeTrace:
        """Parse ``edge_index:class`` lines. Raw counts are accepted and bucketed."""
        hits: dict[int, int] = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line:
                continue
            try:
                left, right = line.split(":")
                index, count = int(left), int(right)
            except ValueError:
                raise TraceFormatError(f"line {lineno}: expected 'edge:class', got {line!r}") from None
            if not 0 <= index < map_size or count < 0:
                raise TraceFormatError(f"line {lineno}: value out of range in {line!r}")
            # repeated edges accumulate, as a shim may flush more than once
            hits[index] = hits.get(index, 0) + count
        return cls.from_hits(hits, map_size)

    def to_showmap(self) -> str:
        return "".join(f"{i}:{c}\n" for i, c in self._classes.items())

    @property
    def buckets(self) -> np.ndarray:
        dense = np.zeros(self.map_size, dtype=np.uint8)
        if self._classes:
            dense[list(self._classes)] = list(self._classes.values())
        return dense

    def items(self):
        return self._classes.items()

    def class_of(self, index: int) -> int:
        return self._classes.get(index, 0)

    @property
    def edges(self) -> frozenset[int]:
        if self._edges is None:
            self._edges = frozenset(self._classes)
        return self._edges

    def digest(self) -> str:
        if self._digest is None:
            h = hashlib.sha1(str(self.map_size).encode())
            for index, cls in self._classes.items():
                h.update(b"%d:%d;" % (index, cls))
            self._digest = h.hexdigest()
        return self._digest

    def __len__(self) -> int:
        return len(self._classes)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EdgeTrace):
            return NotImplemented
        return self.map_size == other.map_size and self._classes == other._classes

    def __hash__(self) -> int:
        return hash(self.digest())

    def __repr__(self) -> str:
        shown = dict(list(self._classes.items())[:8])
        more = "..." if len(self._classes) > 8 else ""
        return f"EdgeTrace({shown}{more}, map_size={self.map_size})"


def _check_map_size(map_size: int) -> None:
    if map_size <= 0 or map_size & (map_size - 1):
        raise ConfigError(f"map size must be a power of two, got {map_size}")


def classify_counts(raw: Iterable[int] | np.ndarray, map_size: int | None = None) -> EdgeTrace:
    """Bucket a dense array of raw hit counts into an ``EdgeTrace``."""
    arr = np.asarray(raw)
    if arr.ndim != 1:
        raise ValueError("raw counts must be one-dimensional")
    size = len(arr) if map_size is None else map_size
    if len(arr) != size:
        raise ConfigError(f"raw counts have {len(arr)} entries, map size is {size}")
    _check_map_size(size)
    index = np.flatnonzero(arr)
    counts = arr[index]
    if (counts < 0).any():
        raise ValueError("raw hit counts must be non-negative")
    classes = _CLASS_LUT[np.minimum(counts, 255).astype(np.intp)]
    trace = EdgeTrace.__new__(EdgeTrace)
    trace._init(size, dict(zip(index.tolist(), classes.tolist())))
    return trace


def edges_of(trace: EdgeTrace) -> frozenset[int]:
    return trace.edges


@dataclass(frozen=True)
class NoveltyReport:
    new_edges: int = 0
    # edges seen before that gained a hit class not seen on them until now
    new_classes: int = 0

    def __bool__(self) -> bool:
        return bool(self.new_edges or self.new_classes)


# one virgin bit per nonzero class; class 3 would otherwise alias 1 | 2
_CLASS_BIT = {cls: 1 << k for k, cls in enumerate(HIT_CLASSES[1:])}


class CoverageMap:
    """Campaign-global union of seen hit classes, one byte per edge.

    Each nonzero class owns one bit of the edge's byte, so ``virgin[i]`` is
    the set of classes ever seen on edge ``i``.
    """

    def __init__(self, map_size: int = MAP_SIZE):
        _check_map_size(map_size)
        self.map_size = map_size
        self.virgin = bytearray(map_size)
        self.unique_edges = 0

    def merge_and_detect(self, trace: EdgeTrace) -> NoveltyReport:
        if trace.map_size != self.map_size:
            raise ConfigError(f"trace map size {trace.map_size} != coverage map size {self.map_size}")
        virgin = self.virgin
        new_edges = new_classes = 0
        for index, cls in trace._classes.items():
            seen = virgin[index]
            bit = _CLASS_BIT[cls]
            if bit & ~seen:
                if seen == 0:
                    new_edges += 1
                else:
                    new_classes += 1
                virgin[index] = seen | bit
        self.unique_edges += new_edges
        return NoveltyReport(new_edges, new_classes)

    def classes_seen(self, index: int) -> set[int]:
        return {cls for cls, bit in _CLASS_BIT.items() if self.virgin[index] & bit}

    def covered(self) -> frozenset[int]:
        return frozenset(i for i, v in enumerate(self.virgin) if v)


def merge_and_detect(cov: CoverageMap, trace: EdgeTrace) -> NoveltyReport:
    return cov.merge_and_detect(trace)
