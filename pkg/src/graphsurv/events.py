"""Event histories: ingestion, preprocessing and temporal splits."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class IngestError(ValueError):
    """Raised when an input event file cannot be parsed."""


class NodeTable:
    """Bijective map between external node labels and dense 0-based ids."""

    def __init__(self, labels: Sequence[str] = ()):
        self._labels: list[str] = []
        self._index: dict[str, int] = {}
        for lab in labels:
            self.add(lab)

    def add(self, label: str) -> int:
        idx = self._index.get(label)
        if idx is None:
            idx = len(self._labels)
            self._labels.append(label)
            self._index[label] = idx
        return idx

    def id(self, label: str) -> int:
        return self._index[label]

    def label(self, idx: int) -> str:
        return self._labels[idx]

    @property
    def labels(self) -> list[str]:
        return list(self._labels)

    def __len__(self) -> int:
        return len(self._labels)

    def __contains__(self, label: str) -> bool:
        return label in self._index

    def __eq__(self, other) -> bool:
        return isinstance(other, NodeTable) and self._labels == other._labels


@dataclass(frozen=True)
class Event:
    src: int
    dst: int
    time: float


@dataclass(frozen=True)
class SplitSpec:
    t_train: float
    t_val: float
    t_test: float

    def validate(self, h: "EventHistory") -> None:
        if not (h.start < self.t_train <= self.t_val <= self.t_test <= h.horizon):
            raise ValueError(
                f"invalid split cut-offs ({self.t_train}, {self.t_val}, {self.t_test}) "
                f"for history on [{h.start}, {h.horizon}]"
            )
        if self.t_train < h.horizon and not self.t_train < self.t_val:
            raise ValueError("t_train must be strictly before t_val")

    @classmethod
    def from_fractions(cls, h: "EventHistory", train: float, val: float) -> "SplitSpec":
        """Cut-offs at the event-count quantiles ``train`` and ``train + val``."""
        if not (0 < train < 1 and 0 <= val and train + val <= 1):
            raise ValueError("fractions must satisfy 0 < train < 1, train + val <= 1")
        m = len(h)
        if m < 3:
            raise ValueError("need at least 3 events to split")
        i_tr = max(1, int(round(train * m)))
        # the train cut must lie strictly after the history start
        i_tr = max(i_tr, int(np.searchsorted(h.times, h.start, side="right")) + 1)
        if i_tr > m:
            raise ValueError("no valid train cut-off: too few events after the history start")
        if i_tr == m:
            return cls(float(h.times[-1]), h.horizon, h.horizon)
        i_va = max(i_tr + 1, int(round((train + val) * m)))
        t_train = float(h.times[i_tr - 1])
        t_val = float(h.times[min(i_va, m) - 1])
        return cls(t_train, t_val, h.horizon)


@dataclass
class EventHistory:
    """Time-ordered dyadic events on the window [start, horizon].

    ``src``/``dst`` index into ``nodes``; ``sources``/``destinations`` are the
    node ids allowed in each role (the dyad universe is their product minus
    self-pairs).
    """

    src: np.ndarray
    dst: np.ndarray
    times: np.ndarray
    nodes: NodeTable
    horizon: float
    start: float = 0.0
    sources: np.ndarray | None = None
    destinations: np.ndarray | None = None
    raw_count: int = field(default=0, compare=False)

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=np.int64)
        self.dst = np.asarray(self.dst, dtype=np.int64)
        self.times = np.asarray(self.times, dtype=np.float64)
        if not (len(self.src) == len(self.dst) == len(self.times)):
            raise ValueError("src, dst and times must have equal length")
        if self.sources is None:
            self.sources = np.unique(self.src)
        if self.destinations is None:
            self.destinations = np.unique(self.dst)
        self.sources = np.unique(np.asarray(self.sources, dtype=np.int64))
        self.destinations = np.unique(np.asarray(self.destinations, dtype=np.int64))
        if len(self.times):
            if self.times[0] < self.start:
                raise ValueError("event before history start")
            if self.times[-1] > self.horizon:
                raise ValueError("event after history horizon")
            if np.any(np.diff(self.times) < 0):
                raise ValueError("events must be sorted by time")

    def __len__(self) -> int:
        return len(self.times)

    def __iter__(self):
        for u, v, t in zip(self.src.tolist(), self.dst.tolist(), self.times.tolist()):
            yield Event(u, v, t)

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_dyads(self) -> int:
        """|U x V| minus self-pairs."""
        both = np.intersect1d(self.sources, self.destinations).size
        return len(self.sources) * len(self.destinations) - both

    def is_strict(self) -> bool:
        return bool(np.all(np.diff(self.times) > 0))

    def edge_history(self, u: int, v: int) -> np.ndarray:
        return self.times[(self.src == u) & (self.dst == v)]

    def subset(self, mask: np.ndarray, start: float, horizon: float) -> "EventHistory":
        return EventHistory(
            self.src[mask], self.dst[mask], self.times[mask], self.nodes,
            horizon=horizon, start=start,
            sources=self.sources, destinations=self.destinations,
        )

    def stats(self) -> dict:
        return {
            "M": len(self),
            "n_nodes": self.n_nodes,
            "n_src": int(len(self.sources)),
            "n_dst": int(len(self.destinations)),
            "n_dyads_observed": int(len(set(zip(self.src.tolist(), self.dst.tolist())))),
            "T": self.horizon,
            "t_min": float(self.times[0]) if len(self) else None,
            "start": self.start,
            "directed": True,
        }

    @classmethod
    def from_events(
        cls,
        events: Sequence[tuple],
        horizon: float | None = None,
        start: float = 0.0,
        n_nodes: int | None = None,
    ) -> "EventHistory":
        """Build from ``(src, dst, time)`` tuples of integer node ids.

        With ``n_nodes`` given every node may act as source and destination.
        """
        ev = sorted(events, key=lambda e: e[2])
        src = np.array([e[0] for e in ev], dtype=np.int64)
        dst = np.array([e[1] for e in ev], dtype=np.int64)
        times = np.array([e[2] for e in ev], dtype=np.float64)
        if n_nodes is None:
            n_nodes = int(max(src.max(initial=-1), dst.max(initial=-1))) + 1
        nodes = NodeTable([str(i) for i in range(n_nodes)])
        if horizon is None:
            horizon = float(times[-1]) if len(times) else start
        allnodes = np.arange(n_nodes)
        return cls(src, dst, times, nodes, horizon=horizon, start=start,
                   sources=allnodes, destinations=allnodes)


def ingest_csv(
    path,
    columns: tuple[int, int, int] = (0, 1, 2),
    delimiter: str | None = None,
    header: bool | None = None,
    comment: str = "#",
) -> EventHistory:
    """Read ``(src, dst, timestamp)`` rows from a delimited text file.

    ``delimiter=None`` splits on commas if present, else on whitespace.
    ``header=None`` treats a first row with a non-numeric time as a header.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"file not found: {path}")
    rows: list[tuple[str, str, float]] = []
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith(comment):
                continue
            if delimiter is None:
                parts = [p.strip() for p in line.split(",")] if "," in line else line.split()
            else:
                parts = [p.strip() for p in line.split(delimiter)]
            try:
                fields = [parts[c] for c in columns]
            except IndexError:
                raise IngestError(f"{path}:{lineno}: expected at least {max(columns) + 1} columns")
            try:
                t = float(fields[2])
            except ValueError:
                if not rows and header is not False:
                    header = True
                    continue
                raise IngestError(f"{path}:{lineno}: timestamp {fields[2]!r} is not numeric")
            if not math.isfinite(t) or t < 0:
                raise IngestError(f"{path}:{lineno}: timestamp must be finite and >= 0")
            rows.append((fields[0], fields[1], t))
    if not rows:
        raise IngestError(f"{path}: no events")

    # stable sort keeps file order among ties
    rows.sort(key=lambda r: r[2])
    nodes = NodeTable()
    src = np.empty(len(rows), dtype=np.int64)
    dst = np.empty(len(rows), dtype=np.int64)
    times = np.empty(len(rows), dtype=np.float64)
    for i, (a, b, t) in enumerate(rows):
        src[i] = nodes.add(a)
        dst[i] = nodes.add(b)
        times[i] = t
    h = EventHistory(src, dst, times, nodes, horizon=float(times[-1]), start=0.0)
    h.raw_count = len(rows)
    log.info("read %d raw events, %d nodes from %s", len(rows), len(nodes), path)
    return h


def preprocess(
    h: EventHistory,
    dedup_simultaneous: bool = True,
    max_events: int | None = None,
    jitter_ties: float | None = None,
    drop_self_loops: bool = True,
    rescale: float | None = None,
) -> EventHistory:
    """Clean a history so event times are strictly increasing.

    Exact duplicates ``(src, dst, t)`` keep their first occurrence. With
    ``dedup_simultaneous`` any remaining event sharing a timestamp with an
    earlier one is dropped (broadcast messages), unless ``jitter_ties`` is
    given, in which case tied events are shifted forward by multiples of it.
    ``rescale`` maps [t_min, t_max] affinely onto [0, rescale].
    """
    src, dst, times = h.src, h.dst, h.times
    keep = np.ones(len(times), dtype=bool)
    if drop_self_loops:
        keep &= src != dst
    seen: set = set()
    for i in np.flatnonzero(keep):
        key = (int(src[i]), int(dst[i]), float(times[i]))
        if key in seen:
            keep[i] = False
        else:
            seen.add(key)
    src, dst, times = src[keep], dst[keep], times[keep].copy()

    if len(times) > 1:
        tied = np.concatenate([[False], np.diff(times) <= 0])
        if jitter_ties is not None and jitter_ties > 0:
            for i in range(1, len(times)):
                if times[i] <= times[i - 1]:
                    times[i] = times[i - 1] + jitter_ties
        elif dedup_simultaneous:
            ok = ~tied
            src, dst, times = src[ok], dst[ok], times[ok]

    if max_events is not None:
        src, dst, times = src[:max_events], dst[:max_events], times[:max_events]

    start, horizon = h.start, h.horizon
    if rescale is not None and len(times):
        t0, t1 = float(times[0]), float(times[-1])
        span = t1 - t0 if t1 > t0 else 1.0
        times = (times - t0) * (rescale / span)
        if jitter_ties is not None:
            # rescaling can merge jittered neighbours again
            for i in range(1, len(times)):
                if times[i] <= times[i - 1]:
                    times[i] = np.nextafter(times[i - 1], np.inf)
        start, horizon = 0.0, float(times[-1])
    elif max_events is not None and len(times):
        horizon = float(times[-1])
    if len(times) and times[-1] > horizon:
        horizon = float(times[-1])

    out = EventHistory(src, dst, times, h.nodes, horizon=horizon, start=start)
    out.raw_count = h.raw_count or len(h)
    return out


def split(h: EventHistory, s: SplitSpec) -> tuple[EventHistory, EventHistory, EventHistory]:
    """Partition into [start, t_train], (t_train, t_val], (t_val, T]."""
    s.validate(h)
    t = h.times
    m_tr = t <= s.t_train
    m_va = (t > s.t_train) & (t <= s.t_val)
    m_te = t > s.t_val
    return (
        h.subset(m_tr, h.start, s.t_train),
        h.subset(m_va, s.t_train, s.t_val),
        h.subset(m_te, s.t_val, h.horizon),
    )


def write_events(h: EventHistory, path, sidecar: bool = True) -> None:
    """Write the canonical ``src,dst,time`` file plus a JSON stats sidecar."""
    path = Path(path)
    labels = h.nodes.labels
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["src", "dst", "time"])
        for u, v, t in zip(h.src.tolist(), h.dst.tolist(), h.times.tolist()):
            w.writerow([labels[u], labels[v], repr(t)])
    if sidecar:
        meta = {
            "M": len(h),
            "n_src": int(len(h.sources)),
            "n_dst": int(len(h.destinations)),
            "T": h.horizon,
            "t_min": float(h.times[0]) if len(h) else None,
            "start": h.start,
            "raw_count": h.raw_count,
        }
        sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")


def read_events(path) -> EventHistory:
    """Read a canonical event file, restoring start/horizon from its sidecar."""
    h = ingest_csv(path, header=True)
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
        h.start = float(meta.get("start", 0.0))
        h.horizon = max(float(meta.get("T", h.horizon)), h.horizon)
        h.raw_count = int(meta.get("raw_count", len(h)))
    return h
