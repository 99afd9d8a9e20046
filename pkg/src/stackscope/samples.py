"""Uniform raw-sample stream over two interchangeable backends.

The live backend (:mod:`stackscope.live`) drives the kernel sampling
interface; the replay backend here feeds folded-stack trace files through the
same session contract so the whole analysis stack runs anywhere.

Samples carry frames LEAF-FIRST, as the kernel delivers call chains; the
symbolizer reverses them to root-first when resolving.
"""

from __future__ import annotations

import enum
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import folded
from .errors import NoSuchTarget, SessionClosed

# Replayed frames are interned into this reserved range, which sits inside
# the x86-64 non-canonical address hole: it can never collide with a real
# user or kernel address, so the symbolizer can recognize replayed frames
# and map them back to their textual names losslessly.
REPLAY_ADDR_BASE = 0x5EED_0000_0000_0000
REPLAY_ADDR_LIMIT = REPLAY_ADDR_BASE + (1 << 32)


class Origin(str, enum.Enum):
    """Which side of the privilege boundary a frame was captured on."""

    USER = "user"
    KERNEL = "kernel"
    UNKNOWN = "unknown"


class SessionState(str, enum.Enum):
    RUNNING = "running"
    DRAINED = "drained"
    CLOSED = "closed"


@dataclass(frozen=True, slots=True)
class RawSample:
    """One captured call chain.

    ``frames`` are virtual addresses leaf-first; ``contexts`` carries exactly
    one :class:`Origin` per frame (context sentinel values are consumed
    during decoding and never appear here).
    """

    timestamp_ns: int
    pid: int
    tid: int
    cpu: int
    frames: tuple[int, ...]
    contexts: tuple[Origin, ...]

    def __post_init__(self) -> None:
        if len(self.frames) != len(self.contexts):
            raise ValueError("frames and contexts must have equal length")


@dataclass
class SourceConfig:
    """Sampling source configuration shared by both backends."""

    mode: str = "live"  # "live" | "replay"
    target: str | int | None = None  # cgroup path, pid, or replay file path
    clock: str = "software-cpu-clock"
    period: float = 0.5  # seconds between samples per monitored cpu
    frequency: int | None = None  # samples/sec; overrides period when set
    max_stack_depth: int = 127
    poll_interval: float = 0.1  # seconds
    ring_pages: int = 64  # data pages per cpu ring, power of two

    def __post_init__(self) -> None:
        if self.mode not in ("live", "replay"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.clock != "software-cpu-clock":
            raise ValueError(f"unsupported clock {self.clock!r}")
        if self.period <= 0:
            raise ValueError("period must be positive")
        if not 1 <= self.max_stack_depth <= 512:
            raise ValueError("max_stack_depth must be within [1, 512]")
        if self.frequency is not None and self.frequency <= 0:
            raise ValueError("frequency must be positive")
        if self.ring_pages < 1 or self.ring_pages & (self.ring_pages - 1):
            raise ValueError("ring_pages must be a positive power of two")

    @property
    def period_ns(self) -> int:
        return int(self.period * 1e9)


@dataclass
class SourceStats:
    """Session counters; all monotonically non-decreasing while open."""

    samples_delivered: int = 0
    records_lost: int = 0
    samples_dropped_empty: int = 0
    bytes_consumed: int = 0


class ReplaySession:
    """Replays a folded-stack file as a deterministic sample stream.

    A folded record with count k yields k identical samples with synthetic,
    strictly increasing timestamps spaced by the configured period.  Frame
    names are interned into the reserved replay address range in first-seen
    order, so two replays of one file produce byte-identical streams.
    """

    mode = "replay"

    def __init__(self, config: SourceConfig, batch_limit: int = 1024):
        if config.mode != "replay":
            raise ValueError("ReplaySession requires mode='replay'")
        path = Path(str(config.target))
        if not path.is_file():
            raise NoSuchTarget(f"replay file not found: {path}")
        self.config = config
        self.batch_limit = batch_limit
        self.stats = SourceStats()
        self.names: list[str] = []
        self._ids: dict[str, int] = {}
        self._records: list[tuple[tuple[int, ...], int]] = []  # leaf-first ids
        with open(path, "r", encoding="utf-8") as fp:
            for _, frames, count in folded.iter_folded(fp):
                ids = tuple(self._intern(n) for n in reversed(frames))
                self._records.append((ids, count))
        self.stats.bytes_consumed = os.stat(path).st_size
        self._record_idx = 0
        self._repeat_left = self._records[0][1] if self._records else 0
        self._sample_idx = 0
        self.state = (SessionState.RUNNING if self._records
                      else SessionState.DRAINED)
        self.metadata = {
            "source_mode": "replay",
            "target": str(path),
            "period_ns": config.period_ns,
        }

    def _intern(self, name: str) -> int:
        idx = self._ids.get(name)
        if idx is None:
            idx = len(self.names)
            self._ids[name] = idx
            self.names.append(name)
        return REPLAY_ADDR_BASE + idx

    def poll(self) -> list[RawSample]:
        """Next batch in file order; empty once the file is exhausted."""
        if self.state is SessionState.CLOSED:
            raise SessionClosed("poll on closed replay session")
        batch: list[RawSample] = []
        period_ns = self.config.period_ns
        while len(batch) < self.batch_limit and self._record_idx < len(self._records):
            frames, _ = self._records[self._record_idx]
            batch.append(RawSample(
                timestamp_ns=self._sample_idx * period_ns,
                pid=0, tid=0, cpu=0,
                frames=frames,
                contexts=(Origin.USER,) * len(frames),
            ))
            self._sample_idx += 1
            self._repeat_left -= 1
            if self._repeat_left <= 0:
                self._record_idx += 1
                if self._record_idx < len(self._records):
                    self._repeat_left = self._records[self._record_idx][1]
        if self._record_idx >= len(self._records):
            self.state = SessionState.DRAINED
        self.stats.samples_delivered += len(batch)
        return batch

    def close(self) -> SourceStats:
        self.state = SessionState.CLOSED
        return self.stats


def open_replay(config: SourceConfig) -> ReplaySession:
    """Open a replay session over a folded-stack trace file."""
    return ReplaySession(config)


def open_source(config: SourceConfig):
    """Open whichever backend the config selects."""
    if config.mode == "replay":
        return open_replay(config)
    from .live import open_live

    return open_live(config)
