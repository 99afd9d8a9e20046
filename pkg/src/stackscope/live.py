"""Live sampling backend over the kernel perf interface.

One sampling descriptor is opened per online cpu, each with a mapped ring
buffer.  When the target is a control-group directory the descriptors attach
in cgroup scope so every thread and descendant process inside the group is
profiled; a plain pid target attaches per-cpu with inheritance.
"""

from __future__ import annotations

import errno
import mmap
import os
import select
import struct
from pathlib import Path

from . import perf_event as pe
from .errors import (NoSuchTarget, PermissionDenied, SessionClosed,
                     UnsupportedKernel)
from .samples import RawSample, SessionState, SourceConfig, SourceStats

_U64 = struct.Struct("<Q")


def online_cpus() -> list[int]:
    """Logical cpus that can currently schedule work."""
    try:
        text = Path("/sys/devices/system/cpu/online").read_text().strip()
        cpus: list[int] = []
        for part in text.split(","):
            if "-" in part:
                lo, hi = part.split("-")
                cpus.extend(range(int(lo), int(hi) + 1))
            else:
                cpus.append(int(part))
        if cpus:
            return cpus
    except (OSError, ValueError):
        pass
    return list(range(os.cpu_count() or 1))


def _paranoia_level() -> str:
    try:
        return Path("/proc/sys/kernel/perf_event_paranoid").read_text().strip()
    except OSError:
        return "unreadable"


class _CpuRing:
    def __init__(self, fd: int, buf: mmap.mmap, page_size: int,
                 ring_bytes: int):
        self.fd = fd
        self.buf = buf
        self.page_size = page_size
        self.ring_bytes = ring_bytes

    def data_region(self) -> tuple[int, int]:
        offset = _U64.unpack_from(self.buf, pe.MMAP_PAGE_DATA_OFFSET)[0]
        size = _U64.unpack_from(self.buf, pe.MMAP_PAGE_DATA_SIZE)[0]
        if offset == 0 or size == 0:  # pre-data_offset kernels
            offset, size = self.page_size, self.ring_bytes
        return offset, size

    def read_records(self) -> tuple[list, int]:
        """Drain readable bytes; returns (records, bytes consumed)."""
        head = _U64.unpack_from(self.buf, pe.MMAP_PAGE_DATA_HEAD)[0]
        tail = _U64.unpack_from(self.buf, pe.MMAP_PAGE_DATA_TAIL)[0]
        if head == tail:
            return [], 0
        offset, size = self.data_region()
        span = head - tail
        if span > size:  # overwritten while unread; recover what remains
            tail = head - size
            span = size
        lo = tail % size
        hi = head % size
        if lo < hi:
            data = bytes(self.buf[offset + lo:offset + hi])
        else:
            data = bytes(self.buf[offset + lo:offset + size]) + \
                bytes(self.buf[offset:offset + hi])
        records, consumed = pe.parse_records(data)
        _U64.pack_into(self.buf, pe.MMAP_PAGE_DATA_TAIL, tail + consumed)
        return records, consumed

    def close(self) -> None:
        try:
            self.buf.close()
        except BufferError:
            pass
        os.close(self.fd)


class LiveSession:
    """Kernel-backed sample stream for one target (cgroup dir or pid)."""

    mode = "live"

    def __init__(self, config: SourceConfig):
        if config.mode != "live":
            raise ValueError("LiveSession requires mode='live'")
        self.config = config
        self.stats = SourceStats()
        self.state = SessionState.RUNNING
        self._rings: list[_CpuRing] = []
        self._remap_hooks: list = []
        self._page_size = mmap.PAGESIZE

        target = config.target
        cgroup_fd = None
        attach_mode = "pid"
        if isinstance(target, str) and not str(target).isdigit():
            path = Path(target)
            if not path.is_dir():
                raise NoSuchTarget(f"no such control group: {target}")
            try:
                cgroup_fd = os.open(str(path), os.O_RDONLY)
            except OSError as e:
                raise NoSuchTarget(f"cannot open control group {target}: {e}")
            attach_mode = "cgroup"
            pid_arg = cgroup_fd
            flags = pe.PERF_FLAG_PID_CGROUP | pe.PERF_FLAG_FD_CLOEXEC
        else:
            pid_arg = int(target)  # type: ignore[arg-type]
            if not Path(f"/proc/{pid_arg}").is_dir():
                raise NoSuchTarget(f"no such pid: {pid_arg}")
            flags = pe.PERF_FLAG_FD_CLOEXEC

        try:
            self._open_rings(pid_arg, flags, inherit=(attach_mode == "pid"))
        finally:
            if cgroup_fd is not None:
                os.close(cgroup_fd)
        self.attach_mode = attach_mode
        self.metadata = {
            "source_mode": "live",
            "target": str(target),
            "period_ns": config.period_ns,
            "attach_mode": attach_mode,
            "cpus": len(self._rings),
        }
        self._poller = select.poll()
        for ring in self._rings:
            self._poller.register(ring.fd, select.POLLIN)
        self._enable()

    # -- setup

    def _open_rings(self, pid_arg: int, flags: int, inherit: bool) -> None:
        cfg = self.config
        attr = pe.build_attr(cfg.period_ns, cfg.max_stack_depth,
                             frequency=cfg.frequency)
        if inherit:
            attr.flags |= pe.FLAG_INHERIT
        mmap_len = (1 + cfg.ring_pages) * self._page_size
        try:
            for cpu in online_cpus():
                fd = self._open_one(attr, pid_arg, cpu, flags)
                buf = mmap.mmap(fd, mmap_len, mmap.MAP_SHARED,
                                mmap.PROT_READ | mmap.PROT_WRITE)
                self._rings.append(_CpuRing(fd, buf, self._page_size,
                                            cfg.ring_pages * self._page_size))
        except Exception:
            self._teardown()
            raise

    def _open_one(self, attr: pe.PerfEventAttr, pid_arg: int, cpu: int,
                  flags: int) -> int:
        try:
            return pe.perf_event_open(attr, pid_arg, cpu, -1, flags)
        except OSError as e:
            if e.errno in (errno.EPERM, errno.EACCES):
                raise PermissionDenied(
                    f"perf_event_open denied (kernel perf_event_paranoid="
                    f"{_paranoia_level()}); retry with privileges or lower "
                    f"the paranoia setting") from None
            if e.errno == errno.ESRCH:
                raise NoSuchTarget(f"target pid {pid_arg} exited") from None
            if e.errno in (errno.ENOSYS, errno.ENODEV, errno.EOPNOTSUPP):
                raise UnsupportedKernel(
                    f"kernel does not support this sampling interface "
                    f"({errno.errorcode.get(e.errno, e.errno)})") from None
            raise

    def _enable(self) -> None:
        import fcntl

        for ring in self._rings:
            fcntl.ioctl(ring.fd, pe.PERF_EVENT_IOC_ENABLE, 0)

    # -- streaming

    def add_remap_hook(self, hook) -> None:
        """Called with each mmap record so symbol maps can be refreshed."""
        self._remap_hooks.append(hook)

    def poll(self) -> list[RawSample]:
        """Drain all readable records; never blocks past poll_interval."""
        if self.state is SessionState.CLOSED:
            raise SessionClosed("poll on closed live session")
        self._poller.poll(int(self.config.poll_interval * 1000))
        batch: list[RawSample] = []
        for ring in self._rings:
            records, consumed = ring.read_records()
            self.stats.bytes_consumed += consumed
            for rec in records:
                if isinstance(rec, pe.SampleRecord):
                    frames, contexts = pe.chain_to_frames(rec.ips)
                    if not frames:
                        self.stats.samples_dropped_empty += 1
                        continue
                    batch.append(RawSample(rec.time_ns, rec.pid, rec.tid,
                                           rec.cpu, frames, contexts))
                elif isinstance(rec, pe.LostRecord):
                    self.stats.records_lost += rec.lost
                elif isinstance(rec, pe.MmapRecord):
                    for hook in self._remap_hooks:
                        hook(rec)
        self.stats.samples_delivered += len(batch)
        return batch

    def close(self) -> SourceStats:
        if self.state is not SessionState.CLOSED:
            self._teardown()
            self.state = SessionState.CLOSED
        return self.stats

    def _teardown(self) -> None:
        import fcntl

        for ring in self._rings:
            try:
                fcntl.ioctl(ring.fd, pe.PERF_EVENT_IOC_DISABLE, 0)
            except OSError:
                pass
            ring.close()
        self._rings = []


def open_live(config: SourceConfig) -> LiveSession:
    """Open a live sampling session per the config's target."""
    return LiveSession(config)


def live_sampling_supported() -> bool:
    """Probe whether this kernel/privilege level can open a self-sample."""
    attr = pe.build_attr(period_ns=10_000_000, max_stack_depth=16)
    try:
        fd = pe.perf_event_open(attr, os.getpid(), -1, -1,
                                pe.PERF_FLAG_FD_CLOEXEC)
    except OSError:
        return False
    os.close(fd)
    return True
