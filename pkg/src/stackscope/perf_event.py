"""Kernel sampling ABI: event attributes, syscall binding, record decoding.

Only what the live backend needs is bound: software-clock sampling events
with call-chain capture, per-cpu ring buffers, and the record types those
rings can carry.  Record decoding is pure (bytes in, records out) so it is
testable with crafted buffers on any host.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import platform
import struct
from dataclasses import dataclass

# --- event types / configs -------------------------------------------------

PERF_TYPE_SOFTWARE = 1
PERF_COUNT_SW_CPU_CLOCK = 0

# --- sample_type bits -------------------------------------------------------

PERF_SAMPLE_IP = 1 << 0
PERF_SAMPLE_TID = 1 << 1
PERF_SAMPLE_TIME = 1 << 2
PERF_SAMPLE_CALLCHAIN = 1 << 5
PERF_SAMPLE_CPU = 1 << 7

# Fixed layout used by every event this tool opens.
SAMPLE_TYPE = (PERF_SAMPLE_TID | PERF_SAMPLE_TIME | PERF_SAMPLE_CPU
               | PERF_SAMPLE_CALLCHAIN)

# --- attr flag bits (bit offsets into the u64 flags word) -------------------

FLAG_DISABLED = 1 << 0
FLAG_INHERIT = 1 << 1
FLAG_EXCLUDE_KERNEL = 1 << 5
FLAG_EXCLUDE_HV = 1 << 6
FLAG_MMAP = 1 << 8
FLAG_COMM = 1 << 9
FLAG_FREQ = 1 << 10
FLAG_WATERMARK = 1 << 14
FLAG_EXCLUDE_CALLCHAIN_KERNEL = 1 << 21
FLAG_USE_CLOCKID = 1 << 25

# --- open flags --------------------------------------------------------------

PERF_FLAG_PID_CGROUP = 1 << 2
PERF_FLAG_FD_CLOEXEC = 1 << 3

# --- record header types ------------------------------------------------------

PERF_RECORD_MMAP = 1
PERF_RECORD_LOST = 2
PERF_RECORD_COMM = 3
PERF_RECORD_EXIT = 4
PERF_RECORD_FORK = 7
PERF_RECORD_SAMPLE = 9
PERF_RECORD_MMAP2 = 10

# --- call-chain context sentinels (u64 two's-complement values) ---------------

U64 = (1 << 64) - 1
PERF_CONTEXT_HV = -32 & U64
PERF_CONTEXT_KERNEL = -128 & U64
PERF_CONTEXT_USER = -512 & U64
PERF_CONTEXT_GUEST = -2048 & U64
PERF_CONTEXT_GUEST_KERNEL = -2176 & U64
PERF_CONTEXT_GUEST_USER = -2560 & U64
PERF_CONTEXT_MAX = -4095 & U64  # anything >= this is a marker, not an address

# --- ioctls -------------------------------------------------------------------

PERF_EVENT_IOC_ENABLE = 0x2400
PERF_EVENT_IOC_DISABLE = 0x2401

# --- metadata page field offsets (perf_event_mmap_page) -----------------------

MMAP_PAGE_DATA_HEAD = 1024
MMAP_PAGE_DATA_TAIL = 1032
MMAP_PAGE_DATA_OFFSET = 1040
MMAP_PAGE_DATA_SIZE = 1048

PERF_ATTR_SIZE_VER5 = 112

CLOCK_MONOTONIC = 1

_SYSCALL_NR = {
    "x86_64": 298,
    "i686": 336,
    "i386": 336,
    "aarch64": 241,
    "arm64": 241,
    "riscv64": 241,
    "armv7l": 364,
    "armv6l": 364,
}


class PerfEventAttr(ctypes.Structure):
    """struct perf_event_attr, sized at VER7 (128 bytes), submitted at VER5."""

    _fields_ = [
        ("type", ctypes.c_uint32),
        ("size", ctypes.c_uint32),
        ("config", ctypes.c_uint64),
        ("sample_period", ctypes.c_uint64),  # union with sample_freq
        ("sample_type", ctypes.c_uint64),
        ("read_format", ctypes.c_uint64),
        ("flags", ctypes.c_uint64),
        ("wakeup_events", ctypes.c_uint32),  # union with wakeup_watermark
        ("bp_type", ctypes.c_uint32),
        ("config1", ctypes.c_uint64),
        ("config2", ctypes.c_uint64),
        ("branch_sample_type", ctypes.c_uint64),
        ("sample_regs_user", ctypes.c_uint64),
        ("sample_stack_user", ctypes.c_uint32),
        ("clockid", ctypes.c_int32),
        ("sample_regs_intr", ctypes.c_uint64),
        ("aux_watermark", ctypes.c_uint32),
        ("sample_max_stack", ctypes.c_uint16),
        ("_reserved_2", ctypes.c_uint16),
        ("aux_sample_size", ctypes.c_uint32),
        ("_reserved_3", ctypes.c_uint32),
        ("sig_data", ctypes.c_uint64),
    ]


def build_attr(period_ns: int, max_stack_depth: int,
               frequency: int | None = None,
               exclude_kernel: bool = False,
               wakeup_events: int = 1) -> PerfEventAttr:
    """Software cpu-clock sampling attr with call-chain capture.

    The software clock's period unit is nanoseconds, so a time-based sampling
    period maps directly onto ``sample_period``.
    """
    attr = PerfEventAttr()
    attr.type = PERF_TYPE_SOFTWARE
    attr.size = PERF_ATTR_SIZE_VER5
    attr.config = PERF_COUNT_SW_CPU_CLOCK
    if frequency is not None:
        attr.sample_period = frequency
        attr.flags |= FLAG_FREQ
    else:
        attr.sample_period = period_ns
    attr.sample_type = SAMPLE_TYPE
    attr.flags |= FLAG_DISABLED | FLAG_MMAP | FLAG_EXCLUDE_HV
    if exclude_kernel:
        attr.flags |= FLAG_EXCLUDE_KERNEL | FLAG_EXCLUDE_CALLCHAIN_KERNEL
    attr.wakeup_events = wakeup_events
    attr.sample_max_stack = max_stack_depth
    return attr


_libc = None


def _get_libc():
    global _libc
    if _libc is None:
        _libc = ctypes.CDLL(None, use_errno=True)
    return _libc


def perf_event_open(attr: PerfEventAttr, pid: int, cpu: int,
                    group_fd: int = -1, flags: int = 0) -> int:
    """Raw syscall wrapper; returns the event fd or raises OSError."""
    nr = _SYSCALL_NR.get(platform.machine())
    if nr is None:
        raise OSError(38, f"perf_event_open syscall number unknown for "
                          f"{platform.machine()}")
    libc = _get_libc()
    fd = libc.syscall(nr, ctypes.byref(attr), pid, cpu, group_fd, flags)
    if fd < 0:
        err = ctypes.get_errno()
        raise OSError(err, f"perf_event_open failed: errno {err}")
    return fd


# --- record decoding ----------------------------------------------------------


@dataclass(frozen=True)
class SampleRecord:
    pid: int
    tid: int
    time_ns: int
    cpu: int
    ips: tuple[int, ...]


@dataclass(frozen=True)
class LostRecord:
    event_id: int
    lost: int


@dataclass(frozen=True)
class MmapRecord:
    pid: int
    tid: int
    addr: int
    length: int
    pgoff: int
    filename: str


@dataclass(frozen=True)
class OtherRecord:
    type: int


_HEADER = struct.Struct("<IHH")  # type, misc, size
_SAMPLE_FIXED = struct.Struct("<iiQIIQ")  # pid, tid, time, cpu, res, nr
_LOST = struct.Struct("<QQ")
_MMAP_FIXED = struct.Struct("<iiQQQ")


def parse_records(buf: bytes) -> tuple[list, int]:
    """Decode a span of ring-buffer bytes into records.

    Returns (records, consumed).  ``consumed`` can trail ``len(buf)`` when the
    span ends mid-record (the producer commits whole records, but a caller
    may hand in a truncated copy); the caller advances its tail by it.
    """
    records: list = []
    off = 0
    n = len(buf)
    while off + _HEADER.size <= n:
        rtype, _misc, size = _HEADER.unpack_from(buf, off)
        if size < _HEADER.size or off + size > n:
            break
        body = off + _HEADER.size
        if rtype == PERF_RECORD_SAMPLE:
            rec = _parse_sample(buf, body, off + size)
        elif rtype == PERF_RECORD_LOST:
            event_id, lost = _LOST.unpack_from(buf, body)
            rec = LostRecord(event_id, lost)
        elif rtype in (PERF_RECORD_MMAP, PERF_RECORD_MMAP2):
            rec = _parse_mmap(buf, body, off + size)
        else:
            rec = OtherRecord(rtype)
        records.append(rec)
        off += size
    return records, off


def _parse_sample(buf: bytes, off: int, end: int) -> SampleRecord | OtherRecord:
    if off + _SAMPLE_FIXED.size > end:
        return OtherRecord(PERF_RECORD_SAMPLE)
    pid, tid, time_ns, cpu, _res, nr = _SAMPLE_FIXED.unpack_from(buf, off)
    off += _SAMPLE_FIXED.size
    if off + 8 * nr > end:
        return OtherRecord(PERF_RECORD_SAMPLE)
    ips = struct.unpack_from(f"<{nr}Q", buf, off) if nr else ()
    return SampleRecord(pid, tid, time_ns, cpu, tuple(ips))


def _parse_mmap(buf: bytes, off: int, end: int) -> MmapRecord | OtherRecord:
    if off + _MMAP_FIXED.size > end:
        return OtherRecord(PERF_RECORD_MMAP)
    pid, tid, addr, length, pgoff = _MMAP_FIXED.unpack_from(buf, off)
    raw = buf[off + _MMAP_FIXED.size:end]
    filename = raw.split(b"\x00", 1)[0].decode("utf-8", "replace")
    return MmapRecord(pid, tid, addr, length, pgoff, filename)


def chain_to_frames(ips) -> tuple[tuple[int, ...], tuple]:
    """Split a raw call chain into (addresses, per-frame origins).

    Context sentinel values switch the origin of the frames that follow them
    and are dropped from the address list.  Frames seen before any sentinel
    are tagged unknown.
    """
    from .samples import Origin

    frames: list[int] = []
    origins: list = []
    current = Origin.UNKNOWN
    for v in ips:
        if v >= PERF_CONTEXT_MAX:
            if v == PERF_CONTEXT_KERNEL:
                current = Origin.KERNEL
            elif v == PERF_CONTEXT_USER:
                current = Origin.USER
            else:
                current = Origin.UNKNOWN
            continue
        frames.append(v)
        origins.append(current)
    return tuple(frames), tuple(origins)
