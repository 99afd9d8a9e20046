"""Address-to-name resolution: memory maps, symbol tables, demangling.

A :class:`Resolver` owns one target's view: its module map (rescanned on
remap hints), per-module symbol tables (cached by path/mtime/size), the
kernel symbol list for kernel-origin frames, and the replay name table when
the stream comes from a trace file.  Resolution is total — every failure
degrades to a canonical placeholder frame, never an exception.
"""

from __future__ import annotations

import ctypes
import ctypes.util
import logging
import os
import re
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

from . import elf
from .errors import NoSuchTarget, NotAnElf, PermissionDenied
from .samples import REPLAY_ADDR_BASE, REPLAY_ADDR_LIMIT, Origin, RawSample

log = logging.getLogger(__name__)

KERNEL_MODULE = "[kernel]"
UNKNOWN_MODULE = "[unknown]"
REPLAY_MODULE = "[replay]"

PLACEHOLDER_RE = re.compile(r"\[unknown@0x[0-9a-f]{16}\]")


def placeholder(addr: int) -> str:
    """Canonical name for an unresolvable frame address."""
    return f"[unknown@0x{addr:016x}]"


# --------------------------------------------------------------------------
# Demangling

_demangle_fn = None
_demangle_cache: dict[str, str] = {}


def _load_demangler():
    global _demangle_fn
    if _demangle_fn is not None:
        return _demangle_fn
    try:
        lib = ctypes.CDLL(ctypes.util.find_library("stdc++") or "libstdc++.so.6")
        fn = lib.__cxa_demangle
        fn.restype = ctypes.c_void_p
        fn.argtypes = [ctypes.c_char_p, ctypes.c_char_p,
                       ctypes.POINTER(ctypes.c_size_t),
                       ctypes.POINTER(ctypes.c_int)]
        libc = ctypes.CDLL(None)
        libc.free.argtypes = [ctypes.c_void_p]
        _demangle_fn = (fn, libc.free)
    except (OSError, AttributeError):
        _demangle_fn = (None, None)
    return _demangle_fn


def demangle(name: str) -> str:
    """Itanium-ABI demangling; returns the input unchanged when it is not a
    valid mangled name or no demangler is available.  Never fails."""
    if not name.startswith("_Z"):
        return name
    cached = _demangle_cache.get(name)
    if cached is not None:
        return cached
    fn, free = _load_demangler()
    result = name
    if fn is not None:
        status = ctypes.c_int()
        ptr = fn(name.encode("utf-8", "replace"), None, None,
                 ctypes.byref(status))
        if ptr and status.value == 0:
            result = ctypes.cast(ptr, ctypes.c_char_p).value.decode(
                "utf-8", "replace")
        if ptr:
            free(ptr)
    _demangle_cache[name] = result
    return result


# --------------------------------------------------------------------------
# Symbol tables


@dataclass(frozen=True)
class Symbol:
    value: int  # module-relative (file-offset space), or absolute for kernel
    size: int  # 0 = unknown
    name: str  # demangled
    raw_name: str


class SymbolTable:
    """Sorted address-to-symbol map for one module (or the kernel)."""

    def __init__(self, symbols: list[Symbol], source: str,
                 restricted: bool = False):
        self.symbols = sorted(symbols, key=lambda s: s.value)
        self._values = [s.value for s in self.symbols]
        self.source = source
        self.restricted = restricted

    def __len__(self) -> int:
        return len(self.symbols)

    def lookup(self, addr: int) -> Symbol | None:
        """Symbol covering addr: inside [value, value+size), or the nearest
        preceding symbol when its size is unknown."""
        i = bisect_right(self._values, addr) - 1
        if i < 0:
            return None
        sym = self.symbols[i]
        if sym.size == 0 or addr < sym.value + sym.size:
            return sym
        return None


EMPTY_TABLE = SymbolTable([], source="static-symtab")


def load_symbols(path: str) -> SymbolTable:
    """Merged function-symbol table of an ELF image.

    Static and dynamic tables are merged with static taking precedence on
    duplicate addresses; names are demangled eagerly.  A fully stripped
    binary yields an empty table.
    """
    static, dynamic = elf.read_function_symbols(path)
    chosen: dict[int, tuple[tuple[int, int], elf.RawFunctionSymbol]] = {}
    for rank, syms in ((0, dynamic), (1, static)):
        for s in syms:
            key = (rank, 1 if s.size > 0 else 0)
            old = chosen.get(s.value)
            if old is None or key >= old[0]:
                chosen[s.value] = (key, s)
    symbols = [Symbol(s.value, s.size, demangle(s.name), s.name)
               for _, s in chosen.values()]
    return SymbolTable(symbols, source="static-symtab" if static
                       else "dynamic-symtab")


def load_kernel_symbols(path: str = "/proc/kallsyms") -> SymbolTable:
    """Text-typed kernel symbols from the kernel symbol list.

    On hosts that zero out addresses for unprivileged readers the table comes
    back empty (kernel frames then degrade to placeholders) and a warning is
    logged.
    """
    symbols: list[Symbol] = []
    any_nonzero = False
    with open(path, "r", encoding="utf-8", errors="replace") as fp:
        for line in fp:
            parts = line.split()
            if len(parts) < 3:
                continue
            addr_s, kind, name = parts[0], parts[1], parts[2]
            if kind.lower() not in ("t", "w"):
                continue
            try:
                addr = int(addr_s, 16)
            except ValueError:
                continue
            if addr:
                any_nonzero = True
            if len(parts) > 3 and parts[3].startswith("["):
                name = f"{name} {parts[3]}"
            symbols.append(Symbol(addr, 0, name, name))
    if symbols and not any_nonzero:
        log.warning("%s shows all-zero addresses (restricted); "
                    "kernel frames will not resolve", path)
        return SymbolTable([], source="kernel-list", restricted=True)
    return SymbolTable(symbols, source="kernel-list")


# --------------------------------------------------------------------------
# Module maps


@dataclass(frozen=True)
class MapEntry:
    start: int
    end: int
    offset: int  # file offset mapped at start
    path: str  # as seen by the target
    executable: bool
    host_path: str | None  # where this process can read the image, if anywhere


class ModuleMap:
    """Snapshot of a process's memory mappings relevant to symbolization."""

    def __init__(self, entries: list[MapEntry], generation: int = 1):
        self.entries = sorted(entries, key=lambda e: e.start)
        self.generation = generation
        self._exec = [e for e in self.entries if e.executable]
        self._exec_starts = [e.start for e in self._exec]

    def find_executable(self, addr: int) -> MapEntry | None:
        i = bisect_right(self._exec_starts, addr) - 1
        if i < 0:
            return None
        entry = self._exec[i]
        return entry if addr < entry.end else None


_MAPS_LINE = re.compile(
    r"^([0-9a-f]+)-([0-9a-f]+)\s+(\S{4})\s+([0-9a-f]+)\s+(\S+)\s+(\d+)\s*(.*)$")


def load_maps(pid: int, generation: int = 1) -> ModuleMap:
    """Parse the target's memory-maps file into a :class:`ModuleMap`.

    Executable mappings are always captured; readable file-backed mappings
    are kept too so the map reflects what the process has loaded.  Module
    paths are resolved through the target's root-directory view so processes
    in containers or chroots symbolize correctly.
    """
    maps_path = f"/proc/{pid}/maps"
    root_prefix = f"/proc/{pid}/root"
    try:
        with open(maps_path, "r", encoding="utf-8", errors="replace") as fp:
            lines = fp.readlines()
    except FileNotFoundError:
        raise NoSuchTarget(f"no such pid: {pid}") from None
    except ProcessLookupError:
        raise NoSuchTarget(f"no such pid: {pid}") from None
    except PermissionError as e:
        raise PermissionDenied(f"cannot read {maps_path}: {e}") from None
    entries: list[MapEntry] = []
    for line in lines:
        m = _MAPS_LINE.match(line.rstrip("\n"))
        if not m:
            continue
        start, end = int(m.group(1), 16), int(m.group(2), 16)
        perms = m.group(3)
        offset = int(m.group(4), 16)
        path = m.group(7).strip()
        executable = "x" in perms
        file_backed = path.startswith("/")
        if not executable and not file_backed:
            continue
        host_path = None
        if file_backed:
            candidate = root_prefix + path
            host_path = candidate if os.path.exists(candidate) else (
                path if os.path.exists(path) else None)
        entries.append(MapEntry(start, end, offset, path or "[anon]",
                                executable, host_path))
    return ModuleMap(entries, generation=generation)


# --------------------------------------------------------------------------
# Resolution


@dataclass(frozen=True)
class ResolvedFrame:
    name: str
    module: str
    offset: int
    origin: Origin


@dataclass(frozen=True)
class ResolvedStack:
    """Root-first symbolized stack with the sample's identity retained."""

    frames: tuple[ResolvedFrame, ...]
    timestamp_ns: int
    pid: int
    tid: int
    cpu: int

    def names(self) -> tuple[str, ...]:
        return tuple(f.name for f in self.frames)


@dataclass
class _TableCacheEntry:
    stat_key: tuple
    table: SymbolTable


class Resolver:
    """Backend-agnostic frame resolution over immutable map/table snapshots.

    For live targets pass ``pid``; for replayed traces pass the session's
    ``replay_names`` list.  ``kernel_table`` may be shared between resolvers.
    """

    def __init__(self, pid: int | None = None,
                 kernel_table: SymbolTable | None = None,
                 replay_names: list[str] | None = None,
                 module_map: ModuleMap | None = None):
        self.pid = pid
        self.kernel_table = kernel_table if kernel_table is not None else EMPTY_TABLE
        self.replay_names = replay_names
        self._tables: dict[str, _TableCacheEntry] = {}
        self._stale = False
        if module_map is not None:
            self.module_map = module_map
        elif pid is not None:
            self.module_map = load_maps(pid)
        else:
            self.module_map = ModuleMap([])

    # -- map freshness

    def remap_hint(self, event=None) -> None:
        """Mark the module map stale; the next resolve batch rescans."""
        self._stale = True

    def _refresh_if_stale(self) -> None:
        if not self._stale:
            return
        self._stale = False
        if self.pid is None:
            return
        try:
            self.module_map = load_maps(
                self.pid, generation=self.module_map.generation + 1)
        except (NoSuchTarget, PermissionDenied):
            pass  # target gone mid-run; keep the last good map

    # -- per-module tables

    def _table_for(self, entry: MapEntry) -> SymbolTable:
        if entry.host_path is None:
            return EMPTY_TABLE
        cached = self._tables.get(entry.host_path)
        try:
            st = os.stat(entry.host_path)
            stat_key = (entry.host_path, st.st_mtime_ns, st.st_size)
        except OSError:
            stat_key = (entry.host_path, None, None)
        if cached is not None and cached.stat_key == stat_key:
            return cached.table
        try:
            table = load_symbols(entry.host_path)
        except (NotAnElf, OSError):
            table = EMPTY_TABLE
        self._tables[entry.host_path] = _TableCacheEntry(stat_key, table)
        return table

    # -- frame resolution

    def resolve(self, sample: RawSample) -> ResolvedStack:
        """Symbolize one sample; output is root-first.

        Total: frames that cannot be resolved become canonical placeholder
        frames, and the output always has exactly as many frames as the
        input.
        """
        self._refresh_if_stale()
        frames = [self._resolve_frame(addr, origin)
                  for addr, origin in zip(sample.frames, sample.contexts)]
        frames.reverse()  # leaf-first input -> root-first output
        return ResolvedStack(tuple(frames), sample.timestamp_ns,
                             sample.pid, sample.tid, sample.cpu)

    def _resolve_frame(self, addr: int, origin: Origin) -> ResolvedFrame:
        if (self.replay_names is not None
                and REPLAY_ADDR_BASE <= addr < REPLAY_ADDR_LIMIT):
            idx = addr - REPLAY_ADDR_BASE
            if idx < len(self.replay_names):
                return ResolvedFrame(self.replay_names[idx], REPLAY_MODULE,
                                     0, origin)
            return ResolvedFrame(placeholder(addr), REPLAY_MODULE, 0, origin)
        if origin is Origin.KERNEL:
            sym = self.kernel_table.lookup(addr)
            if sym is not None:
                return ResolvedFrame(sym.name, KERNEL_MODULE,
                                     addr - sym.value, origin)
            return ResolvedFrame(placeholder(addr), KERNEL_MODULE, 0, origin)
        entry = self.module_map.find_executable(addr)
        if entry is None:
            return ResolvedFrame(placeholder(addr), UNKNOWN_MODULE, 0, origin)
        module_rel = addr - entry.start + entry.offset
        sym = self._table_for(entry).lookup(module_rel)
        if sym is not None:
            return ResolvedFrame(sym.name, entry.path,
                                 module_rel - sym.value, origin)
        return ResolvedFrame(placeholder(addr), entry.path, 0, origin)
