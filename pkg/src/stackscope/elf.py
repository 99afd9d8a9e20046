"""Minimal ELF64 little-endian reader for function symbols.

Covers exactly what address resolution needs: both symbol-table section
kinds (static and dynamic), function-typed entries only, and the program
headers needed to normalize symbol addresses into file-offset space.  That
normalization makes position-independent and fixed-address executables look
the same to the resolver: a frame address rebased by its mapping
(addr - map_start + map_offset) lands in the same space.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .errors import NotAnElf

_EHDR = struct.Struct("<16sHHIQQQIHHHHHH")
_SHDR = struct.Struct("<IIQQQQIIQQ")
_PHDR = struct.Struct("<IIQQQQQQ")
_SYM = struct.Struct("<IBBHQQ")

SHT_SYMTAB = 2
SHT_DYNSYM = 11
PT_LOAD = 1
STT_FUNC = 2
STT_GNU_IFUNC = 10
SHN_UNDEF = 0


@dataclass(frozen=True)
class RawFunctionSymbol:
    """A function symbol with its value normalized to a file offset."""

    value: int
    size: int
    name: str  # mangled (as stored)


def read_function_symbols(path: str) -> tuple[list[RawFunctionSymbol],
                                              list[RawFunctionSymbol]]:
    """Return (static, dynamic) function symbols of a 64-bit LE ELF image.

    Raises :class:`NotAnElf` for non-ELF input or unsupported ELF variants;
    I/O problems propagate as OSError.  Either list may be empty (stripped
    binaries have no static symtab).
    """
    with open(path, "rb") as fp:
        data = fp.read()
    if len(data) < _EHDR.size or data[:4] != b"\x7fELF":
        raise NotAnElf(f"{path}: bad magic")
    if data[4] != 2 or data[5] != 1:
        raise NotAnElf(f"{path}: only 64-bit little-endian images supported")
    (_ident, _etype, _machine, _version, _entry, e_phoff, e_shoff, _flags,
     _ehsize, e_phentsize, e_phnum, e_shentsize, e_shnum, _shstrndx
     ) = _EHDR.unpack_from(data, 0)

    segments = _load_segments(data, e_phoff, e_phentsize, e_phnum)

    static: list[RawFunctionSymbol] = []
    dynamic: list[RawFunctionSymbol] = []
    if e_shoff == 0 or e_shnum == 0:
        return static, dynamic
    headers = []
    for i in range(e_shnum):
        off = e_shoff + i * e_shentsize
        if off + _SHDR.size > len(data):
            raise NotAnElf(f"{path}: truncated section headers")
        headers.append(_SHDR.unpack_from(data, off))
    for hdr in headers:
        sh_type = hdr[1]
        if sh_type not in (SHT_SYMTAB, SHT_DYNSYM):
            continue
        sh_offset, sh_size, sh_link, _info, _align, sh_entsize = hdr[4:10]
        if sh_entsize == 0 or sh_link >= len(headers):
            continue
        str_off, str_size = headers[sh_link][4], headers[sh_link][5]
        strtab = data[str_off:str_off + str_size]
        out = static if sh_type == SHT_SYMTAB else dynamic
        for off in range(sh_offset, sh_offset + sh_size, sh_entsize):
            if off + _SYM.size > len(data):
                break
            st_name, st_info, _other, st_shndx, st_value, st_size = \
                _SYM.unpack_from(data, off)
            if st_info & 0xF not in (STT_FUNC, STT_GNU_IFUNC):
                continue
            if st_shndx == SHN_UNDEF or st_name == 0:
                continue
            name = _strtab_name(strtab, st_name)
            if not name:
                continue
            file_off = _to_file_offset(segments, st_value)
            if file_off is None:
                continue
            out.append(RawFunctionSymbol(file_off, st_size, name))
    return static, dynamic


def _load_segments(data: bytes, phoff: int, phentsize: int,
                   phnum: int) -> list[tuple[int, int, int]]:
    segs = []
    for i in range(phnum):
        off = phoff + i * phentsize
        if off + _PHDR.size > len(data):
            break
        p_type, _flags, p_offset, p_vaddr, _paddr, _filesz, p_memsz, _align = \
            _PHDR.unpack_from(data, off)
        if p_type == PT_LOAD:
            segs.append((p_vaddr, p_memsz, p_offset))
    segs.sort()
    return segs


def _to_file_offset(segments: list[tuple[int, int, int]],
                    vaddr: int) -> int | None:
    for p_vaddr, p_memsz, p_offset in segments:
        if p_vaddr <= vaddr < p_vaddr + p_memsz:
            return vaddr - p_vaddr + p_offset
    return None


def _strtab_name(strtab: bytes, offset: int) -> str:
    if offset >= len(strtab):
        return ""
    end = strtab.find(b"\x00", offset)
    if end < 0:
        end = len(strtab)
    return strtab[offset:end].decode("utf-8", "replace")
