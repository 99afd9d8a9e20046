"""Folded-stack text format: one stack per line, frames root-first.

Grammar per line::

    frame1;frame2;...;frameN[<space>count]

The count defaults to 1 when absent.  ``#`` starts a comment line and blank
lines are skipped.  The format is the widespread "collapsed stacks"
convention, so traces produced by third-party collapsers load directly.

Frame names may contain spaces (demangled C++ signatures do); only a trailing
integer after the final run of whitespace is treated as the count.
"""

from __future__ import annotations

import re
from typing import Iterable, Iterator, TextIO

from .errors import ParseError

_COUNT_RE = re.compile(r"^(?P<stack>.*\S)\s+(?P<count>\d+)$")


def parse_line(line: str, lineno: int = 0) -> tuple[tuple[str, ...], int] | None:
    """Parse one folded line into (frames root-first, count).

    Returns ``None`` for blank and comment lines.  Raises :class:`ParseError`
    for structural problems (empty frame, zero count).
    """
    stripped = line.strip()
    if not stripped or stripped.startswith("#"):
        return None
    m = _COUNT_RE.match(stripped)
    if m:
        stack_part = m.group("stack")
        count = int(m.group("count"))
    else:
        stack_part = stripped
        count = 1
    if count <= 0:
        raise ParseError(lineno, f"count must be positive, got {count}")
    frames = tuple(f.strip() for f in stack_part.split(";"))
    if any(not f for f in frames):
        raise ParseError(lineno, "empty frame name")
    return frames, count


def iter_folded(fp: TextIO) -> Iterator[tuple[int, tuple[str, ...], int]]:
    """Yield (lineno, frames, count) records from a folded-stack stream."""
    for lineno, line in enumerate(fp, start=1):
        parsed = parse_line(line, lineno)
        if parsed is None:
            continue
        frames, count = parsed
        yield lineno, frames, count


def load_folded(path: str) -> list[tuple[tuple[str, ...], int]]:
    """Read a folded-stack file into a list of (frames, count) records."""
    with open(path, "r", encoding="utf-8") as fp:
        return [(frames, count) for _, frames, count in iter_folded(fp)]


def format_line(frames: Iterable[str], count: int = 1) -> str:
    """Render one record; a count of 1 is written explicitly for stability."""
    return f"{';'.join(frames)} {count}"


def write_folded(path: str, records: Iterable[tuple[Iterable[str], int]]) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        for frames, count in records:
            fp.write(format_line(frames, count) + "\n")
