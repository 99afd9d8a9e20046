"""Exception hierarchy shared across the toolkit.

Plain I/O failures (unreadable files, unwritable output paths) propagate as
the builtin ``OSError``; everything with domain meaning gets a class here so
callers can map failures to exit codes without string matching.
"""

from __future__ import annotations


class StackscopeError(Exception):
    """Base class for all toolkit-specific errors."""


class PermissionDenied(StackscopeError):
    """The kernel refused a sampling request for privilege reasons."""


class NoSuchTarget(StackscopeError):
    """A pid, cgroup path, or input file does not exist."""


class UnsupportedKernel(StackscopeError):
    """The running kernel does not expose the sampling interface."""


class UnparsableCgroupFile(StackscopeError):
    """/proc/<pid>/cgroup could not be interpreted."""


class SessionClosed(StackscopeError):
    """Operation on a session that was already closed."""


class ParseError(StackscopeError):
    """A replay trace line did not match the folded-stack format."""

    def __init__(self, lineno: int, reason: str):
        super().__init__(f"line {lineno}: {reason}")
        self.lineno = lineno
        self.reason = reason


class NotAnElf(StackscopeError):
    """The file is not an ELF image this tool can read."""


class EmptyStack(StackscopeError):
    """An empty stack was offered to the call tree."""


class PatternInvalid(StackscopeError):
    """A view or detector name pattern is malformed."""


class NoMatch(StackscopeError):
    """A view root pattern matched no node in the tree."""


class SchemaMismatch(StackscopeError):
    """A tree document has the wrong schema version or shape."""


class InvariantViolation(StackscopeError):
    """A tree document breaks a structural invariant.

    ``node_path`` names the offending node as a ``/``-joined path from the
    root so the bad record can be located in the source file.
    """

    def __init__(self, node_path: str, detail: str):
        super().__init__(f"{node_path}: {detail}")
        self.node_path = node_path
        self.detail = detail


class CgroupUnavailable(StackscopeError):
    """No writable control-group hierarchy for creating an isolation group."""


class SpawnFailed(StackscopeError):
    """The target command could not be started."""


class ConfigError(StackscopeError):
    """A session config file is invalid; the message names the key path."""
