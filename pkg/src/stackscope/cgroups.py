"""Control-group resolution and management.

The unified (v2) hierarchy is the primary target; legacy hierarchies are
supported read-only for resolving an existing process's group.
"""

from __future__ import annotations

import os
from pathlib import Path

from .errors import CgroupUnavailable, NoSuchTarget, UnparsableCgroupFile

CGROUP_FS = Path("/sys/fs/cgroup")


def resolve_cgroup_of(pid: int, cgroup_fs: Path = CGROUP_FS) -> Path:
    """Return the control-group directory governing ``pid``.

    On a unified (v2) hierarchy this is the single membership path; on legacy
    hierarchies the perf-controller path is returned, since that is the one a
    sampler attaches to.
    """
    proc_file = Path(f"/proc/{pid}/cgroup")
    try:
        text = proc_file.read_text()
    except FileNotFoundError:
        raise NoSuchTarget(f"no such pid: {pid}") from None
    except ProcessLookupError:
        raise NoSuchTarget(f"no such pid: {pid}") from None
    v2_path = None
    perf_path = None
    for line in text.splitlines():
        parts = line.split(":", 2)
        if len(parts) != 3:
            continue
        hier_id, controllers, rel = parts
        if hier_id == "0" and controllers == "":
            v2_path = rel
        elif "perf_event" in controllers.split(","):
            perf_path = rel
    if v2_path is not None:
        return cgroup_fs / v2_path.lstrip("/")
    if perf_path is not None:
        return cgroup_fs / "perf_event" / perf_path.lstrip("/")
    raise UnparsableCgroupFile(
        f"{proc_file}: no unified or perf_event hierarchy entry")


def own_cgroup(cgroup_fs: Path = CGROUP_FS) -> Path:
    return resolve_cgroup_of(os.getpid(), cgroup_fs)


def create_group(name: str, cgroup_fs: Path = CGROUP_FS) -> Path:
    """Create a fresh v2 group for isolating one profiled run.

    Tries a child of our own group first (delegation-friendly), then the
    hierarchy root.  Raises :class:`CgroupUnavailable` when neither spot is
    writable, letting the caller fall back to per-pid attachment.
    """
    candidates: list[Path] = []
    try:
        candidates.append(own_cgroup(cgroup_fs) / name)
    except (NoSuchTarget, UnparsableCgroupFile):
        pass
    candidates.append(cgroup_fs / name)
    last_err: OSError | None = None
    for path in candidates:
        try:
            path.mkdir()
            return path
        except OSError as e:
            last_err = e
    raise CgroupUnavailable(
        f"cannot create control group {name!r}: {last_err}")


def add_pid(group: Path, pid: int) -> None:
    (group / "cgroup.procs").write_text(f"{pid}\n")


def remove_group(group: Path) -> None:
    """Best-effort teardown of a group we created; kills stragglers."""
    kill_file = group / "cgroup.kill"
    try:
        if kill_file.exists():
            kill_file.write_text("1")
    except OSError:
        pass
    try:
        group.rmdir()
    except OSError:
        pass
