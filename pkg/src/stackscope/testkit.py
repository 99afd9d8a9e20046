"""Bundled test workloads and oracles.

Contains the pieces the test suite and the acceptance checks lean on:

* a naive reference trie built by direct path insertion, deliberately sharing
  no code with :mod:`stackscope.calltree`, used as the structural oracle;
* deterministic folded-trace generators (weighted-leaf workload shapes and
  dominance streams for the runtime-share monitor);
* the source of a small native spinner workload with known hot functions,
  plus a compile helper, so symbol-resolution tests can run against a real
  binary.
"""

from __future__ import annotations

import random
import shutil
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from . import folded

# --------------------------------------------------------------------------
# Reference trie oracle


def naive_trie(stacks: Iterable[Sequence[str]]) -> dict:
    """Build a reference tree by direct path insertion.

    Returns a plain nested dict ``{"name", "inclusive", "self", "children"}``
    where children is a name-keyed dict.  Counting rules: every node on a
    stack's path gains one inclusive count, the last node one self count.
    """
    root = {"name": "<root>", "inclusive": 0, "self": 0, "children": {}}
    for stack in stacks:
        root["inclusive"] += 1
        node = root
        for name in stack:
            nxt = node["children"].get(name)
            if nxt is None:
                nxt = {"name": name, "inclusive": 0, "self": 0, "children": {}}
                node["children"][name] = nxt
            nxt["inclusive"] += 1
            node = nxt
        node["self"] += 1
    return root


def tree_as_plain(node) -> dict:
    """Convert a CallTreeNode (public fields only) to the oracle's dict form."""
    return {
        "name": node.name,
        "inclusive": node.inclusive,
        "self": node.self_count,
        "children": {c.name: tree_as_plain(c) for c in node.children.values()},
    }


def plain_equal(a: dict, b: dict) -> bool:
    if (a["name"], a["inclusive"], a["self"]) != (b["name"], b["inclusive"], b["self"]):
        return False
    if set(a["children"]) != set(b["children"]):
        return False
    return all(plain_equal(a["children"][k], b["children"][k]) for k in a["children"])


def flattened_name_counts(stacks: Iterable[Sequence[str]]) -> dict[str, int]:
    """Brute-force per-sample dedup: how many stacks contain each name."""
    counts: dict[str, int] = {}
    for stack in stacks:
        for name in set(stack):
            counts[name] = counts.get(name, 0) + 1
    return counts


# --------------------------------------------------------------------------
# Synthetic workload traces


@dataclass
class SyntheticWorkloadSpec:
    """Shape of a generated folded trace.

    ``leaf_shares`` maps hot leaf functions to target sample fractions; any
    remainder goes to a filler leaf.  Generated stacks alternate between deep
    phases (around ``deep_frames`` frames of dispatch scaffolding) and
    shallow phases, mimicking the strongly fluctuating stack depth of
    event-driven simulators.
    """

    leaf_shares: dict[str, float] = field(
        default_factory=lambda: {"spin_hot": 0.6, "spin_warm": 0.3})
    filler_leaf: str = "idle_wait"
    deep_frames: int = 40
    shallow_frames: int = 1
    phase_length: int = 8

    def __post_init__(self) -> None:
        total = sum(self.leaf_shares.values())
        if total > 1.0 + 1e-9:
            raise ValueError(f"leaf shares sum to {total}, must be <= 1")


def generate_folded_trace(spec: SyntheticWorkloadSpec, n: int, seed: int,
                          path: str | Path) -> Path:
    """Write n samples shaped by spec; deterministic per seed.

    Each line carries count 1 so the file order is the replay order.
    """
    rng = random.Random(seed)
    leaves = list(spec.leaf_shares) + [spec.filler_leaf]
    weights = list(spec.leaf_shares.values())
    weights.append(max(0.0, 1.0 - sum(weights)))
    records: list[tuple[tuple[str, ...], int]] = []
    for i in range(n):
        leaf = rng.choices(leaves, weights=weights)[0]
        deep_phase = (i // spec.phase_length) % 2 == 0
        depth = spec.deep_frames if deep_phase else spec.shallow_frames
        prefix = ["main", "run_loop"]
        for level in range(max(0, depth - len(prefix) - 1)):
            prefix.append(f"dispatch_{level:02d}")
        stack = tuple(prefix[: max(1, depth - 1)]) + (leaf,)
        records.append((stack, 1))
    out = Path(path)
    folded.write_folded(str(out), records)
    return out


def generate_dominance_trace(n: int, dominant_per_hundred: int,
                             path: str | Path,
                             dominant_leaf: str = "load_hit",
                             other_leaf: str = "store_miss",
                             prefix: Sequence[str] = ("run_loop", "cache_ctrl"),
                             ) -> Path:
    """Write n samples where exactly ``dominant_per_hundred`` of every 100
    consecutive samples end in ``dominant_leaf``.

    The dominant positions are spread by residue class, so every sliding
    window of 100 samples contains exactly the stated number of dominant
    stacks — which pins the measured share for windowed monitors.
    """
    if not 0 <= dominant_per_hundred <= 100:
        raise ValueError("dominant_per_hundred must be within [0, 100]")
    records = []
    for i in range(n):
        leaf = dominant_leaf if i % 100 < dominant_per_hundred else other_leaf
        records.append((tuple(prefix) + (leaf,), 1))
    out = Path(path)
    folded.write_folded(str(out), records)
    return out


def random_stack_multiset(rng: random.Random, max_stacks: int = 500,
                          max_depth: int = 40, name_pool: int = 12,
                          ) -> list[tuple[str, ...]]:
    """A random multiset of stacks for property tests.

    Small name pool on purpose: prefix collisions and repeated names (direct
    recursion included) are the interesting cases for merge logic.
    """
    names = [f"f{i}" for i in range(name_pool)]
    n = rng.randint(0, max_stacks)
    stacks = []
    for _ in range(n):
        depth = rng.randint(1, max_depth)
        stacks.append(tuple(rng.choice(names) for _ in range(depth)))
    return stacks


# --------------------------------------------------------------------------
# Native spinner workload

SPINNER_SOURCE = r"""
#include <cstdint>
#include <cstdlib>
#include <ctime>

// Busy workload with a known runtime split: spin_hot ~60%, spin_warm ~30%,
// idle_pause ~10% of wall time, cycled in small slices.  Functions are
// exported and never inlined so an external profiler sees them by name.

namespace workload {
struct Mixer {
    std::uint64_t state;
    __attribute__((noinline)) std::uint64_t blend(std::uint64_t rounds);
};

std::uint64_t Mixer::blend(std::uint64_t rounds) {
    volatile std::uint64_t acc = state;
    for (std::uint64_t i = 0; i < rounds; i++) {
        acc = acc * 6364136223846793005ULL + 1442695040888963407ULL;
    }
    return acc;
}
}  // namespace workload

static double now_s() {
    struct timespec ts;
    clock_gettime(CLOCK_MONOTONIC, &ts);
    return ts.tv_sec + ts.tv_nsec * 1e-9;
}

extern "C" __attribute__((noinline)) void spin_hot(double until) {
    workload::Mixer m{12345};
    while (now_s() < until) {
        m.state = m.blend(4096);
    }
}

extern "C" __attribute__((noinline)) void spin_warm(double until) {
    volatile double x = 1.0;
    while (now_s() < until) {
        for (int i = 0; i < 4096; i++) x = x * 1.0000001 + 0.5;
    }
}

extern "C" __attribute__((noinline)) void idle_pause(double until) {
    struct timespec ts = {0, 1000000};  // 1 ms
    while (now_s() < until) nanosleep(&ts, nullptr);
}

int main(int argc, char** argv) {
    double seconds = argc > 1 ? atof(argv[1]) : 5.0;
    double slice = 0.05;
    double end = now_s() + seconds;
    while (now_s() < end) {
        double t = now_s();
        spin_hot(t + slice * 0.6);
        spin_warm(t + slice * 0.9);
        idle_pause(t + slice);
    }
    return 0;
}
"""


def write_spinner_source(path: str | Path) -> Path:
    out = Path(path)
    out.write_text(SPINNER_SOURCE, encoding="utf-8")
    return out


def build_spinner(directory: str | Path, compiler: str | None = None) -> Path | None:
    """Compile the spinner into ``directory``; returns None without a compiler.

    Built unstripped at -O1: symbols stay in the static symtab and the hot
    loops stay inside their named functions.
    """
    cxx = compiler or shutil.which("g++") or shutil.which("clang++")
    if cxx is None:
        return None
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    src = write_spinner_source(directory / "spinner.cpp")
    binary = directory / "spinner"
    subprocess.run([cxx, "-O1", "-o", str(binary), str(src)], check=True,
                   capture_output=True)
    return binary
