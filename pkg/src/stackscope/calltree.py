"""Prefix-merging call tree with inclusive and self counters.

Stacks are ingested root-first.  Stacks sharing a prefix are merged along it
and diverge at their first differing frame; the same function name reached
from different callers stays a distinct node (call-site distinction).  Every
node tracks:

* ``inclusive`` — samples whose stack passes through this node at this exact
  path position,
* ``self_count`` — samples whose stack ends here ("self" in exports).

``inclusive == self_count + sum(child.inclusive)`` holds at every node at all
times.
"""

from __future__ import annotations

import time
from typing import Any, Iterator, Sequence

from .errors import EmptyStack, InvariantViolation

ROOT_NAME = "<root>"


class CallTreeNode:
    """One call-site-distinct function node."""

    __slots__ = ("name", "inclusive", "self_count", "children")

    def __init__(self, name: str, inclusive: int = 0, self_count: int = 0):
        self.name = name
        self.inclusive = inclusive
        self.self_count = self_count
        self.children: dict[str, CallTreeNode] = {}

    def __repr__(self) -> str:
        return (
            f"CallTreeNode({self.name!r}, inclusive={self.inclusive}, "
            f"self={self.self_count}, children={len(self.children)})"
        )

    def child(self, name: str) -> CallTreeNode | None:
        return self.children.get(name)

    def sorted_children(self) -> list[CallTreeNode]:
        """Children in normalized order: descending inclusive, then name."""
        return sorted(self.children.values(), key=lambda n: (-n.inclusive, n.name))

    def copy_normalized(self) -> CallTreeNode:
        node = CallTreeNode(self.name, self.inclusive, self.self_count)
        for c in self.sorted_children():
            node.children[c.name] = c.copy_normalized()
        return node

    def to_dict(self) -> dict[str, Any]:
        """Plain-dict form in normalized child order (used by exports)."""
        return {
            "name": self.name,
            "inclusive": self.inclusive,
            "self": self.self_count,
            "children": [c.to_dict() for c in self.sorted_children()],
        }

    def walk(self) -> Iterator[tuple[int, "CallTreeNode"]]:
        """Depth-first (node, depth) pairs, this node at depth 0."""
        stack: list[tuple[int, CallTreeNode]] = [(0, self)]
        while stack:
            depth, node = stack.pop()
            yield depth, node
            for c in reversed(list(node.children.values())):
                stack.append((depth + 1, c))


class CallTree:
    """A synthetic-rooted call tree; single-writer, snapshot-for-readers.

    The writer calls :meth:`ingest`; analyzers and reporters work on
    :meth:`snapshot` copies, which are frozen (further ingestion raises) and
    have children in normalized order for deterministic output.
    """

    def __init__(self, metadata: dict[str, Any] | None = None,
                 root: CallTreeNode | None = None, total_samples: int = 0):
        self.root = root if root is not None else CallTreeNode(ROOT_NAME)
        self.total_samples = total_samples
        self.metadata: dict[str, Any] = dict(metadata or {})
        self.metadata.setdefault("created_ns", time.time_ns())
        self._frozen = False

    @property
    def frozen(self) -> bool:
        return self._frozen

    def ingest(self, stack: Sequence[str]) -> None:
        """Merge one root-first stack into the tree."""
        if self._frozen:
            raise InvariantViolation(ROOT_NAME, "cannot ingest into a frozen snapshot")
        if not stack:
            raise EmptyStack("cannot ingest an empty stack")
        node = self.root
        node.inclusive += 1
        for name in stack:
            nxt = node.children.get(name)
            if nxt is None:
                nxt = CallTreeNode(name)
                node.children[name] = nxt
            nxt.inclusive += 1
            node = nxt
        node.self_count += 1
        self.total_samples += 1

    def snapshot(self) -> CallTree:
        """Deep, frozen copy with normalized child order."""
        copy = CallTree(metadata=dict(self.metadata),
                        root=self.root.copy_normalized(),
                        total_samples=self.total_samples)
        copy.metadata["created_ns"] = self.metadata.get("created_ns")
        copy._frozen = True
        return copy

    def validate(self, require_synthetic_root: bool = True) -> None:
        """Check structural invariants, raising InvariantViolation on breakage."""
        if require_synthetic_root and self.root.self_count != 0:
            raise InvariantViolation(self.root.name, "root self count must be 0")
        if self.root.inclusive != self.total_samples:
            raise InvariantViolation(
                self.root.name,
                f"root inclusive {self.root.inclusive} != total {self.total_samples}")
        _validate_node(self.root, self.root.name)

    def node_at(self, path: Sequence[str]) -> CallTreeNode | None:
        """Node at a root-relative name path, or None."""
        node = self.root
        for name in path:
            node = node.children.get(name)  # type: ignore[assignment]
            if node is None:
                return None
        return node

    def to_dict(self) -> dict[str, Any]:
        return self.root.to_dict()

    def __repr__(self) -> str:
        return f"CallTree(total={self.total_samples}, top={len(self.root.children)})"


def _validate_node(node: CallTreeNode, path: str) -> None:
    if node.self_count < 0:
        raise InvariantViolation(path, f"negative self count {node.self_count}")
    child_sum = sum(c.inclusive for c in node.children.values())
    if node.inclusive != node.self_count + child_sum:
        raise InvariantViolation(
            path,
            f"inclusive {node.inclusive} != self {node.self_count} "
            f"+ children {child_sum}")
    for key, c in node.children.items():
        if key != c.name:
            raise InvariantViolation(f"{path}/{c.name}", "child keyed under wrong name")
        if c.inclusive < 1:
            raise InvariantViolation(f"{path}/{c.name}", "inclusive count below 1")
        _validate_node(c, f"{path}/{c.name}")


def merge_trees(a: CallTree, b: CallTree) -> CallTree:
    """Counter-additive merge of two snapshots by name path.

    Commutative and associative up to child ordering; the result is
    normalized and frozen like a snapshot.
    """
    root = _merge_nodes(a.root, b.root)
    merged = CallTree(metadata={**b.metadata, **a.metadata},
                      root=root,
                      total_samples=a.total_samples + b.total_samples)
    merged._frozen = True
    return merged


def _merge_nodes(x: CallTreeNode, y: CallTreeNode) -> CallTreeNode:
    node = CallTreeNode(x.name, x.inclusive + y.inclusive,
                        x.self_count + y.self_count)
    names = set(x.children) | set(y.children)
    merged: list[CallTreeNode] = []
    for name in names:
        cx, cy = x.children.get(name), y.children.get(name)
        if cx is not None and cy is not None:
            merged.append(_merge_nodes(cx, cy))
        else:
            merged.append((cx or cy).copy_normalized())  # type: ignore[union-attr]
    merged.sort(key=lambda n: (-n.inclusive, n.name))
    for c in merged:
        node.children[c.name] = c
    return node


def structurally_equal(a: CallTree, b: CallTree) -> bool:
    """Equality of counters and shape under normalized child ordering."""
    return a.total_samples == b.total_samples and _nodes_equal(a.root, b.root)


def _nodes_equal(x: CallTreeNode, y: CallTreeNode) -> bool:
    if (x.name, x.inclusive, x.self_count) != (y.name, y.inclusive, y.self_count):
        return False
    if set(x.children) != set(y.children):
        return False
    return all(_nodes_equal(x.children[n], y.children[n]) for n in x.children)
