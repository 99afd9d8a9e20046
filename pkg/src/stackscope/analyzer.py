"""View control over call-tree snapshots.

A :class:`ViewSpec` describes one way of looking at a tree: an optional root
of interest, a depth level (k-level truncation with aggregation, -1 for full
depth), whitelist/blacklist name patterns, and a flatten switch.  The
pipeline order is fixed and documented: subtree extraction, then blacklist
(totals are re-normalized over the remainder), then truncation, then
optional flattening, then whitelist (display-only, nothing re-normalized).

Patterns are matched against demangled names: a pattern containing glob
metacharacters (``*``, ``?``, ``[``) is a glob, anything else matches as a
substring — long C++ signatures make substrings the ergonomic default.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fnmatch import fnmatchcase
from typing import Any, Callable, Iterable, Sequence

from .calltree import CallTree, CallTreeNode, ROOT_NAME
from .errors import NoMatch, PatternInvalid

Matcher = Callable[[str], bool]


def compile_pattern(pattern: str) -> Matcher:
    """Build a name matcher; substring unless glob metacharacters appear."""
    if not isinstance(pattern, str) or not pattern:
        raise PatternInvalid(f"empty or non-string pattern: {pattern!r}")
    if any(ch in pattern for ch in "*?["):
        return lambda name: fnmatchcase(name, pattern)
    return lambda name: pattern in name


def compile_patterns(patterns: Sequence[str]) -> Matcher:
    matchers = [compile_pattern(p) for p in patterns]
    return lambda name: any(m(name) for m in matchers)


@dataclass(frozen=True)
class ViewSpec:
    """Analyzer configuration for one view of a tree."""

    root: str | None = None
    level: int = -1  # -1 = full depth; k >= 1 keeps k levels below the root
    whitelist: tuple[str, ...] = ()
    blacklist: tuple[str, ...] = ()
    flatten: bool = False
    name: str | None = None  # optional label used in report artifacts

    def __post_init__(self) -> None:
        if self.level != -1 and self.level < 1:
            raise PatternInvalid(
                f"level must be -1 or >= 1, got {self.level}")
        for p in (*self.whitelist, *self.blacklist):
            compile_pattern(p)
        overlap = set(self.whitelist) & set(self.blacklist)
        if overlap:
            raise PatternInvalid(
                f"patterns in both whitelist and blacklist: {sorted(overlap)}")


@dataclass(frozen=True)
class BreakdownRow:
    name: str
    count: int
    share: float  # fraction of the view total, within [0, 1]
    depth: int  # level within the view; matched view roots sit at 0


@dataclass
class ViewResult:
    """Outcome of applying a ViewSpec to a snapshot."""

    spec: ViewSpec
    tree: CallTree
    rows: list[BreakdownRow]
    total: int
    metadata: dict[str, Any] = field(default_factory=dict)


# --------------------------------------------------------------------------
# Stage: subtree extraction


def subtree(snapshot: CallTree, pattern: str) -> CallTree:
    """View rooted at every node matching ``pattern``.

    All matches anywhere in the tree are taken with their full subtrees;
    matches nested under other matches are not double-extracted (the
    outermost match wins).  Matched nodes are merged into the view root, so
    the root of interest sits at depth 0 and its children at depth 1, which
    is what level-k truncation counts from.  The view total is the summed
    inclusive count of the matched nodes.
    """
    matcher = compile_pattern(pattern)
    if pattern == snapshot.root.name:
        return _reroot([snapshot.root], snapshot)
    matches: list[CallTreeNode] = []
    _collect_outermost(snapshot.root, matcher, matches)
    if not matches:
        raise NoMatch(f"pattern {pattern!r} matched no node")
    return _reroot(matches, snapshot)


def _collect_outermost(node: CallTreeNode, matcher: Matcher,
                       out: list[CallTreeNode]) -> None:
    for child in node.children.values():
        if matcher(child.name):
            out.append(child)  # outermost wins: do not descend
        else:
            _collect_outermost(child, matcher, out)


def _reroot(matches: list[CallTreeNode], snapshot: CallTree) -> CallTree:
    if len(matches) == 1:
        root = matches[0].copy_normalized()
    else:
        root = CallTreeNode(matches[0].name if len({m.name for m in matches}) == 1
                            else ROOT_NAME)
        for m in matches:
            _merge_into(root, m)
        root.children = {c.name: c for c in
                         sorted(root.children.values(),
                                key=lambda n: (-n.inclusive, n.name))}
    view = CallTree(metadata=dict(snapshot.metadata), root=root,
                    total_samples=root.inclusive)
    view._frozen = True
    return view


def _merge_into(dst: CallTreeNode, src: CallTreeNode) -> None:
    dst.inclusive += src.inclusive
    dst.self_count += src.self_count
    for child in src.children.values():
        existing = dst.children.get(child.name)
        if existing is None:
            dst.children[child.name] = child.copy_normalized()
        else:
            _merge_into(existing, child)


# --------------------------------------------------------------------------
# Stage: k-level truncation


def truncate(view: CallTree, k: int) -> CallTree:
    """Keep k levels below the view root; deeper activity is absorbed.

    Retained nodes keep their inclusive counts unchanged; each depth-k node's
    self count becomes its inclusive count (it has absorbed all of its
    descendants); deeper nodes disappear.
    """
    if k < 1:
        raise PatternInvalid(f"truncation level must be >= 1, got {k}")
    root = _truncate_node(view.root, k)
    out = CallTree(metadata=dict(view.metadata), root=root,
                   total_samples=view.total_samples)
    out._frozen = True
    return out


def _truncate_node(node: CallTreeNode, levels_left: int) -> CallTreeNode:
    copy = CallTreeNode(node.name, node.inclusive, node.self_count)
    if levels_left == 0:
        copy.self_count = copy.inclusive
        return copy
    for child in node.children.values():
        copy.children[child.name] = _truncate_node(child, levels_left - 1)
    return copy


# --------------------------------------------------------------------------
# Stage: flattening


def flatten(view: CallTree) -> list[BreakdownRow]:
    """Merge counters for identical function names across call sites.

    The flattened count of a name is the number of distinct samples whose
    stacks contain it at least once within the view — computed by summing
    inclusive counts over nodes with that name whose ancestors do not already
    carry the name, so recursion never pushes a share past 1.
    """
    counts: dict[str, int] = {}
    depths: dict[str, int] = {}
    include_root = view.root.name != ROOT_NAME

    def visit(node: CallTreeNode, depth: int, seen: frozenset[str]) -> None:
        if node.name not in seen:
            counts[node.name] = counts.get(node.name, 0) + node.inclusive
            depths[node.name] = min(depth, depths.get(node.name, depth))
            seen = seen | {node.name}
        for child in node.children.values():
            visit(child, depth + 1, seen)

    if include_root:
        visit(view.root, 0, frozenset())
    else:
        for child in view.root.children.values():
            visit(child, 1, frozenset())
    total = view.total_samples
    rows = [BreakdownRow(name, count,
                         (count / total) if total else 0.0, depths[name])
            for name, count in counts.items()]
    rows.sort(key=lambda r: (-r.count, r.name))
    return rows


def tree_rows(view: CallTree) -> list[BreakdownRow]:
    """One row per node of a (typically truncated) view, depth-annotated."""
    total = view.total_samples
    rows: list[BreakdownRow] = []
    include_root = view.root.name != ROOT_NAME

    def visit(node: CallTreeNode, depth: int) -> None:
        rows.append(BreakdownRow(node.name, node.inclusive,
                                 (node.inclusive / total) if total else 0.0,
                                 depth))
        for child in node.sorted_children():
            visit(child, depth + 1)

    if include_root:
        visit(view.root, 0)
    else:
        for child in view.root.sorted_children():
            visit(child, 1)
    return rows


# --------------------------------------------------------------------------
# Stage: filters


def blacklist_tree(view: CallTree, patterns: Sequence[str]) -> CallTree:
    """Remove matching nodes and their subtrees, re-deriving every count.

    Ancestor inclusive counts shrink by what was removed, so shares computed
    afterwards are normalized over the remaining activity.
    """
    if not patterns:
        return view
    matcher = compile_patterns(patterns)
    root = _prune(view.root, matcher, is_root=True)
    if root is None:
        root = CallTreeNode(view.root.name)
    out = CallTree(metadata=dict(view.metadata), root=root,
                   total_samples=root.inclusive)
    out._frozen = True
    return out


def _prune(node: CallTreeNode, matcher: Matcher,
           is_root: bool = False) -> CallTreeNode | None:
    if not is_root and matcher(node.name):
        return None
    copy = CallTreeNode(node.name, 0, node.self_count)
    for child in node.children.values():
        kept = _prune(child, matcher)
        if kept is not None:
            copy.children[child.name] = kept
    copy.inclusive = copy.self_count + sum(
        c.inclusive for c in copy.children.values())
    return copy


def whitelist_tree(view: CallTree, patterns: Sequence[str]) -> CallTree:
    """Restrict display to paths leading to matching names.

    Counts and the view total are untouched: the whitelist controls presence,
    never weight.  With no match the result has an empty top level but the
    original total.
    """
    if not patterns:
        return view
    matcher = compile_patterns(patterns)
    root = _keep_matching_paths(view.root, matcher)
    if root is None:
        root = CallTreeNode(view.root.name, view.root.inclusive,
                            view.root.self_count)
    out = CallTree(metadata=dict(view.metadata), root=root,
                   total_samples=view.total_samples)
    out._frozen = True
    return out


def _keep_matching_paths(node: CallTreeNode,
                         matcher: Matcher) -> CallTreeNode | None:
    kept_children = []
    for child in node.children.values():
        kept = _keep_matching_paths(child, matcher)
        if kept is not None:
            kept_children.append(kept)
    if not kept_children and not matcher(node.name):
        return None
    copy = CallTreeNode(node.name, node.inclusive, node.self_count)
    if matcher(node.name):
        # A matching node keeps its whole subtree visible.
        for child in node.children.values():
            copy.children[child.name] = child.copy_normalized()
    else:
        for child in kept_children:
            copy.children[child.name] = child
    return copy


def whitelist_rows(rows: Iterable[BreakdownRow],
                   patterns: Sequence[str]) -> list[BreakdownRow]:
    if not patterns:
        return list(rows)
    matcher = compile_patterns(patterns)
    return [r for r in rows if matcher(r.name)]


# --------------------------------------------------------------------------
# Composition


def compose(spec: ViewSpec, snapshot: CallTree) -> ViewResult:
    """Apply one ViewSpec: subtree -> blacklist -> truncate -> flatten? ->
    whitelist, in that fixed order.  Pure in (spec, snapshot)."""
    view = snapshot
    if spec.root is not None and spec.root != ROOT_NAME:
        view = subtree(view, spec.root)
    elif not view.frozen:
        view = view.snapshot()
    view = blacklist_tree(view, spec.blacklist)
    if spec.level != -1:
        view = truncate(view, spec.level)
    if spec.flatten:
        rows = flatten(view)
    else:
        rows = tree_rows(view)
    rows = whitelist_rows(rows, spec.whitelist)
    tree = whitelist_tree(view, spec.whitelist)
    return ViewResult(spec=spec, tree=tree, rows=rows,
                      total=view.total_samples,
                      metadata=dict(snapshot.metadata))
