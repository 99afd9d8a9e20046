"""Serialization of trees and breakdowns: JSON, CSV, SVG, and HTML.

The tree document (schema version 1) is written in a canonical form — sorted
keys, compact separators, children in normalized order, newline-terminated —
so re-serializing an imported document is byte-identical and report diffs
across runs are meaningful.  Import validates structural invariants and
rejects violating documents instead of repairing them.
"""

from __future__ import annotations

import html
import json
from importlib import resources
from typing import Any, Iterable, Sequence

from .analyzer import BreakdownRow
from .calltree import CallTree, CallTreeNode
from .errors import InvariantViolation, SchemaMismatch

SCHEMA_VERSION = 1

_METADATA_KEYS = {"target", "period_ns", "start_ns", "end_ns",
                  "total_samples", "source_mode"}
_NODE_KEYS = {"name", "inclusive", "self", "children"}


# --------------------------------------------------------------------------
# Tree document (JSON schema v1)


def tree_document(tree: CallTree) -> dict[str, Any]:
    """Build the schema-v1 document dict for a snapshot or view tree."""
    md = tree.metadata
    return {
        "schema_version": SCHEMA_VERSION,
        "metadata": {
            "target": str(md.get("target", "")),
            "period_ns": int(md.get("period_ns", 0)),
            "start_ns": int(md.get("start_ns", 0)),
            "end_ns": int(md.get("end_ns", 0)),
            "total_samples": tree.total_samples,
            "source_mode": str(md.get("source_mode", "")),
        },
        "root": tree.root.to_dict(),
    }


def dumps_canonical(doc: dict[str, Any]) -> str:
    return json.dumps(doc, sort_keys=True, separators=(",", ":"),
                      ensure_ascii=False) + "\n"


def export_json(tree: CallTree, path: str) -> None:
    """Write the canonical tree document; round-trips via import_json."""
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(dumps_canonical(tree_document(tree)))


def import_json(path: str) -> CallTree:
    """Load a schema-v1 document back into a frozen snapshot.

    Raises :class:`SchemaMismatch` for wrong versions or shapes and
    :class:`InvariantViolation` (naming the node) for count inconsistencies.
    """
    with open(path, "r", encoding="utf-8") as fp:
        try:
            doc = json.load(fp)
        except json.JSONDecodeError as e:
            raise SchemaMismatch(f"not a JSON document: {e}") from None
    return document_to_tree(doc)


def document_to_tree(doc: Any) -> CallTree:
    if not isinstance(doc, dict):
        raise SchemaMismatch("document root must be an object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise SchemaMismatch(f"unsupported schema_version {version!r}")
    extra = set(doc) - {"schema_version", "metadata", "root"}
    if extra:
        raise SchemaMismatch(f"unexpected top-level keys: {sorted(extra)}")
    md = doc.get("metadata")
    if not isinstance(md, dict) or set(md) != _METADATA_KEYS:
        raise SchemaMismatch("metadata must carry exactly the schema keys")
    root_obj = doc.get("root")
    root = _node_from_obj(root_obj, path="")
    total = md["total_samples"]
    if not isinstance(total, int) or total != root.inclusive:
        raise InvariantViolation(
            root.name, f"metadata total {total!r} != root inclusive "
                       f"{root.inclusive}")
    tree = CallTree(metadata={
        "target": md["target"],
        "period_ns": md["period_ns"],
        "start_ns": md["start_ns"],
        "end_ns": md["end_ns"],
        "source_mode": md["source_mode"],
    }, root=root, total_samples=total)
    tree.metadata.pop("created_ns", None)
    tree._frozen = True
    return tree


def _node_from_obj(obj: Any, path: str) -> CallTreeNode:
    if not isinstance(obj, dict):
        raise SchemaMismatch(f"node at {path or '<root>'} must be an object")
    extra = set(obj) - _NODE_KEYS
    if extra or set(obj) != _NODE_KEYS:
        raise SchemaMismatch(
            f"node at {path or '<root>'} has wrong keys: {sorted(obj)}")
    name = obj["name"]
    inclusive = obj["inclusive"]
    self_count = obj["self"]
    children = obj["children"]
    if not isinstance(name, str) or not name:
        raise SchemaMismatch(f"node at {path or '<root>'}: bad name")
    here = f"{path}/{name}" if path else name
    if not isinstance(inclusive, int) or not isinstance(self_count, int):
        raise SchemaMismatch(f"node at {here}: counts must be integers")
    if self_count < 0 or inclusive < 0:
        raise InvariantViolation(here, "negative counter")
    if not isinstance(children, list):
        raise SchemaMismatch(f"node at {here}: children must be an array")
    node = CallTreeNode(name, inclusive, self_count)
    child_sum = 0
    for child_obj in children:
        child = _node_from_obj(child_obj, here)
        if child.name in node.children:
            raise InvariantViolation(f"{here}/{child.name}",
                                     "duplicate sibling name")
        if child.inclusive < 1:
            raise InvariantViolation(f"{here}/{child.name}",
                                     "inclusive count below 1")
        node.children[child.name] = child
        child_sum += child.inclusive
    if inclusive != self_count + child_sum:
        raise InvariantViolation(
            here, f"inclusive {inclusive} != self {self_count} + children "
                  f"{child_sum}")
    return node


# --------------------------------------------------------------------------
# CSV breakdowns


def format_csv(rows: Iterable[BreakdownRow]) -> str:
    """Render rows as the documented CSV dialect (LF, minimal quoting)."""
    lines = ["name,count,share,depth"]
    for r in rows:
        name = r.name
        if any(ch in name for ch in ",\"\n"):
            name = '"' + name.replace('"', '""') + '"'
        lines.append(f"{name},{r.count},{r.share:.6f},{r.depth}")
    return "\n".join(lines) + "\n"


def export_csv(rows: Iterable[BreakdownRow], path: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fp:
        fp.write(format_csv(rows))


# --------------------------------------------------------------------------
# SVG stacked bars

_PALETTE = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
            "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"]

_BAR_WIDTH = 72
_BAR_GAP = 28
_BAR_HEIGHT = 280
_MARGIN = 40
_LEGEND_ROW = 18


def format_svg_breakdown(groups: Sequence[tuple[str, Sequence[BreakdownRow]]]) -> str:
    """Stacked-bar chart, one bar per labelled row group; deterministic."""
    if not groups:
        raise ValueError("at least one row group is required")
    names: list[str] = []
    for _, rows in groups:
        for r in rows:
            if r.name not in names:
                names.append(r.name)
    colors = {n: _PALETTE[i % len(_PALETTE)] for i, n in enumerate(names)}
    width = _MARGIN * 2 + len(groups) * (_BAR_WIDTH + _BAR_GAP)
    legend_h = _LEGEND_ROW * len(names) + 10
    height = _MARGIN * 2 + _BAR_HEIGHT + 30 + legend_h
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
        f'height="{height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
    ]
    for gi, (label, rows) in enumerate(groups):
        x = _MARGIN + gi * (_BAR_WIDTH + _BAR_GAP)
        y = _MARGIN + _BAR_HEIGHT
        for r in rows:
            seg = round(r.share * _BAR_HEIGHT, 2)
            y -= seg
            parts.append(
                f'<rect x="{x}" y="{round(y, 2)}" width="{_BAR_WIDTH}" '
                f'height="{seg}" fill="{colors[r.name]}">'
                f'<title>{_esc(r.name)}: {r.share:.1%}</title></rect>')
        parts.append(
            f'<text x="{x + _BAR_WIDTH / 2}" y="{_MARGIN + _BAR_HEIGHT + 16}" '
            f'text-anchor="middle">{_esc(label)}</text>')
    ly = _MARGIN + _BAR_HEIGHT + 40
    for i, name in enumerate(names):
        y = ly + i * _LEGEND_ROW
        parts.append(f'<rect x="{_MARGIN}" y="{y}" width="12" height="12" '
                     f'fill="{colors[name]}"/>')
        parts.append(f'<text x="{_MARGIN + 18}" y="{y + 10}">'
                     f'{_esc(name)}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def export_svg_breakdown(groups: Sequence[tuple[str, Sequence[BreakdownRow]]],
                         path: str) -> None:
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(format_svg_breakdown(groups))


def _esc(text: str) -> str:
    return html.escape(text, quote=True)


# --------------------------------------------------------------------------
# Self-contained HTML report

_DATA_BLOCK_ID = "stackscope-tree-data"


def _viewer_asset() -> str:
    return (resources.files("stackscope") / "assets" / "viewer.js"
            ).read_text(encoding="utf-8")


def _viewer_css() -> str:
    return (resources.files("stackscope") / "assets" / "viewer.css"
            ).read_text(encoding="utf-8")


def format_html(tree: CallTree, title: str = "stackscope report") -> str:
    """One self-contained page: inlined document + embedded viewer."""
    doc = dumps_canonical(tree_document(tree)).rstrip("\n")
    # A literal "</script" inside the JSON payload would end the data block.
    doc = doc.replace("</", "<\\/")
    return f"""<!DOCTYPE html>
<html lang="en">
<head>
<meta charset="utf-8">
<title>{_esc(title)}</title>
<style>
{_viewer_css()}
</style>
</head>
<body>
<script type="application/json" id="{_DATA_BLOCK_ID}">{doc}</script>
<div id="app"></div>
<footer class="footer-note">Level presets expand or collapse the display
only; aggregating truncation of deep activity into ancestors is an analysis
operation and changes counts, which this viewer never does.</footer>
<script>
{_viewer_asset()}
</script>
</body>
</html>
"""


def export_html(tree: CallTree, path: str,
                title: str = "stackscope report") -> None:
    with open(path, "w", encoding="utf-8") as fp:
        fp.write(format_html(tree, title))


def extract_data_block(html_text: str) -> dict[str, Any]:
    """Parse the inlined document back out of a report page (test hook)."""
    marker = f'id="{_DATA_BLOCK_ID}">'
    start = html_text.index(marker) + len(marker)
    end = html_text.index("</script>", start)
    return json.loads(html_text[start:end].replace("<\\/", "</"))
