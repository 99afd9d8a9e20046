"""The ingest loop shared by live profiling and trace replay.

Polls a sample session, resolves each sample, merges it into the call tree,
and feeds the detector — then emits the configured artifacts (tree JSON,
HTML report, per-view CSV/SVG, events log) from a final snapshot.  Both
backends produce identical artifact shapes.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

from . import reporter
from .analyzer import ViewSpec, compose
from .calltree import CallTree
from .detector import Detector, DetectorRule, EventLog
from .samples import SessionState, SourceStats
from .symbols import Resolver


@dataclass
class OutputSpec:
    """Where a run's artifacts land; unset pieces are skipped."""

    directory: Path | None = None
    tree_json: str = "tree.json"
    html: str = "report.html"
    events_log: str = "events.jsonl"
    csv_pattern: str = "view-{name}.csv"
    svg: str | None = None

    def resolve(self, name: str) -> Path | None:
        if self.directory is None:
            return None
        self.directory.mkdir(parents=True, exist_ok=True)
        return self.directory / name


@dataclass
class PipelineResult:
    tree: CallTree
    stats: SourceStats
    events: list
    artifacts: dict[str, str] = field(default_factory=dict)


def run_pipeline(session, resolver: Resolver,
                 rules: Sequence[DetectorRule] = (),
                 views: Sequence[ViewSpec] = (),
                 outputs: OutputSpec | None = None,
                 should_stop: Callable[[], bool] | None = None,
                 target_pid: int | None = None,
                 final_drain: bool = True) -> PipelineResult:
    """Drive one session to completion and emit artifacts.

    ``should_stop`` is checked between polls for live sessions (child exit,
    timeout, interrupt); replay sessions run until drained.  A final drain
    pass collects whatever the rings still hold before closing.
    """
    outputs = outputs or OutputSpec()
    tree = CallTree(metadata=dict(getattr(session, "metadata", {})))
    tree.metadata["start_ns"] = time.time_ns()
    log_path = outputs.resolve(outputs.events_log)
    event_log = EventLog(str(log_path) if log_path else None)
    detector = Detector(rules, event_log=event_log, target_pid=target_pid)
    if hasattr(session, "add_remap_hook"):
        session.add_remap_hook(resolver.remap_hint)

    def ingest_batch(batch) -> None:
        for sample in batch:
            resolved = resolver.resolve(sample)
            names = resolved.names()
            if not names:
                continue
            tree.ingest(names)
            if rules:
                detector.observe(resolved)

    try:
        while True:
            if session.state is SessionState.DRAINED:
                break
            if should_stop is not None and should_stop():
                break
            ingest_batch(session.poll())
        if final_drain and session.state is SessionState.RUNNING:
            ingest_batch(session.poll())
    finally:
        stats = session.close()
        detector.drain(timeout=max(r.action.timeout for r in rules
                                   if r.action) + 1.0
                       if any(r.action for r in rules) else None)
    tree.metadata["end_ns"] = time.time_ns()

    snapshot = tree.snapshot()
    artifacts: dict[str, str] = {}
    if log_path:
        artifacts["events"] = str(log_path)
    json_path = outputs.resolve(outputs.tree_json)
    if json_path:
        reporter.export_json(snapshot, str(json_path))
        artifacts["tree_json"] = str(json_path)
    html_path = outputs.resolve(outputs.html)
    if html_path:
        reporter.export_html(snapshot, str(html_path))
        artifacts["html"] = str(html_path)
    svg_groups = []
    for view in views:
        result = compose(view, snapshot)
        label = view.name or (view.root or "all")
        csv_path = outputs.resolve(
            outputs.csv_pattern.format(name=_slug(label)))
        if csv_path:
            reporter.export_csv(result.rows, str(csv_path))
            artifacts[f"csv:{label}"] = str(csv_path)
        svg_groups.append((label, result.rows))
    if outputs.svg and svg_groups:
        svg_path = outputs.resolve(outputs.svg)
        if svg_path:
            reporter.export_svg_breakdown(svg_groups, str(svg_path))
            artifacts["svg"] = str(svg_path)
    return PipelineResult(tree=snapshot, stats=stats,
                          events=detector.events, artifacts=artifacts)


def _slug(name: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_"
                   for ch in name)[:64] or "view"
