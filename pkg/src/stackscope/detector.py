"""Windowed runtime-share monitoring with checkpoint actions.

Each rule watches the share of in-scope stacks that contain a pattern over a
sliding window of the most recent in-scope samples.  A share is the natural
sampling estimator of a runtime proportion, deduplicated per stack so
recursion cannot push it past 1.  When the share strictly exceeds the rule's
threshold for ``sustain`` consecutive full windows — the repeating-function
signature of a stuck run — the detector emits a warning event and fires the
configured checkpoint action, rate-limited by a per-rule cooldown measured in
in-scope samples.

Actions run detached on their own threads with a timeout, so a slow
checkpoint never stalls sampling; failures are recorded on the event, never
raised.
"""

from __future__ import annotations

import json
import os
import signal as signal_mod
import subprocess
import sys
import threading
from collections import deque
from dataclasses import dataclass, field
from typing import Sequence

from .analyzer import ViewSpec, compile_pattern, compile_patterns
from .symbols import ResolvedStack

OUTCOME_RAN = "ran"
OUTCOME_FAILED = "failed"
OUTCOME_SUPPRESSED = "suppressed-by-cooldown"
OUTCOME_NO_ACTION = "no-action"


@dataclass(frozen=True)
class ActionSpec:
    """External checkpoint hook: a command, a signal to the target, or both."""

    command: tuple[str, ...] | None = None
    signal: int | str | None = None
    timeout: float = 30.0


@dataclass(frozen=True)
class DetectorRule:
    id: str
    pattern: str
    scope: ViewSpec | None = None
    threshold: float = 0.90
    window: int = 200
    sustain: int = 1
    cooldown: int | None = None  # in-scope samples between firings; None = window
    action: ActionSpec | None = None

    def __post_init__(self) -> None:
        if not 0 < self.threshold <= 1:
            raise ValueError(f"threshold must be in (0, 1], got {self.threshold}")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.sustain < 1:
            raise ValueError("sustain must be >= 1")
        if self.cooldown is not None and self.cooldown < 1:
            raise ValueError("cooldown must be >= 1")
        compile_pattern(self.pattern)

    @property
    def effective_cooldown(self) -> int:
        return self.cooldown if self.cooldown is not None else self.window


@dataclass
class DetectorEvent:
    rule_id: str
    timestamp_ns: int
    share: float
    window_start: int  # in-scope sample index of the window's first stack
    window_end: int  # ... and its last
    action_outcome: str | None = None
    detail: str = ""

    def to_json(self) -> str:
        return json.dumps({
            "rule_id": self.rule_id,
            "timestamp_ns": self.timestamp_ns,
            "share": round(self.share, 6),
            "window_start": self.window_start,
            "window_end": self.window_end,
            "action_outcome": self.action_outcome,
            "detail": self.detail,
        }, sort_keys=True)


class _RuleState:
    def __init__(self, rule: DetectorRule):
        self.rule = rule
        self.hits: deque[bool] = deque(maxlen=rule.window)
        self.seen = 0  # in-scope samples observed
        self.streak = 0  # consecutive full windows in violation
        self.last_fire: int | None = None  # in-scope index of last firing
        self.pattern = compile_pattern(rule.pattern)
        scope = rule.scope
        self.scope_root = (compile_pattern(scope.root)
                           if scope and scope.root else None)
        self.scope_blacklist = (compile_patterns(scope.blacklist)
                                if scope and scope.blacklist else None)

    def scoped_names(self, names: Sequence[str]) -> Sequence[str] | None:
        """The part of the stack the rule watches, or None when out of scope."""
        if self.scope_root is not None:
            for i, name in enumerate(names):
                if self.scope_root(name):
                    names = names[i:]
                    break
            else:
                return None
        if self.scope_blacklist is not None and any(
                self.scope_blacklist(n) for n in names):
            return None
        return names


def trigger_action(action: ActionSpec, event: DetectorEvent,
                   target_pid: int | None = None) -> tuple[str, str]:
    """Run one checkpoint action synchronously; returns (outcome, detail).

    The command gets the event fields as environment variables (RULE_ID,
    SHARE, TIMESTAMP); a configured signal goes to the target process group.
    Failures and timeouts are reported in the outcome, never raised.
    """
    details = []
    failed = False
    if action.signal is not None and target_pid is not None:
        signum = (getattr(signal_mod, action.signal)
                  if isinstance(action.signal, str) else int(action.signal))
        try:
            os.killpg(os.getpgid(target_pid), signum)
            details.append(f"signal {signum} sent")
        except (OSError, ProcessLookupError) as e:
            failed = True
            details.append(f"signal failed: {e}")
    if action.command:
        env = dict(os.environ)
        env.update({
            "RULE_ID": event.rule_id,
            "SHARE": f"{event.share:.6f}",
            "TIMESTAMP": str(event.timestamp_ns),
        })
        try:
            proc = subprocess.run(list(action.command), env=env,
                                  timeout=action.timeout,
                                  capture_output=True)
            if proc.returncode != 0:
                failed = True
                details.append(f"command exited {proc.returncode}")
            else:
                details.append("command exited 0")
        except subprocess.TimeoutExpired:
            failed = True
            details.append(f"command timed out after {action.timeout}s")
        except OSError as e:
            failed = True
            details.append(f"command failed to start: {e}")
    return (OUTCOME_FAILED if failed else OUTCOME_RAN), "; ".join(details)


class EventLog:
    """Append-only JSONL event sink, echoed to stderr with a WARN prefix."""

    def __init__(self, path: str | None):
        self.path = path
        self._lock = threading.Lock()
        if path:
            open(path, "a", encoding="utf-8").close()

    def append(self, event: DetectorEvent) -> None:
        with self._lock:
            if self.path:
                with open(self.path, "a", encoding="utf-8") as fp:
                    fp.write(event.to_json() + "\n")
            sys.stderr.write(
                f"WARN stackscope: rule {event.rule_id} share "
                f"{event.share:.3f} over samples "
                f"[{event.window_start}, {event.window_end}] "
                f"action={event.action_outcome or 'pending'}\n")


class Detector:
    """Holds rule windows and fires events as resolved stacks stream in."""

    def __init__(self, rules: Sequence[DetectorRule],
                 event_log: EventLog | None = None,
                 target_pid: int | None = None):
        self.rules = list(rules)
        self.states = [_RuleState(r) for r in self.rules]
        self.event_log = event_log
        self.target_pid = target_pid
        self.events: list[DetectorEvent] = []
        self._threads: list[threading.Thread] = []
        self._last_action_index: dict[str, int] = {}

    def observe(self, stack: ResolvedStack | Sequence[str]) -> list[DetectorEvent]:
        """Feed one stack; returns events fired by it (usually none)."""
        if isinstance(stack, ResolvedStack):
            names: Sequence[str] = stack.names()
            timestamp = stack.timestamp_ns
        else:
            names = tuple(stack)
            timestamp = 0
        fired: list[DetectorEvent] = []
        for state in self.states:
            scoped = state.scoped_names(names)
            if scoped is None:
                continue
            rule = state.rule
            state.hits.append(any(state.pattern(n) for n in scoped))
            state.seen += 1
            if len(state.hits) < rule.window:
                continue  # warm-up: never fire before the window fills
            share = sum(state.hits) / rule.window
            if share > rule.threshold:
                state.streak += 1
            else:
                state.streak = 0
                continue
            if state.streak < rule.sustain:
                continue
            idx = state.seen - 1
            if (state.last_fire is not None
                    and idx - state.last_fire < rule.effective_cooldown):
                continue
            state.last_fire = idx
            event = DetectorEvent(
                rule_id=rule.id, timestamp_ns=timestamp, share=share,
                window_start=idx - rule.window + 1, window_end=idx)
            self.events.append(event)
            fired.append(event)
            self._dispatch(rule, event)
        return fired

    def _dispatch(self, rule: DetectorRule, event: DetectorEvent) -> None:
        if rule.action is None:
            event.action_outcome = OUTCOME_NO_ACTION
            if self.event_log:
                self.event_log.append(event)
            return
        last = self._last_action_index.get(rule.id)
        if last is not None and event.window_end - last < rule.effective_cooldown:
            event.action_outcome = OUTCOME_SUPPRESSED
            if self.event_log:
                self.event_log.append(event)
            return
        self._last_action_index[rule.id] = event.window_end

        def run() -> None:
            outcome, detail = trigger_action(rule.action, event,
                                             self.target_pid)
            event.action_outcome = outcome
            event.detail = detail
            if self.event_log:
                self.event_log.append(event)

        t = threading.Thread(target=run, name=f"action-{rule.id}", daemon=True)
        t.start()
        self._threads.append(t)

    def drain(self, timeout: float | None = None) -> None:
        """Wait for outstanding checkpoint actions to settle."""
        for t in self._threads:
            t.join(timeout)
        self._threads = [t for t in self._threads if t.is_alive()]
