"""Shared helpers for the test suite: pause gates over trace hooks and
small thread-driving utilities.

The library exposes optional ``trace(point, info)`` hooks at named
internal points. Tests use them to park a thread at a precise step
(e.g. "descriptor published, help not yet run") while another thread
acts, turning scheduler races into scripted interleavings.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field


#: Join/wait timeout generous enough for a loaded host; a test that
#: trips it has genuinely deadlocked.
WAIT_S = 30.0


def app_value(n: int) -> int:
    """The nth application value: counters are stored shifted left two
    so cell values never collide with descriptor tag bits."""
    return n << 2


class Pause:
    """A one-shot gate a traced thread blocks on until released."""

    def __init__(self):
        self.reached = threading.Event()
        self._release = threading.Event()

    def __call__(self):
        self.reached.set()
        if not self._release.wait(WAIT_S):
            raise TimeoutError("paused thread was never released")

    def wait_reached(self):
        assert self.reached.wait(WAIT_S), "thread never reached the pause point"

    def release(self):
        self._release.set()


@dataclass
class TraceLog:
    """Collects trace events; optionally pauses at chosen points.

    ``pauses`` maps a trace-point name to a :class:`Pause`; only the
    first event at that point blocks (later ones pass through), which is
    what scripted interleavings need. ``match`` narrows by info dict.
    """

    pauses: dict = field(default_factory=dict)
    match: dict = field(default_factory=dict)
    events: list = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def __call__(self, point: str, info: dict) -> None:
        with self._lock:
            self.events.append((threading.get_ident(), point, dict(info)))
        pause = self.pauses.get(point)
        if pause is None or pause.reached.is_set():
            return
        wanted = self.match.get(point)
        if wanted is not None and any(info.get(k) != v for k, v in wanted.items()):
            return
        pause()

    def points(self, ident=None) -> list:
        """Trace-point names seen, optionally from one thread only."""
        with self._lock:
            return [p for t, p, _ in self.events if ident is None or t == ident]


class Runner(threading.Thread):
    """Thread wrapper that captures the return value or exception."""

    def __init__(self, fn, *args):
        super().__init__(daemon=True)
        self._fn = fn
        self._args = args
        self.result = None
        self.error = None

    def run(self):
        try:
            self.result = self._fn(*self._args)
        except BaseException as exc:  # surfaced by finish()
            self.error = exc

    def finish(self):
        """Join and re-raise any exception; returns the result."""
        self.join(WAIT_S)
        assert not self.is_alive(), "worker thread did not finish"
        if self.error is not None:
            raise self.error
        return self.result


def run_all(*runners: Runner) -> list:
    """Start every runner, then finish them all; returns their results."""
    for r in runners:
        r.start()
    return [r.finish() for r in runners]
