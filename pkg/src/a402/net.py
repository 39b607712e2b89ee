"""Deterministic discrete-event network with scriptable fault injection,
plus a thin thread-based transport used by the wall-clock benchmark mode.

The simulator owns a millisecond clock and a time-ordered event queue;
equal-timestamp events run in insertion order, so a (seed, scenario, faults)
triple fully determines the transcript. Frames are opaque sealed bytes; the
adversary can drop, delay, duplicate, or replay them by traffic class but
cannot forge contents the receiver would accept.
"""

from __future__ import annotations

import heapq
import itertools
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

from .crypto.hashing import hash_parts

DROP = "DROP"
DELAY = "DELAY"
DUPLICATE = "DUPLICATE"
REPLAY = "REPLAY"


@dataclass
class FaultRule:
    link: str        # "src->dst" or "*"
    kind: str        # frame kind label or "*"
    index: int       # 1-based occurrence among matching frames
    action: str      # DROP | DELAY | DUPLICATE | REPLAY
    param: int = 0   # extra milliseconds for DELAY / REPLAY


class FaultScript:
    """Deterministic adversary script: one rule per matched occurrence."""

    def __init__(self, rules: Optional[List[FaultRule]] = None):
        self.rules = list(rules or [])
        self._counters: Dict[Tuple[str, str], int] = {}

    @classmethod
    def parse(cls, text: str) -> "FaultScript":
        """One rule per line: ``link kind index action [param]``."""
        rules = []
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) not in (4, 5):
                raise ValueError(f"malformed fault rule: {line!r}")
            link, kind, index, action = parts[:4]
            param = int(parts[4]) if len(parts) == 5 else 0
            if action not in (DROP, DELAY, DUPLICATE, REPLAY):
                raise ValueError(f"unknown fault action: {action}")
            rules.append(FaultRule(link, kind, int(index), action, param))
        return cls(rules)

    def dump(self) -> str:
        return "\n".join(
            f"{r.link} {r.kind} {r.index} {r.action}" + (f" {r.param}" if r.param else "")
            for r in self.rules
        )

    def reset(self) -> None:
        self._counters.clear()

    def matching(self, link: str, kind: str) -> List[FaultRule]:
        count = self._counters.get((link, kind), 0) + 1
        self._counters[(link, kind)] = count
        hits = []
        for rule in self.rules:
            if rule.link not in (link, "*"):
                continue
            if rule.kind not in (kind, "*"):
                continue
            if rule.index == count:
                hits.append(rule)
        return hits


class TimerHandle:
    __slots__ = ("cancelled",)

    def __init__(self):
        self.cancelled = False

    def cancel(self) -> None:
        self.cancelled = True


class SimClock:
    """Event loop over simulated milliseconds."""

    def __init__(self):
        self.now = 0
        self._heap: List[Tuple[int, int, TimerHandle, Callable[[], None]]] = []
        self._seq = itertools.count()
        self.events_processed = 0
        self.after_event_hooks: List[Callable[[], None]] = []

    def schedule(self, delay_ms: int, fn: Callable[[], None]) -> TimerHandle:
        handle = TimerHandle()
        heapq.heappush(self._heap, (self.now + max(0, delay_ms), next(self._seq), handle, fn))
        return handle

    def run_until_quiescent(self, max_sim_time: int = 10_000_000) -> int:
        """Process events in time order; returns the final simulated time.

        Raises RuntimeError with a LIVELOCK_SUSPECTED diagnostic if the cap is
        reached with work still queued.
        """
        while self._heap:
            when, _, handle, fn = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            if when > max_sim_time:
                raise RuntimeError(f"LIVELOCK_SUSPECTED: event at {when} past cap {max_sim_time}")
            self.now = max(self.now, when)
            fn()
            self.events_processed += 1
            for hook in self.after_event_hooks:
                hook()
        return self.now


@dataclass
class Frame:
    src: str
    dst: str
    kind: str
    payload: bytes

    def digest(self) -> str:
        return hash_parts([self.src.encode(), self.dst.encode(), self.kind.encode(), self.payload]).hex()[:16]


class SimNetwork:
    """Authenticated links with fixed base delay and scripted faults."""

    def __init__(self, clock: SimClock, base_delay_ms: int = 10, faults: Optional[FaultScript] = None):
        self.clock = clock
        self.base_delay_ms = base_delay_ms
        self.faults = faults or FaultScript()
        self.parties: Dict[str, Callable[[Frame], None]] = {}
        self.transcript: List[str] = []
        self.dropped: List[Tuple[str, str]] = []

    def register(self, name: str, deliver: Callable[[Frame], None]) -> None:
        self.parties[name] = deliver

    def send(self, src: str, dst: str, kind: str, payload: bytes) -> None:
        if dst not in self.parties:
            raise KeyError(f"unknown party: {dst}")
        frame = Frame(src, dst, kind, payload)
        link = f"{src}->{dst}"
        delay = self.base_delay_ms
        deliveries = 1
        replay_at: Optional[int] = None
        for rule in self.faults.matching(link, kind):
            if rule.action == DROP:
                deliveries = 0
            elif rule.action == DELAY:
                delay += rule.param
            elif rule.action == DUPLICATE:
                deliveries += 1
            elif rule.action == REPLAY:
                replay_at = delay + max(rule.param, 1)
        if deliveries == 0:
            self.dropped.append((link, kind))
            return
        for _ in range(deliveries):
            self._schedule_delivery(frame, delay)
        if replay_at is not None:
            self._schedule_delivery(frame, replay_at)

    def _schedule_delivery(self, frame: Frame, delay: int) -> None:
        def deliver():
            self.transcript.append(
                f"{self.clock.now} {frame.src} {frame.dst} {frame.kind} {frame.digest()}"
            )
            self.parties[frame.dst](frame)

        self.clock.schedule(delay, deliver)

    def transcript_digest(self) -> str:
        return hash_parts([line.encode() for line in self.transcript]).hex()


class SimRuntime:
    """What protocol nodes see: a clock, timers, and links."""

    def __init__(self, clock: SimClock, network: SimNetwork):
        self.clock = clock
        self.network = network

    def now_ms(self) -> int:
        return self.clock.now

    def schedule(self, delay_ms: int, fn: Callable[[], None]) -> TimerHandle:
        return self.clock.schedule(delay_ms, fn)

    def send(self, src: str, dst: str, kind: str, payload: bytes) -> None:
        self.network.send(src, dst, kind, payload)


# -- real transport (benchmark mode) ------------------------------------------


class _RealTimer:
    def __init__(self, timer: threading.Timer):
        self._timer = timer

    def cancel(self) -> None:
        self._timer.cancel()


class RealRuntime:
    """Wall-clock transport over worker queues; same interface as SimRuntime.

    Each registered party gets an inbox worker thread, preserving the
    single-writer-per-node discipline while distinct nodes run concurrently.
    """

    def __init__(self, base_delay_ms: int = 10):
        self.base_delay_ms = base_delay_ms
        self._start = time.monotonic()
        self._inboxes: Dict[str, "queue.Queue[Optional[Callable[[], None]]]"] = {}
        self._workers: List[threading.Thread] = []
        self._timers: List[threading.Timer] = []
        self._stopped = False

    def now_ms(self) -> float:
        return (time.monotonic() - self._start) * 1000.0

    def register(self, name: str, deliver: Callable[[Frame], None]) -> None:
        inbox: "queue.Queue[Optional[Callable[[], None]]]" = queue.Queue()
        self._inboxes[name] = inbox

        def worker():
            while True:
                task = inbox.get()
                if task is None:
                    return
                task()

        thread = threading.Thread(target=worker, daemon=True, name=f"node-{name}")
        thread.start()
        self._workers.append(thread)
        setattr(inbox, "deliver_cb", deliver)

    def post(self, name: str, fn: Callable[[], None]) -> None:
        self._inboxes[name].put(fn)

    def send(self, src: str, dst: str, kind: str, payload: bytes) -> None:
        frame = Frame(src, dst, kind, payload)
        inbox = self._inboxes[dst]
        deliver = getattr(inbox, "deliver_cb")

        def arrive():
            if not self._stopped:
                inbox.put(lambda: deliver(frame))

        timer = threading.Timer(self.base_delay_ms / 1000.0, arrive)
        timer.daemon = True
        timer.start()
        self._timers.append(timer)

    def schedule(self, delay_ms: float, fn: Callable[[], None]) -> _RealTimer:
        timer = threading.Timer(delay_ms / 1000.0, fn)
        timer.daemon = True
        timer.start()
        self._timers.append(timer)
        return _RealTimer(timer)

    def shutdown(self) -> None:
        self._stopped = True
        for timer in self._timers:
            timer.cancel()
        for inbox in self._inboxes.values():
            inbox.put(None)
        for worker in self._workers:
            worker.join(timeout=2)
