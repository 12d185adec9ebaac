"""Clock and timer abstraction so latency shaping runs on either the wall
clock (live servers) or a virtual clock (deterministic tests)."""

from __future__ import annotations

import heapq
import itertools
import threading
import time


class ThreadedTimeline:
    """Wall-clock timer: callbacks fire on a background thread in due order.

    `now_ms` is epoch milliseconds so access-slot windows can be configured
    as calendar times.
    """

    def __init__(self):
        self._heap: list = []
        self._counter = itertools.count()
        self._cond = threading.Condition()
        self._stopped = False
        self._thread = threading.Thread(target=self._loop, name="timeline", daemon=True)
        self._thread.start()

    def now_ms(self) -> float:
        return time.time() * 1000.0

    def schedule(self, delay_ms: float, fn) -> None:
        due = self.now_ms() + max(0.0, delay_ms)
        with self._cond:
            heapq.heappush(self._heap, (due, next(self._counter), fn))
            self._cond.notify()

    def stop(self) -> None:
        with self._cond:
            self._stopped = True
            self._cond.notify()
        self._thread.join(timeout=2.0)

    def _loop(self) -> None:
        while True:
            with self._cond:
                while not self._stopped and (not self._heap or self._heap[0][0] > self.now_ms()):
                    if self._heap:
                        wait_s = max(0.0, (self._heap[0][0] - self.now_ms()) / 1000.0)
                        self._cond.wait(timeout=min(wait_s, 0.5))
                    else:
                        self._cond.wait(timeout=0.5)
                if self._stopped:
                    return
                _, _, fn = heapq.heappop(self._heap)
            try:
                fn()
            except Exception:  # a failing callback must not kill the timer thread
                pass


class VirtualTimeline:
    """Deterministic timer: time advances only via `advance`, firing due
    callbacks inline in (due time, schedule order)."""

    def __init__(self, start_ms: float = 0.0):
        self._now = start_ms
        self._heap: list = []
        self._counter = itertools.count()

    def now_ms(self) -> float:
        return self._now

    def schedule(self, delay_ms: float, fn) -> None:
        heapq.heappush(self._heap, (self._now + max(0.0, delay_ms), next(self._counter), fn))

    def advance(self, delta_ms: float) -> None:
        target = self._now + delta_ms
        while self._heap and self._heap[0][0] <= target:
            due, _, fn = heapq.heappop(self._heap)
            self._now = due
            fn()
        self._now = target

    def run_until_idle(self, limit_ms: float = 1e9) -> None:
        while self._heap and self._heap[0][0] <= self._now + limit_ms:
            due, _, fn = heapq.heappop(self._heap)
            self._now = due
            fn()

    def stop(self) -> None:
        self._heap.clear()
