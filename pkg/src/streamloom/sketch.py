"""Space-Saving heavy-hitter sketch.

Tracks approximate counts for at most ``capacity`` keys. Tracked counts never
undercount: for any tracked key, true_count <= count <= true_count + error,
and every key whose true count exceeds n_seen / capacity is tracked.
"""

from __future__ import annotations

import heapq


class SpaceSavingSketch:
    """Bounded stream summary with (count, error) per tracked key.

    When a new key arrives and the sketch is full, a minimum-count entry is
    evicted; among equal minima the least-recently-updated entry goes. The new
    key inherits the evicted count + 1 with error = evicted count.
    """

    __slots__ = ("capacity", "n_seen", "_table", "_heap", "_tick")

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.n_seen = 0
        self._table: dict = {}  # key -> [count, error, last_update_tick]
        self._heap: list = []  # (count, tick, key); stale entries skipped lazily
        self._tick = 0

    def offer(self, key) -> "SpaceSavingSketch":
        self.n_seen += 1
        self._tick += 1
        entry = self._table.get(key)
        if entry is not None:
            entry[0] += 1
            entry[2] = self._tick
            heapq.heappush(self._heap, (entry[0], self._tick, key))
        elif len(self._table) < self.capacity:
            self._table[key] = [1, 0, self._tick]
            heapq.heappush(self._heap, (1, self._tick, key))
        else:
            victim_count = self._evict_min()
            self._table[key] = [victim_count + 1, victim_count, self._tick]
            heapq.heappush(self._heap, (victim_count + 1, self._tick, key))
        return self

    def _evict_min(self) -> int:
        # The heap orders by (count, last-update tick): the root that still
        # matches the live table is the minimum-count, least-recently-updated
        # entry. Entries outdated by later updates or evictions are discarded.
        while True:
            count, tick, key = heapq.heappop(self._heap)
            entry = self._table.get(key)
            if entry is not None and entry[0] == count and entry[2] == tick:
                del self._table[key]
                return count

    def __len__(self) -> int:
        return len(self._table)

    def estimate(self, key):
        """(count, error) for a tracked key, or None."""
        entry = self._table.get(key)
        if entry is None:
            return None
        return (entry[0], entry[1])

    @property
    def counters(self) -> dict:
        """Snapshot of tracked keys: key -> (count, error)."""
        return {k: (e[0], e[1]) for k, e in self._table.items()}

    def is_heavy(self, key, theta: float) -> bool:
        """Whether ``key``'s estimated count reaches theta * n_seen."""
        entry = self._table.get(key)
        return entry is not None and entry[0] >= theta * self.n_seen

    def heavy_hitters(self, theta: float) -> set:
        """Keys whose estimated count reaches theta * n_seen."""
        bound = theta * self.n_seen
        return {k for k, e in self._table.items() if e[0] >= bound}
