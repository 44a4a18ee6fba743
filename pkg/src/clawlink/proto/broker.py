"""Topic-based pub/sub core.

Transport-agnostic: the TCP server and the virtual-time network both route
through one Broker instance.  Delivery is at-most-once per subscriber with a
drop-oldest queue; unknown topic ids land in a dead-letter sink instead of
erroring back to the publisher.  Routing is linearizable per broker (one
lock), which trivially preserves per-(publisher, topic) message order.
"""

from __future__ import annotations

import threading
from collections import deque
from dataclasses import dataclass, field

from .framing import KNOWN_TOPICS, Message

DEFAULT_QUEUE_CAPACITY = 256
DEAD_LETTER_CAPACITY = 64


@dataclass
class QueueEntry:
    message: Message
    arrival_ns: int
    publisher: str


class SubscriberQueue:
    """Bounded FIFO; on overflow the oldest entry is evicted and counted."""

    def __init__(self, capacity: int = DEFAULT_QUEUE_CAPACITY):
        if capacity < 1:
            raise ValueError("queue capacity must be >= 1")
        self.capacity = capacity
        self.dropped_count = 0
        self._items: deque[QueueEntry] = deque()
        self._cond = threading.Condition()

    def push(self, entry: QueueEntry) -> None:
        with self._cond:
            if len(self._items) >= self.capacity:
                self._items.popleft()
                self.dropped_count += 1
            self._items.append(entry)
            self._cond.notify()

    def pop(self, timeout: float | None = None) -> QueueEntry | None:
        with self._cond:
            if not self._items and timeout is not None:
                self._cond.wait(timeout)
            return self._items.popleft() if self._items else None

    def drain(self) -> list[QueueEntry]:
        with self._cond:
            items = list(self._items)
            self._items.clear()
            return items

    def __len__(self) -> int:
        with self._cond:
            return len(self._items)


@dataclass
class Subscription:
    subscriber_id: str
    topics: frozenset[int] | None  # None = all known topics
    queue: SubscriberQueue

    def wants(self, topic: int) -> bool:
        if self.topics is None:
            return topic in KNOWN_TOPICS
        return topic in self.topics


@dataclass
class TopicCounters:
    published: int = 0
    delivered: int = 0
    dropped_full: int = 0


class Broker:
    """Routes messages to current subscribers of their topic."""

    def __init__(self, queue_capacity: int = DEFAULT_QUEUE_CAPACITY):
        self.queue_capacity = queue_capacity
        self._lock = threading.Lock()
        self._subs: dict[int, Subscription] = {}
        self._next_sub_id = 0
        self.counters: dict[int, TopicCounters] = {}
        self.dead_letters: deque[QueueEntry] = deque(maxlen=DEAD_LETTER_CAPACITY)

    def subscribe(self, subscriber_id: str, topics=None,
                  capacity: int | None = None) -> tuple[int, Subscription]:
        """Register a subscriber; topics=None subscribes to all known ids."""
        tset = None if topics is None else frozenset(int(t) for t in topics)
        sub = Subscription(
            subscriber_id=subscriber_id,
            topics=tset,
            queue=SubscriberQueue(capacity or self.queue_capacity),
        )
        with self._lock:
            handle = self._next_sub_id
            self._next_sub_id += 1
            self._subs[handle] = sub
        return handle, sub

    def unsubscribe(self, handle: int) -> None:
        with self._lock:
            self._subs.pop(handle, None)

    def publish(self, msg: Message, publisher: str = "",
                arrival_ns: int | None = None) -> int:
        """Route one message; returns the number of queues it entered."""
        arrival = msg.timestamp if arrival_ns is None else arrival_ns
        entry = QueueEntry(message=msg, arrival_ns=arrival, publisher=publisher)
        with self._lock:
            c = self.counters.setdefault(msg.topic, TopicCounters())
            c.published += 1
            if msg.topic not in KNOWN_TOPICS:
                self.dead_letters.append(entry)
                return 0
            targets = [s for s in self._subs.values() if s.wants(msg.topic)]
        delivered = 0
        for sub in targets:
            before = sub.queue.dropped_count
            sub.queue.push(entry)
            delivered += 1
            if sub.queue.dropped_count > before:
                with self._lock:
                    c.dropped_full += sub.queue.dropped_count - before
        with self._lock:
            c.delivered += delivered
        return delivered

    def select(self, msg: Message) -> list[Subscription]:
        """Count the publish and return the matching subscriptions without
        pushing -- used by transports that own the delivery leg (the
        virtual network schedules per-subscriber delayed pushes)."""
        with self._lock:
            c = self.counters.setdefault(msg.topic, TopicCounters())
            c.published += 1
            if msg.topic not in KNOWN_TOPICS:
                self.dead_letters.append(
                    QueueEntry(message=msg, arrival_ns=msg.timestamp, publisher=""))
                return []
            targets = [s for s in self._subs.values() if s.wants(msg.topic)]
            c.delivered += len(targets)
            return targets

    def note_dropped(self, topic: int, n: int) -> None:
        with self._lock:
            self.counters.setdefault(topic, TopicCounters()).dropped_full += n

    def stats(self) -> dict[int, TopicCounters]:
        with self._lock:
            return {t: TopicCounters(c.published, c.delivered, c.dropped_full)
                    for t, c in self.counters.items()}
