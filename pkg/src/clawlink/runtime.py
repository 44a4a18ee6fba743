"""Node runtime: deterministic virtual time and wall-clock execution.

Node behavior lives in small logic classes (see nodes.py) written against a
NodeContext, so the same logic runs in two modes:

  * VirtualNetwork -- a discrete-event scheduler plus the in-process broker.
    Message legs get delays from each node's seeded delay model (uplink on
    publish, downlink per subscriber), clamped FIFO per link so streams are
    never reordered.  Two runs with the same configs, scripts and seeds make
    identical event sequences, which is what the record/replay acceptance
    checks lean on.
  * Wall-clock mode -- each node is a thread owning a TCP connection to the
    broker (proto.tcp); timers fire on the real clock.

A node's local clock is true time plus its configured skew; messages are
stamped with the local clock at publish and with the subscriber's local
clock at arrival.
"""

from __future__ import annotations

import heapq
import random
import threading
import time
from dataclasses import dataclass, field
from typing import Callable

from .core import NS_PER_MS, NS_PER_SEC
from .errors import ConfigError
from .proto.broker import Broker, QueueEntry, Subscription
from .proto.framing import Message


@dataclass(frozen=True)
class DelayModel:
    """Per-node network delay: fixed + half-normal jitter, seeded."""

    fixed_ms: float = 0.0
    jitter_ms: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.fixed_ms < 0 or self.jitter_ms < 0:
            raise ConfigError("delays must be >= 0")

    def sample_ns(self, rng: random.Random) -> int:
        d = self.fixed_ms
        if self.jitter_ms > 0.0:
            d += abs(rng.gauss(0.0, self.jitter_ms))
        return int(round(d * NS_PER_MS))


@dataclass
class NodeConfig:
    """Identity, clock and link properties of one simulated device."""

    node_id: str
    broker_addr: str = "127.0.0.1:7600"
    rates_hz: dict[str, float] = field(default_factory=dict)
    clock_skew_ns: int = 0
    delay: DelayModel = field(default_factory=DelayModel)
    queue_capacity: int = 1024

    def rate(self, stream: str, default: float) -> float:
        hz = self.rates_hz.get(stream, default)
        if hz <= 0:
            raise ConfigError(f"rate for {stream} must be > 0")
        return hz

    def period_ns(self, stream: str, default: float) -> int:
        return int(round(NS_PER_SEC / self.rate(stream, default)))


class NodeContext:
    """What node logic sees: a clock, a publisher, timers and counters."""

    def __init__(self, endpoint, runtime):
        self._ep = endpoint
        self._rt = runtime
        self.config: NodeConfig = endpoint.config
        self.faults = 0  # incremented by logic on skipped/malformed input

    @property
    def node_id(self) -> str:
        return self.config.node_id

    def now_ns(self) -> int:
        """Node-local clock (true time + configured skew)."""
        return self._ep.now_ns()

    def publish(self, topic: int, payload: bytes) -> Message:
        return self._ep.publish(topic, payload)

    def every(self, period_ns: int, fn: Callable, phase_ns: int = 0) -> None:
        """Register a periodic callback fn(ctx); the runtime drains the
        inbox into logic.on_message before each firing."""
        self._rt.register_timer(self._ep, self, period_ns, phase_ns, fn)

    def at(self, at_ns: int, fn: Callable) -> None:
        """One-shot callback at an absolute time (no inbox drain)."""
        self._rt.register_oneshot(self._ep, self, at_ns, fn)

    def stop(self) -> None:
        self._ep.stopped = True


# ---------------------------------------------------------------------------
# virtual time

@dataclass(order=True)
class _Event:
    at_ns: int
    seq: int
    fn: Callable = field(compare=False)


class VirtualScheduler:
    """Min-heap of timed callbacks; FIFO among events at equal times."""

    def __init__(self):
        self.now_ns = 0
        self._heap: list[_Event] = []
        self._seq = 0

    def schedule_at(self, at_ns: int, fn: Callable) -> None:
        heapq.heappush(self._heap, _Event(max(at_ns, self.now_ns), self._seq, fn))
        self._seq += 1

    def schedule_in(self, dt_ns: int, fn: Callable) -> None:
        self.schedule_at(self.now_ns + dt_ns, fn)

    def run_until(self, t_ns: int) -> None:
        while self._heap and self._heap[0].at_ns <= t_ns:
            ev = heapq.heappop(self._heap)
            self.now_ns = ev.at_ns
            ev.fn()
        self.now_ns = max(self.now_ns, t_ns)

    def run_for(self, seconds: float) -> None:
        self.run_until(self.now_ns + int(round(seconds * NS_PER_SEC)))


class VirtualEndpoint:
    """One node's attachment to the virtual network."""

    def __init__(self, net: "VirtualNetwork", config: NodeConfig):
        self.net = net
        self.config = config
        self.rng = random.Random(config.delay.seed)
        self.stopped = False
        self._seq: dict[int, int] = {}
        self._last_up_ns = 0
        self._last_down_ns = 0
        _, self.subscription = net.broker.subscribe(
            config.node_id, topics=None, capacity=config.queue_capacity)

    def now_ns(self) -> int:
        return self.net.scheduler.now_ns + self.config.clock_skew_ns

    def next_seq(self, topic: int) -> int:
        s = self._seq.get(topic, 0)
        self._seq[topic] = s + 1
        return s

    def publish(self, topic: int, payload: bytes) -> Message:
        msg = Message(topic=int(topic), seq=self.next_seq(int(topic)),
                      timestamp=self.now_ns(), payload=payload)
        sched = self.net.scheduler
        arrival = sched.now_ns + self.config.delay.sample_ns(self.rng)
        arrival = max(arrival, self._last_up_ns)  # per-link FIFO
        self._last_up_ns = arrival
        sched.schedule_at(arrival, lambda: self.net.route(msg, self))
        return msg

    def deliver(self, entry_msg: Message, publisher: str, at_ns: int) -> None:
        """Schedule the broker->subscriber leg using this node's delay."""
        sched = self.net.scheduler
        t = at_ns + self.config.delay.sample_ns(self.rng)
        t = max(t, self._last_down_ns)
        self._last_down_ns = t

        def push():
            dropped_before = self.subscription.queue.dropped_count
            self.subscription.queue.push(QueueEntry(
                message=entry_msg,
                arrival_ns=self.net.scheduler.now_ns + self.config.clock_skew_ns,
                publisher=publisher))
            d = self.subscription.queue.dropped_count - dropped_before
            if d:
                self.net.broker.note_dropped(entry_msg.topic, d)

        sched.schedule_at(t, push)

    def drain(self) -> list[QueueEntry]:
        return self.subscription.queue.drain()


class VirtualNetwork:
    """Discrete-event broker fabric; deterministic given configs and seeds."""

    def __init__(self, queue_capacity: int = 1024):
        self.scheduler = VirtualScheduler()
        self.broker = Broker(queue_capacity=queue_capacity)
        self._endpoints: list[VirtualEndpoint] = []
        self._nodes: list[tuple] = []

    def add_node(self, logic, config: NodeConfig) -> NodeContext:
        ep = VirtualEndpoint(self, config)
        ep.subscription.topics = frozenset(int(t) for t in logic.subscriptions())
        self._endpoints.append(ep)
        ctx = NodeContext(ep, self)
        self._nodes.append((logic, ctx, ep))
        logic.on_start(ctx)
        return ctx

    def route(self, msg: Message, source: VirtualEndpoint) -> None:
        """Broker-arrival event: count, then fan out with downlink delays."""
        targets = self.broker.select(msg)
        for sub in targets:
            ep = self._owner(sub)
            if ep is not None and not ep.stopped:
                ep.deliver(msg, source.config.node_id, self.scheduler.now_ns)

    def _owner(self, sub: Subscription) -> VirtualEndpoint | None:
        for ep in self._endpoints:
            if ep.subscription is sub:
                return ep
        return None

    def register_timer(self, ep: VirtualEndpoint, ctx: NodeContext,
                       period_ns: int, phase_ns: int, fn: Callable) -> None:
        if period_ns <= 0:
            raise ConfigError("timer period must be > 0")
        logic = next(lg for lg, c, e in self._nodes if e is ep)
        count = [0]

        def fire():
            if ep.stopped:
                return  # stopped nodes never tick again
            for entry in ep.drain():
                logic.on_message(ctx, entry)
            fn(ctx)
            count[0] += 1
            self.scheduler.schedule_at(phase_ns + count[0] * period_ns, fire)

        self.scheduler.schedule_at(phase_ns, fire)

    def register_oneshot(self, ep: VirtualEndpoint, ctx: NodeContext,
                         at_ns: int, fn: Callable) -> None:
        self.scheduler.schedule_at(at_ns, lambda: None if ep.stopped else fn(ctx))

    def run_for(self, seconds: float) -> None:
        self.scheduler.run_for(seconds)

    @property
    def now_ns(self) -> int:
        return self.scheduler.now_ns


# ---------------------------------------------------------------------------
# wall clock

class WallClockRuntime:
    """Drives the same node logic against a real broker over TCP.

    Each node gets one thread that services its timers in deadline order;
    a reader thread (inside the TCP client) fills the subscriber queue.
    """

    def __init__(self):
        self._threads: list[threading.Thread] = []
        self._stop = threading.Event()
        self._timers: dict[int, list] = {}

    def add_node(self, logic, config: NodeConfig, endpoint) -> NodeContext:
        ctx = NodeContext(endpoint, self)
        self._timers[id(endpoint)] = []
        logic.on_start(ctx)
        timers = self._timers[id(endpoint)]

        def loop():
            start = time.time_ns()
            fires = [(start + ph, i, period, ph, fn, 1)
                     for i, (period, ph, fn) in enumerate(timers)]
            heapq.heapify(fires)
            while fires and not self._stop.is_set() and not endpoint.stopped:
                at, i, period, ph, fn, k = heapq.heappop(fires)
                delay = (at - time.time_ns()) / NS_PER_SEC
                if delay > 0 and self._stop.wait(delay):
                    break
                for entry in endpoint.drain():
                    logic.on_message(ctx, entry)
                fn(ctx)
                heapq.heappush(fires, (start + ph + k * period, i, period, ph, fn, k + 1))

        t = threading.Thread(target=loop, name=f"node-{config.node_id}", daemon=True)
        self._threads.append(t)
        t.start()
        return ctx

    def register_timer(self, ep, ctx, period_ns, phase_ns, fn):
        self._timers[id(ep)].append((period_ns, phase_ns, fn))

    def register_oneshot(self, ep, ctx, at_ns, fn):
        delay_s = max(0.0, (at_ns - time.time_ns()) / NS_PER_SEC)
        t = threading.Timer(delay_s, lambda: None if ep.stopped else fn(ctx))
        t.daemon = True
        t.start()

    def stop(self, timeout: float = 2.0) -> None:
        self._stop.set()
        for t in self._threads:
            t.join(timeout)
