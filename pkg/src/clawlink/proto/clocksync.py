"""Clock-offset estimation between node clocks and the reference clock.

The reference side (broker host) plays the request role: it stamps t0 at
send and t3 at receive; the node echoes t1 (receive) and t2 (reply) in its
own clock.  The returned offset is (node clock - reference clock), so
rebasing a publisher timestamp into the reference domain is a subtraction.

For path delays d_fwd/d_ret and true skew s the estimate is
s + (d_fwd - d_ret)/2: exact under symmetric delays, and off by at most half
the asymmetry in general.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import InconsistentSampleError, RangeError

_I64_MIN, _I64_MAX = -(2**63), 2**63 - 1

SMOOTHING = 0.1  # exponential smoothing factor for repeated samples


@dataclass(frozen=True)
class ClockSample:
    """One request/response exchange: client send, server receive,
    server send, client receive."""

    t0: int
    t1: int
    t2: int
    t3: int

    def __post_init__(self):
        if self.t3 < self.t0:
            raise InconsistentSampleError("t3 < t0 in client clock")
        if self.t2 < self.t1:
            raise InconsistentSampleError("t2 < t1 in server clock")


def clock_offset(s: ClockSample) -> tuple[int, int]:
    """Return (offset, round_trip_delay) in nanoseconds.

    offset = ((t1 - t0) + (t2 - t3)) / 2, rounded toward zero.
    delay = (t3 - t0) - (t2 - t1); negative delay means the sample is
    inconsistent and raises.
    """
    delay = (s.t3 - s.t0) - (s.t2 - s.t1)
    if delay < 0:
        raise InconsistentSampleError(f"negative round-trip delay {delay}")
    num = (s.t1 - s.t0) + (s.t2 - s.t3)
    offset = -((-num) // 2) if num < 0 else num // 2  # truncate toward zero
    return offset, delay


def to_reference(t: int, offset: int) -> int:
    """Rebase a publisher-clock timestamp into the reference domain."""
    r = t - offset
    if not _I64_MIN <= r <= _I64_MAX:
        raise RangeError(f"rebased timestamp {r} overflows i64")
    return r


@dataclass
class OffsetEstimate:
    offset_ns: float
    delay_ns: int
    samples: int


class ClockRegistry:
    """Per-node smoothed offsets; the aligner and teleop read from here."""

    def __init__(self, smoothing: float = SMOOTHING):
        self.smoothing = smoothing
        self._estimates: dict[str, OffsetEstimate] = {}

    def update(self, node_id: str, sample: ClockSample) -> OffsetEstimate:
        offset, delay = clock_offset(sample)
        est = self._estimates.get(node_id)
        if est is None:
            est = OffsetEstimate(offset_ns=float(offset), delay_ns=delay, samples=1)
        else:
            est.offset_ns += self.smoothing * (offset - est.offset_ns)
            est.delay_ns = delay
            est.samples += 1
        self._estimates[node_id] = est
        return est

    def offset_for(self, node_id: str) -> int:
        est = self._estimates.get(node_id)
        return 0 if est is None else int(round(est.offset_ns))

    def known_nodes(self) -> list[str]:
        return sorted(self._estimates)
