import pytest
from hypothesis import given, settings, strategies as st

from clawlink.errors import InconsistentSampleError
from clawlink.proto.clocksync import (ClockRegistry, ClockSample, clock_offset,
                                      to_reference)

MS = 1_000_000


def exchange(skew_ns, d_fwd_ns, d_ret_ns, t_start=1_000_000_000, proc_ns=0):
    """Simulate one request/response: reference sends at t_start, node clock
    runs at reference + skew."""
    t0 = t_start
    t1 = (t_start + d_fwd_ns) + skew_ns
    t2 = t1 + proc_ns
    t3 = (t2 - skew_ns) + d_ret_ns
    return ClockSample(t0=t0, t1=t1, t2=t2, t3=t3)


def test_symmetric_delay_recovers_offset_exactly():
    for skew in (-50 * MS, -1, 0, 1, 7 * MS, 123456789):
        for d in (0, MS, 20 * MS):
            offset, delay = clock_offset(exchange(skew, d, d))
            assert offset == skew
            assert delay == 2 * d


def test_hand_computed_sample():
    s = ClockSample(t0=100, t1=150, t2=160, t3=120)
    offset, delay = clock_offset(s)
    assert offset == 45
    assert delay == 10


def test_asymmetry_error_bounded_by_half():
    # forward 10, return 4, zero true offset -> estimate is asymmetry/2 = 3
    offset, delay = clock_offset(exchange(0, 10, 4))
    assert offset == 3
    assert delay == 14
    for a_ms in range(1, 51):
        for skew in (0, 5 * MS, -3 * MS):
            s = exchange(skew, 20 * MS + a_ms * MS, 20 * MS)
            offset, _ = clock_offset(s)
            assert abs(offset - skew) <= a_ms * MS / 2
            s = exchange(skew, 20 * MS, 20 * MS + a_ms * MS)
            offset, _ = clock_offset(s)
            assert abs(offset - skew) <= a_ms * MS / 2


def test_negative_round_trip_is_inconsistent():
    with pytest.raises(InconsistentSampleError):
        clock_offset(ClockSample(t0=0, t1=100, t2=200, t3=50))


def test_sample_invariants_enforced():
    with pytest.raises(InconsistentSampleError):
        ClockSample(t0=10, t1=0, t2=0, t3=5)  # t3 < t0
    with pytest.raises(InconsistentSampleError):
        ClockSample(t0=0, t1=10, t2=5, t3=20)  # t2 < t1


def test_to_reference_identity_and_subtraction():
    assert to_reference(1000, 0) == 1000
    assert to_reference(1000, 45) == 955
    t, o = 123456789, -777
    assert to_reference(to_reference(t, o), -o) == t


@settings(max_examples=300)
@given(
    skew=st.integers(-10**9, 10**9),
    d_fwd=st.integers(0, 10**8),
    d_ret=st.integers(0, 10**8),
)
def test_error_bounded_by_half_asymmetry_property(skew, d_fwd, d_ret):
    offset, delay = clock_offset(exchange(skew, d_fwd, d_ret))
    assert delay == d_fwd + d_ret
    # half-asymmetry bound, +1 ns slack for truncation toward zero
    assert abs(offset - skew) <= abs(d_fwd - d_ret) / 2 + 1


def test_registry_smoothing():
    reg = ClockRegistry(smoothing=0.1)
    reg.update("phone", exchange(100 * MS, MS, MS))
    assert reg.offset_for("phone") == 100 * MS
    # a second sample with different skew moves the estimate 10% of the way
    reg.update("phone", exchange(200 * MS, MS, MS))
    assert reg.offset_for("phone") == pytest.approx(110 * MS, abs=2)
    assert reg.known_nodes() == ["phone"]
    assert reg.offset_for("unknown") == 0
