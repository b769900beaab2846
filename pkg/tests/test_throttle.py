import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kpstream.transport.throttle import (
    ChannelConfig,
    MessageTooLarge,
    ThrottledChannel,
    TokenBucket,
    throttled_send,
)

FRAME = 408


def oracle_departures(rate_bps, burst, arrivals, step_ms=0.125):
    """Independent discrete-time token-bucket simulation. arrivals is a list
    of (t_ms, nbytes) sorted by time; returns departure times."""
    rate = rate_bps / 8000.0  # bytes per ms
    tokens = float(burst)
    queue = []
    out = []
    i = 0
    t = 0.0
    horizon = arrivals[-1][0] + (max(n for _, n in arrivals) / rate if rate else 0) * (
        len(arrivals) + 1) + 10
    while len(out) < len(arrivals) and t <= horizon:
        while i < len(arrivals) and arrivals[i][0] <= t:
            queue.append(arrivals[i][1])
            i += 1
        while queue and tokens >= queue[0]:
            tokens -= queue.pop(0)
            out.append(t)
        tokens = min(float(burst), tokens + rate * step_ms)
        t += step_ms
    return out


class TestTokenBucket:
    def test_unlimited_departs_immediately(self):
        b = TokenBucket(0, FRAME)
        assert b.departure(FRAME, 123.0) == 123.0

    def test_full_bucket_departs_immediately(self):
        b = TokenBucket(35000, FRAME)
        assert b.departure(FRAME, 0.0) == 0.0

    def test_refill_matches_rate(self):
        # burst 408 B, rate 3264 bps = 408 B/s: one frame per second rides free
        b = TokenBucket(3264, FRAME)
        for k in range(5):
            assert b.departure(FRAME, k * 1000.0) == pytest.approx(k * 1000.0)

    def test_backlog_spacing_equals_service_time(self):
        # all frames arrive at t=0; spacing must be size/rate after the burst
        b = TokenBucket(35000, FRAME)
        rate = 35000 / 8000.0
        d = [b.departure(FRAME, 0.0) for _ in range(4)]
        assert d[0] == 0.0
        for k in range(1, 4):
            assert d[k] == pytest.approx(k * FRAME / rate, rel=1e-9)

    def test_oversize_rejected(self):
        b = TokenBucket(1000, 500)
        with pytest.raises(MessageTooLarge):
            b.departure(501, 0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(1000, 200000), st.lists(
        st.tuples(st.floats(0, 50), st.integers(1, FRAME)),
        min_size=1, max_size=25))
    def test_against_discrete_simulation(self, rate_bps, raw):
        burst = FRAME
        arrivals = []
        t = 0.0
        for gap, size in raw:
            t += gap
            arrivals.append((t, size))
        b = TokenBucket(rate_bps, burst)
        got = [b.departure(n, at) for at, n in arrivals]
        step = 1 / 64
        want = oracle_departures(rate_bps, burst, arrivals, step_ms=step)
        assert len(got) == len(want)
        for k, (g, w) in enumerate(zip(got, want)):
            # the simulation can serve up to one step late per queued message
            assert abs(g - w) <= (k + 1) * step + 1e-6

    @settings(max_examples=60, deadline=None)
    @given(st.integers(8000, 100000),
           st.lists(st.floats(0, 30), min_size=5, max_size=40))
    def test_rate_never_exceeded_over_window(self, rate_bps, gaps):
        burst = FRAME
        b = TokenBucket(rate_bps, burst)
        t = 0.0
        deps = []
        for gap in gaps:
            t += gap
            deps.append((b.departure(FRAME, t), FRAME))
        rate = rate_bps / 8000.0
        w_ms = burst * 8 / rate_bps * 1000.0 * 2  # W >= burst/rate
        for start, _ in deps:
            in_window = sum(n for d, n in deps if start < d <= start + w_ms)
            assert in_window <= burst + rate * w_ms + 1e-6


class TestThrottledChannel:
    def test_unlimited_delivery_time(self):
        cfg = ChannelConfig(rate_bps=0, base_delay_ms=20.0)
        ch = ThrottledChannel(cfg)
        ch.send(b"x" * FRAME, 100.0)
        out = ch.poll(1000.0)
        assert len(out) == 1 and out[0].delivery_ms == 120.0

    def test_jitter_bounded_and_seeded(self):
        cfg = ChannelConfig(rate_bps=0, base_delay_ms=20.0, jitter_ms=5.0, seed=7)
        a = ThrottledChannel(cfg)
        b = ThrottledChannel(cfg)
        times_a, times_b = [], []
        for k in range(50):
            a.send(b"x", k * 100.0)
            b.send(b"x", k * 100.0)
        for d in a.poll(1e9):
            times_a.append(d.delivery_ms)
        for d in b.poll(1e9):
            times_b.append(d.delivery_ms)
        assert times_a == times_b  # byte-for-byte reproducible
        for k, t in enumerate(times_a):
            assert t >= k * 100.0 + 15.0 - 1e-9
        # ordered link: delivery times are monotone even with jitter
        assert times_a == sorted(times_a)

    def test_loss_prob_one_delivers_nothing(self):
        cfg = ChannelConfig(rate_bps=0, loss_prob=1.0, seed=3)
        ch = ThrottledChannel(cfg)
        for k in range(10):
            ch.send(b"x" * FRAME, float(k))
        assert ch.poll(1e9) == []
        assert ch.dropped_loss == 10

    def test_loss_reproducible(self):
        cfg = ChannelConfig(rate_bps=0, loss_prob=0.5, seed=42)
        outs = []
        for _ in range(2):
            ch = ThrottledChannel(cfg)
            for k in range(100):
                ch.send(bytes([k % 256]), float(k))
            outs.append([d.data for d in ch.poll(1e9)])
        assert outs[0] == outs[1]
        assert 0 < len(outs[0]) < 100

    def test_queue_cap_drops_oldest(self):
        cfg = ChannelConfig(rate_bps=1000, burst_bytes=FRAME, queue_frames=4)
        ch = ThrottledChannel(cfg)
        for k in range(10):
            ch.send(bytes([k]) * FRAME, 0.0)
        # head departed on the initial burst; of the 9 queued, the oldest 5
        # were pushed out to keep the 4 freshest
        assert ch.dropped_queue == 5
        kept = [d.data[0] for d in ch.poll(1e12)]
        assert kept == [0, 6, 7, 8, 9]

    def test_throughput_at_35kbps(self):
        # offered: 408-byte frames at 20 fps = 65280 bps; cap 35000 bps
        cfg = ChannelConfig(rate_bps=35000, burst_bytes=FRAME, queue_frames=32)
        ch = ThrottledChannel(cfg)
        deliveries = []
        horizon = 20000.0
        t = 0.0
        while t < horizon:
            ch.send(b"x" * FRAME, t)
            deliveries += ch.poll(t)
            t += 50.0
        deliveries += [d for d in ch.poll(horizon)]
        fps = len(deliveries) / (horizon / 1000.0)
        assert fps == pytest.approx(35000 / (FRAME * 8), abs=0.3)
        # every 5s window stays within 2% of the cap
        times = [d.delivery_ms for d in deliveries]
        for start in range(0, int(horizon) - 5000, 500):
            bits = sum(FRAME * 8 for x in times if start < x <= start + 5000)
            assert bits <= 35000 * 5 * 1.02

    def test_oversize_send_rejected(self):
        cfg = ChannelConfig(rate_bps=1000, burst_bytes=FRAME)
        ch = ThrottledChannel(cfg)
        with pytest.raises(MessageTooLarge):
            ch.send(b"x" * (FRAME + 1), 0.0)

    def test_next_event_reports_pending_delivery(self):
        cfg = ChannelConfig(rate_bps=0, base_delay_ms=30.0)
        ch = ThrottledChannel(cfg)
        assert ch.next_event_ms(0.0) is None
        ch.send(b"x", 10.0)
        assert ch.next_event_ms(10.0) == 40.0


class TestThrottledSendOp:
    def test_schedule_plus_delay(self):
        cfg = ChannelConfig(rate_bps=3264, burst_bytes=FRAME, base_delay_ms=5.0)
        bucket = TokenBucket(cfg.rate_bps, cfg.burst_bytes)
        assert throttled_send(bucket, cfg, FRAME, 0.0) == 5.0
        # bucket now empty; second frame waits a full service time
        assert throttled_send(bucket, cfg, FRAME, 0.0) == pytest.approx(
            FRAME / (3264 / 8000.0) + 5.0)

    def test_loss_returns_none(self):
        cfg = ChannelConfig(rate_bps=0, loss_prob=1.0)
        bucket = TokenBucket(0, FRAME)
        assert throttled_send(bucket, cfg, FRAME, 0.0, random.Random(1)) is None


class TestConfigValidation:
    def test_burst_must_cover_max_frame(self):
        with pytest.raises(ValueError):
            ChannelConfig(rate_bps=1000, burst_bytes=100)

    def test_unlimited_allows_small_burst(self):
        ChannelConfig(rate_bps=0, burst_bytes=0)

    def test_loss_prob_range(self):
        ChannelConfig(loss_prob=1.0)  # closed upper end is allowed
        with pytest.raises(ValueError):
            ChannelConfig(loss_prob=1.5)
        with pytest.raises(ValueError):
            ChannelConfig(loss_prob=-0.1)
