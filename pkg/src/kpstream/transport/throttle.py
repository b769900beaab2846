"""Deterministic throttled channel: token bucket, fixed delay, seeded jitter/loss.

Everything is driven by caller-supplied millisecond timestamps, so the same
config + seed + submission sequence reproduces the exact same schedule whether
the clock is a wall clock or a simulation. The bucket holds `burst_bytes`
tokens refilled at rate_bps/8 bytes per second; a message departs when the
bucket holds its full size, strictly FIFO.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass

MAX_FRAME_BYTES = 408  # largest full-precision wire frame


class ChannelError(Exception):
    pass


class MessageTooLarge(ChannelError):
    """Message exceeds burst_bytes and can never depart."""


@dataclass(frozen=True)
class ChannelConfig:
    """Virtual-channel knobs. rate_bps = 0 means unlimited."""

    rate_bps: int = 0
    burst_bytes: int = MAX_FRAME_BYTES
    base_delay_ms: float = 0.0
    jitter_ms: float = 0.0
    loss_prob: float = 0.0
    seed: int = 0
    queue_frames: int = 32

    def __post_init__(self):
        if self.rate_bps < 0:
            raise ValueError("rate_bps must be >= 0")
        if self.rate_bps > 0 and self.burst_bytes < MAX_FRAME_BYTES:
            raise ValueError(
                f"burst_bytes must cover one max frame ({MAX_FRAME_BYTES}) when rate-limited"
            )
        if self.base_delay_ms < 0 or self.jitter_ms < 0:
            raise ValueError("delays must be >= 0")
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError("loss_prob must be in [0, 1]")
        if self.queue_frames < 1:
            raise ValueError("queue_frames must be >= 1")


class TokenBucket:
    """Closed-form token bucket over a millisecond timeline.

    departure(nbytes, arrival_ms) returns the instant the message may leave:
    the earliest t >= arrival at which the accrued tokens cover nbytes, with
    FIFO enforced by never letting the bucket clock run backwards.
    """

    def __init__(self, rate_bps: int, burst_bytes: int, t0_ms: float = 0.0):
        self.rate_bpms = rate_bps / 8000.0  # bytes per millisecond
        self.capacity = float(burst_bytes)
        self.tokens = float(burst_bytes)
        self.t_last = t0_ms

    def departure(self, nbytes: int, arrival_ms: float) -> float:
        if self.rate_bpms == 0:
            return arrival_ms
        if nbytes > self.capacity:
            raise MessageTooLarge(f"{nbytes} bytes exceeds burst of {self.capacity:g}")
        if self.tokens >= nbytes:
            t_ready = self.t_last
        else:
            t_ready = self.t_last + (nbytes - self.tokens) / self.rate_bpms
        depart = max(arrival_ms, t_ready)
        self.tokens = min(self.capacity, self.tokens + (depart - self.t_last) * self.rate_bpms)
        self.tokens -= nbytes
        self.t_last = depart
        return depart


@dataclass(slots=True)
class Delivery:
    delivery_ms: float
    data: bytes


class ThrottledChannel:
    """FIFO queue in front of a token bucket, with drop-oldest backpressure.

    send() enqueues at `now_ms`; poll() releases deliveries whose departure is
    due, stamping delivery = departure + base_delay +/- jitter (seeded), with
    delivery times kept monotone (the underlying transport is ordered). Lost
    messages still consume bucket capacity, as on a real link.
    """

    def __init__(self, config: ChannelConfig, t0_ms: float = 0.0):
        self.config = config
        self._bucket = TokenBucket(config.rate_bps, config.burst_bytes, t0_ms)
        self._rng = random.Random(config.seed)
        self._waiting: deque[tuple[float, bytes]] = deque()
        self._ready: deque[Delivery] = deque()
        self._last_delivery = -math.inf
        # while blocked (no remote peer yet) nothing departs; the waiting
        # queue buffers up to queue_frames with drop-oldest
        self.blocked = False
        self.sent = 0
        self.delivered = 0
        self.dropped_queue = 0
        self.dropped_loss = 0

    def send(self, data: bytes, now_ms: float) -> None:
        cfg = self.config
        if cfg.rate_bps > 0 and len(data) > cfg.burst_bytes:
            raise MessageTooLarge(
                f"{len(data)} bytes exceeds burst of {cfg.burst_bytes}"
            )
        self.sent += 1
        self._depart_due(now_ms)
        self._waiting.append((now_ms, data))
        if len(self._waiting) > cfg.queue_frames:
            self._waiting.popleft()
            self.dropped_queue += 1

    def _depart_due(self, now_ms: float) -> None:
        # Move waiting messages whose departure instant has passed into the
        # delivery schedule. Departures are computed lazily so drop-oldest
        # only ever discards messages that have not left the queue.
        cfg = self.config
        while self._waiting and not self.blocked:
            arrival, data = self._waiting[0]
            depart = self._peek_departure(len(data), arrival)
            if depart > now_ms:
                break
            self._waiting.popleft()
            self._bucket.departure(len(data), arrival)
            delivery = depart + cfg.base_delay_ms
            if cfg.jitter_ms > 0:
                delivery += self._rng.uniform(-cfg.jitter_ms, cfg.jitter_ms)
            delivery = max(delivery, self._last_delivery, depart)
            self._last_delivery = delivery
            if cfg.loss_prob > 0 and self._rng.random() < cfg.loss_prob:
                self.dropped_loss += 1
                continue
            self._ready.append(Delivery(delivery, data))

    def _peek_departure(self, nbytes: int, arrival_ms: float) -> float:
        b = self._bucket
        if b.rate_bpms == 0:
            return arrival_ms
        if b.tokens >= nbytes:
            t_ready = b.t_last
        else:
            t_ready = b.t_last + (nbytes - b.tokens) / b.rate_bpms
        return max(arrival_ms, t_ready)

    def poll(self, now_ms: float) -> list[Delivery]:
        """All deliveries due at or before now_ms, in order."""
        self._depart_due(now_ms)
        out = []
        while self._ready and self._ready[0].delivery_ms <= now_ms:
            out.append(self._ready.popleft())
        self.delivered += len(out)
        return out

    def next_event_ms(self, now_ms: float) -> float | None:
        """Earliest future instant at which poll() could yield something, or
        None when the channel is idle."""
        self._depart_due(now_ms)
        candidates = []
        if self._ready:
            candidates.append(self._ready[0].delivery_ms)
        if self._waiting and not self.blocked:
            arrival, data = self._waiting[0]
            candidates.append(
                self._peek_departure(len(data), arrival) + self.config.base_delay_ms
            )
        return min(candidates) if candidates else None

    @property
    def pending(self) -> int:
        return len(self._waiting) + len(self._ready)


def throttled_send(bucket: TokenBucket, config: ChannelConfig, nbytes: int,
                   now_ms: float, rng: random.Random | None = None) -> float | None:
    """One-shot scheduling primitive: departure through `bucket` plus the
    configured delay/jitter; None when the message is lost. Raises
    MessageTooLarge for messages that can never depart."""
    depart = bucket.departure(nbytes, now_ms)
    delivery = depart + config.base_delay_ms
    if rng is not None:
        if config.jitter_ms > 0:
            delivery += rng.uniform(-config.jitter_ms, config.jitter_ms)
        if config.loss_prob > 0 and rng.random() < config.loss_prob:
            return None
    return delivery
