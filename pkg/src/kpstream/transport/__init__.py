from .throttle import (
    MAX_FRAME_BYTES,
    ChannelConfig,
    ChannelError,
    MessageTooLarge,
    ThrottledChannel,
    TokenBucket,
    throttled_send,
)
from .signaling import SignalingServer, clock_ms, control, pack_data, signal_serve, unpack_data
from .session import ConnectError, OffsetEstimate, PeerSession, SessionError, seq_newer

__all__ = [
    "MAX_FRAME_BYTES",
    "ChannelConfig",
    "ChannelError",
    "MessageTooLarge",
    "ThrottledChannel",
    "TokenBucket",
    "throttled_send",
    "SignalingServer",
    "clock_ms",
    "control",
    "pack_data",
    "signal_serve",
    "unpack_data",
    "ConnectError",
    "OffsetEstimate",
    "PeerSession",
    "SessionError",
    "seq_newer",
]
