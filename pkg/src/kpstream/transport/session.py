"""Peer session over the relay: throttled sending, in-order receive, clock offset.

A session joins one room and exchanges binary keypoint frames with the other
members. Outbound frames pass through a ThrottledChannel (the virtual
constrained link); inbound frames are delivered in-order per sender by
sequence number, wrapping-aware, with stale arrivals counted and dropped.
"""

from __future__ import annotations

import asyncio
import json
import statistics
from dataclasses import dataclass

import websockets
from websockets.asyncio.client import connect as ws_connect

from .signaling import clock_ms, control, pack_data, unpack_data
from .throttle import ChannelConfig, ThrottledChannel

SEQ_HALF = 32768


class SessionError(Exception):
    pass


class ConnectError(SessionError):
    def __init__(self, message: str, retry_advised: bool = True):
        super().__init__(message)
        self.retry_advised = retry_advised


def seq_newer(a: int, b: int) -> bool:
    """True when u16 sequence a is newer than b under wrap-around."""
    return 0 < ((a - b) & 0xFFFF) < SEQ_HALF


@dataclass(slots=True)
class OffsetEstimate:
    offset_ms: float      # remote clock minus local clock
    samples: int
    requested: int


class PeerSession:
    """One joined peer. Drive send_frame/recv_frame from at most one sender
    and one receiver task each."""

    def __init__(self, ws, room: str, peer_id: str, channel_config: ChannelConfig):
        self._ws = ws
        self.room = room
        self.peer_id = peer_id
        self.peers: set[str] = set()
        self.clock_offset_ms = 0.0
        self.dropped_stale = 0
        self.received = 0
        self._last_seq: dict[str, int] = {}
        self._incoming: asyncio.Queue[tuple[str, bytes]] = asyncio.Queue()
        self._pending_pongs: asyncio.Queue[asyncio.Future] = None  # set in start
        self._channel = ThrottledChannel(channel_config)
        self._channel.blocked = True  # nothing departs until a peer exists
        self._send_kick = asyncio.Event()
        self._peer_kick = asyncio.Event()
        self._closed = asyncio.Event()
        self._tasks: list[asyncio.Task] = []

    @classmethod
    async def connect(cls, url: str, room: str, peer_id: str,
                      channel_config: ChannelConfig | None = None,
                      open_timeout: float = 5.0) -> "PeerSession":
        try:
            ws = await ws_connect(url, open_timeout=open_timeout)
        except (OSError, asyncio.TimeoutError, websockets.exceptions.WebSocketException) as exc:
            raise ConnectError(f"cannot reach signaling server at {url}: {exc}") from exc
        await ws.send(control("join", room, peer_id, clock_ms()))
        backlog = []  # messages racing ahead of the join confirmation
        while True:
            try:
                raw = await asyncio.wait_for(ws.recv(), open_timeout)
            except (asyncio.TimeoutError, websockets.exceptions.ConnectionClosed) as exc:
                raise ConnectError(f"no join confirmation from {url}: {exc}") from exc
            if isinstance(raw, bytes):
                backlog.append(raw)
                continue
            msg = json.loads(raw)
            if msg.get("type") == "joined":
                break
            if msg.get("type") == "error":
                raise ConnectError(f"join rejected: {msg.get('error')}", retry_advised=False)
            backlog.append(raw)
        session = cls(ws, room, peer_id, channel_config or ChannelConfig())
        session._start()
        for raw in backlog:
            if isinstance(raw, bytes):
                session._on_data(raw)
            else:
                session._handle_control(raw)
        return session

    def _start(self) -> None:
        self._pending_pongs = asyncio.Queue()
        self._tasks = [
            asyncio.ensure_future(self._recv_loop()),
            asyncio.ensure_future(self._send_loop()),
        ]

    async def _recv_loop(self) -> None:
        try:
            async for message in self._ws:
                if isinstance(message, bytes):
                    self._on_data(message)
                else:
                    self._handle_control(message)
        except websockets.exceptions.ConnectionClosed:
            pass
        finally:
            self._closed.set()
            self._send_kick.set()

    def _handle_control(self, message: str) -> None:
        try:
            msg = json.loads(message)
        except ValueError:
            return
        mtype = msg.get("type")
        if mtype == "peer-list":
            self.peers = set(msg.get("peers", [])) - {self.peer_id}
            self._channel.blocked = not self.peers
            self._peer_kick.set()
            self._send_kick.set()
        elif mtype == "pong":
            if not self._pending_pongs.empty():
                fut = self._pending_pongs.get_nowait()
                if not fut.done():
                    fut.set_result((msg.get("ts_ms", 0.0), clock_ms()))

    def _on_data(self, message: bytes) -> None:
        try:
            sender, payload = unpack_data(message)
        except ValueError:
            return
        if len(payload) >= 4:
            seq = int.from_bytes(payload[2:4], "big")
            last = self._last_seq.get(sender)
            if last is not None and not seq_newer(seq, last):
                self.dropped_stale += 1
                return
            self._last_seq[sender] = seq
        self.received += 1
        self._incoming.put_nowait((sender, payload))

    async def _send_loop(self) -> None:
        # Frames wait in the throttled channel until at least one remote peer
        # exists, then ship at their scheduled delivery instants.
        while not self._closed.is_set():
            now = clock_ms()
            for d in self._channel.poll(now):
                try:
                    await self._ws.send(pack_data(self.peer_id, d.data))
                except websockets.exceptions.ConnectionClosed:
                    return
            nxt = self._channel.next_event_ms(now)
            self._send_kick.clear()
            if nxt is None:
                await self._send_kick.wait()
            else:
                delay = max(0.0, nxt - clock_ms()) / 1000.0
                try:
                    await asyncio.wait_for(self._send_kick.wait(), timeout=delay)
                except asyncio.TimeoutError:
                    pass

    async def send_frame(self, data: bytes) -> None:
        if self._closed.is_set():
            raise SessionError("session closed")
        self._channel.send(data, clock_ms())
        self._send_kick.set()

    async def recv_frame(self, timeout: float | None = None) -> tuple[str, bytes]:
        """Next (sender, frame bytes); raises asyncio.TimeoutError on timeout."""
        if timeout is None:
            return await self._incoming.get()
        return await asyncio.wait_for(self._incoming.get(), timeout)

    async def wait_for_peer(self, timeout: float | None = None) -> set[str]:
        while not self.peers:
            self._peer_kick.clear()
            await asyncio.wait_for(self._peer_kick.wait(), timeout)
        return self.peers

    async def estimate_clock_offset(self, n_pings: int = 10,
                                    timeout: float = 1.0) -> OffsetEstimate:
        """Median of per-ping offsets remote_ts - (t_send + t_recv)/2.

        Assumes symmetric one-way delays; with asymmetric paths d_out != d_back
        the estimate is biased by (d_out - d_back)/2.
        """
        if n_pings < 1:
            raise ValueError("n_pings must be >= 1")
        offsets = []
        for _ in range(n_pings):
            fut = asyncio.get_event_loop().create_future()
            await self._pending_pongs.put(fut)
            t_send = clock_ms()
            await self._ws.send(control("ping", self.room, self.peer_id, t_send))
            try:
                remote_ts, t_recv = await asyncio.wait_for(fut, timeout)
            except asyncio.TimeoutError:
                continue
            offsets.append(remote_ts - (t_send + t_recv) / 2.0)
        if not offsets:
            raise SessionError(f"no pong responses to {n_pings} pings")
        est = OffsetEstimate(statistics.median(offsets), len(offsets), n_pings)
        self.clock_offset_ms = est.offset_ms
        return est

    @property
    def send_channel(self) -> ThrottledChannel:
        return self._channel

    async def close(self) -> None:
        self._closed.set()
        self._send_kick.set()
        try:
            await self._ws.send(control("leave", self.room, self.peer_id, clock_ms()))
        except Exception:
            pass
        await self._ws.close()
        for t in self._tasks:
            t.cancel()
        for t in self._tasks:
            try:
                await t
            except (asyncio.CancelledError, Exception):
                pass
