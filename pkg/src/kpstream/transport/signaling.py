"""WebSocket signaling and relay server.

Control messages are text frames, one JSON object each, with fields exactly
{"type","room","peer","ts_ms"} plus optional "peers" / "error". Data frames
are binary: a 1-byte sender-id length, the sender id (utf-8), then the opaque
payload; the server stamps the true sender and fans the frame out to every
other member of the room. A join with an already-registered peer id evicts
the older registration (the evicted connection gets the error), so clients
can reconnect after a drop.
"""

from __future__ import annotations

import asyncio
import http
import json
import logging
import mimetypes
import time
from pathlib import Path

from websockets.asyncio.server import serve

log = logging.getLogger("kpstream.signaling")

CONTROL_TYPES = {"join", "joined", "peer-list", "leave", "data", "ping", "pong", "error"}


def clock_ms() -> float:
    return time.monotonic_ns() / 1e6


def control(type_: str, room: str, peer: str, ts_ms: float,
            peers: list[str] | None = None, error: str | None = None) -> str:
    msg: dict = {"type": type_, "room": room, "peer": peer, "ts_ms": ts_ms}
    if peers is not None:
        msg["peers"] = peers
    if error is not None:
        msg["error"] = error
    return json.dumps(msg, sort_keys=True)


def pack_data(peer: str, payload: bytes) -> bytes:
    raw = peer.encode("utf-8")
    if len(raw) > 255:
        raise ValueError("peer id longer than 255 bytes")
    return bytes([len(raw)]) + raw + payload


def unpack_data(data: bytes) -> tuple[str, bytes]:
    if not data:
        raise ValueError("empty data frame")
    n = data[0]
    if len(data) < 1 + n:
        raise ValueError("truncated data envelope")
    return data[1:1 + n].decode("utf-8"), data[1 + n:]


class SignalingServer:
    """Room-scoped relay. One asyncio task per connection; membership is
    mutated only between awaits, so updates are atomic."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0,
                 max_peers: int | None = None, static_dir: str | None = None):
        self.host = host
        self.port = port
        self.max_peers = max_peers
        self.static_dir = Path(static_dir).resolve() if static_dir else None
        self.rooms: dict[str, dict[str, object]] = {}
        self._server = None

    async def start(self) -> None:
        self._server = await serve(
            self._handler, self.host, self.port,
            process_request=self._maybe_serve_static if self.static_dir else None,
        )
        self.port = self._server.sockets[0].getsockname()[1]
        log.info("signaling server listening on %s:%d", self.host, self.port)

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()
            self._server = None

    async def serve_forever(self) -> None:
        await self._server.serve_forever()

    def _maybe_serve_static(self, connection, request):
        # Plain GETs (no websocket upgrade) serve files under static_dir so
        # the browser client and puppet specs can be fetched from this port.
        if "Upgrade" in request.headers:
            return None
        path = request.path.split("?", 1)[0]
        if path == "/":
            path = "/index.html"
        target = (self.static_dir / path.lstrip("/")).resolve()
        if not str(target).startswith(str(self.static_dir)) or not target.is_file():
            return connection.respond(http.HTTPStatus.NOT_FOUND, "not found\n")
        ctype = mimetypes.guess_type(str(target))[0] or "application/octet-stream"
        response = connection.respond(http.HTTPStatus.OK, "")
        response.body = target.read_bytes()
        response.headers["Content-Type"] = ctype
        response.headers["Content-Length"] = str(len(response.body))
        return response

    async def _send_error(self, ws, room: str, peer: str, text: str) -> None:
        try:
            await ws.send(control("error", room, peer, clock_ms(), error=text))
        except Exception:
            pass

    async def _broadcast_peer_list(self, room: str) -> None:
        members = self.rooms.get(room)
        if not members:
            return
        msg = control("peer-list", room, "", clock_ms(), peers=sorted(members))
        await asyncio.gather(
            *(ws.send(msg) for ws in list(members.values())), return_exceptions=True
        )

    def _unregister(self, room: str, peer: str, ws) -> bool:
        members = self.rooms.get(room)
        if members is None or members.get(peer) is not ws:
            return False
        del members[peer]
        if not members:
            del self.rooms[room]
        return True

    async def _handler(self, ws) -> None:
        room = peer = None
        try:
            async for message in ws:
                if isinstance(message, bytes):
                    await self._handle_data(ws, room, peer, message)
                    continue
                try:
                    msg = json.loads(message)
                    mtype = msg["type"]
                    mroom = str(msg["room"])
                    mpeer = str(msg["peer"])
                except (ValueError, KeyError, TypeError):
                    await self._send_error(ws, room or "", peer or "", "malformed control message")
                    continue

                if mtype == "join":
                    joined = await self._handle_join(ws, mroom, mpeer)
                    if joined:
                        room, peer = mroom, mpeer
                elif mtype == "ping":
                    await ws.send(control("pong", mroom, mpeer, clock_ms()))
                elif mtype == "leave":
                    if self._unregister(mroom, mpeer, ws):
                        log.info("peer %s left room %s", mpeer, mroom)
                        room = peer = None
                        await self._broadcast_peer_list(mroom)
                else:
                    await self._send_error(ws, mroom, mpeer, f"unexpected message type {mtype!r}")
        finally:
            if room is not None and self._unregister(room, peer, ws):
                log.info("peer %s disconnected from room %s", peer, room)
                await self._broadcast_peer_list(room)

    async def _handle_join(self, ws, room: str, peer: str) -> bool:
        if not room or not peer:
            await self._send_error(ws, room, peer, "join requires room and peer ids")
            return False
        members = self.rooms.setdefault(room, {})
        if self.max_peers is not None and peer not in members and len(members) >= self.max_peers:
            await self._send_error(ws, room, peer, "room full")
            if not members:
                del self.rooms[room]
            return False
        old = members.get(peer)
        if old is not None and old is not ws:
            # Older registration loses: it gets the error and the closed
            # connection; the fresh join takes over the peer id.
            members.pop(peer)
            await self._send_error(old, room, peer, "peer id re-registered; evicted")
            await old.close()
            log.info("evicted stale registration for %s in room %s", peer, room)
        members[peer] = ws
        log.info("peer %s joined room %s (%d member(s))", peer, room, len(members))
        await ws.send(control("joined", room, peer, clock_ms()))
        await self._broadcast_peer_list(room)
        return True

    async def _handle_data(self, ws, room: str | None, peer: str | None,
                           message: bytes) -> None:
        if room is None:
            await self._send_error(ws, "", "", "data before join")
            return
        try:
            _, payload = unpack_data(message)
        except ValueError as exc:
            await self._send_error(ws, room, peer, f"bad data envelope: {exc}")
            return
        members = self.rooms.get(room, {})
        out = pack_data(peer, payload)
        targets = [c for p, c in members.items() if p != peer]
        if targets:
            await asyncio.gather(*(c.send(out) for c in targets), return_exceptions=True)


async def signal_serve(bind: str, max_peers: int | None = None,
                       static_dir: str | None = None) -> SignalingServer:
    """Start a server on 'host:port' and return it running."""
    host, _, port = bind.rpartition(":")
    server = SignalingServer(host or "127.0.0.1", int(port), max_peers=max_peers,
                             static_dir=static_dir)
    await server.start()
    return server
