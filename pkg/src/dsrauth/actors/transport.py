"""Message transports between actors.

Both transports speak the same bytes: canonical JSON bodies on
``(method, path)`` endpoints. Each outbound call is recorded in a
:class:`Transcript` as a ``send`` event and a ``reply`` event that name the
actors by id only, so in-process and HTTP runs produce identical transcripts.
"""

from __future__ import annotations

import logging
import threading
import urllib.error
import urllib.request
from pathlib import Path
from typing import Any, Callable, Mapping, Optional, Protocol

from ..encoding import canonical_json, loads
from ..protocol.messages import ErrorReply, Message, decode, encode

log = logging.getLogger(__name__)


class TransportError(Exception):
    pass


class RemoteError(TransportError):
    def __init__(self, status: int, reply: ErrorReply):
        super().__init__(f"{status} {reply.error}: {reply.detail}")
        self.status = status
        self.reply = reply


class Handler(Protocol):
    def handle(self, method: str, path: str, body: bytes) -> tuple[int, bytes]: ...


class Transcript:
    """Ordered event log; one JSON object per line when written out."""

    def __init__(self) -> None:
        self.events: list[dict] = []
        self._lock = threading.Lock()
        self.listeners: list[Callable[[dict], None]] = []

    def record(self, event: Mapping[str, Any]) -> None:
        with self._lock:
            e = {"seq": len(self.events), **event}
            self.events.append(e)
        for fn in self.listeners:
            fn(e)

    def lines(self) -> bytes:
        return b"".join(canonical_json(e) + b"\n" for e in self.events)

    def write(self, path: str | Path) -> None:
        Path(path).write_bytes(self.lines())

    @staticmethod
    def read(path: str | Path) -> list[dict]:
        return [loads(line) for line in Path(path).read_bytes().splitlines() if line.strip()]


class Transport:
    def __init__(self, transcript: Optional[Transcript] = None):
        self.transcript = transcript if transcript is not None else Transcript()
        self._channels: dict[str, str] = {}
        self.channel_relay: Optional[str] = None

    # reply channels: ephemeral tokens the SP uses to reach an anonymous requester

    def bind_channel(self, token: str, actor_id: str) -> None:
        self._channels[token] = actor_id

    def release_channel(self, token: str) -> None:
        self._channels.pop(token, None)

    def resolve_channel(self, token: str) -> str:
        actor = self._channels.get(token, self.channel_relay)
        if actor is None:
            raise TransportError("unknown reply channel")
        return actor

    def _deliver(self, dst: str, method: str, path: str, body: bytes) -> tuple[int, bytes]:
        raise NotImplementedError

    def call(self, src: str, dst: str, method: str, path: str, msg: Optional[Message] = None) -> Optional[Message]:
        body = encode(msg) if msg is not None else b""
        self.transcript.record({
            "event": "send", "from": src, "to": dst, "method": method, "path": path,
            "body": msg.to_wire() if msg is not None else None,
        })
        status, raw = self._deliver(dst, method, path, body)
        reply = decode(raw) if raw else None
        self.transcript.record({
            "event": "reply", "from": dst, "to": src, "method": method, "path": path, "status": status,
            "body": reply.to_wire() if reply is not None else None,
        })
        if status >= 400:
            raise RemoteError(status, reply if isinstance(reply, ErrorReply) else ErrorReply("Transport", str(status)))
        return reply


class InProcessTransport(Transport):
    def __init__(self, transcript: Optional[Transcript] = None):
        super().__init__(transcript)
        self.actors: dict[str, Handler] = {}

    def attach(self, actor_id: str, handler: Handler) -> None:
        self.actors[actor_id] = handler

    def _deliver(self, dst: str, method: str, path: str, body: bytes) -> tuple[int, bytes]:
        handler = self.actors.get(dst)
        if handler is None:
            raise TransportError(f"no route to {dst}")
        return handler.handle(method, path, body)


class HttpTransport(Transport):
    def __init__(self, peers: Mapping[str, str], transcript: Optional[Transcript] = None, timeout: float = 30.0):
        super().__init__(transcript)
        self.peers = dict(peers)
        self.timeout = timeout

    def _deliver(self, dst: str, method: str, path: str, body: bytes) -> tuple[int, bytes]:
        base = self.peers.get(dst)
        if base is None:
            raise TransportError(f"no route to {dst}")
        req = urllib.request.Request(
            base.rstrip("/") + path,
            data=body if method == "POST" else None,
            method=method,
            headers={"Content-Type": "application/json"},
        )
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return resp.status, resp.read()
        except urllib.error.HTTPError as exc:
            return exc.code, exc.read()
        except (urllib.error.URLError, OSError) as exc:
            raise TransportError(f"{dst} unreachable: {exc}") from exc
