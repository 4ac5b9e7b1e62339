"""Message transports: framed TCP streams and an in-process pair for tests.

A transport carries whole protocol messages; framing and the codec live in
the protocol module. recv() returns None when the peer is gone. One reader
and one writer may use a transport concurrently.
"""

from __future__ import annotations

import asyncio
from typing import Optional

from .protocol import FrameAssembler, Message, encode


class TransportClosed(ConnectionError):
    pass


class StreamTransport:
    """Protocol messages over an asyncio byte stream."""

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter, name: str = ""):
        self._reader = reader
        self._writer = writer
        self._assembler = FrameAssembler()
        self._pending: list[Message] = []
        self._closed = False
        self.name = name or str(writer.get_extra_info("peername"))

    async def send(self, m: Message) -> None:
        await self.send_bytes(encode(m))

    async def send_bytes(self, data: bytes) -> None:
        if self._closed:
            raise TransportClosed(f"transport {self.name} is closed")
        self._writer.write(data)
        await self._writer.drain()

    async def recv(self) -> Optional[Message]:
        while not self._pending:
            if self._closed:
                return None
            chunk = await self._reader.read(65536)
            if not chunk:
                return None
            self._pending.extend(self._assembler.feed(chunk))
        return self._pending.pop(0)

    async def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._writer.close()
            await self._writer.wait_closed()
        except (ConnectionError, BrokenPipeError):
            pass

    @property
    def closed(self) -> bool:
        return self._closed


async def connect_tcp(host: str, port: int, name: str = "") -> StreamTransport:
    reader, writer = await asyncio.open_connection(host, port)
    return StreamTransport(reader, writer, name or f"{host}:{port}")


class LocalTransport:
    """One end of an in-process message pipe (for tests and loopback probes)."""

    def __init__(self, inbox: asyncio.Queue, outbox: asyncio.Queue, name: str):
        self._inbox = inbox
        self._outbox = outbox
        self._closed = False
        self.name = name

    @staticmethod
    def pair(name_a: str = "a", name_b: str = "b") -> tuple["LocalTransport", "LocalTransport"]:
        q_ab: asyncio.Queue = asyncio.Queue()
        q_ba: asyncio.Queue = asyncio.Queue()
        return LocalTransport(q_ba, q_ab, name_a), LocalTransport(q_ab, q_ba, name_b)

    async def send(self, m: Message) -> None:
        if self._closed:
            raise TransportClosed(f"transport {self.name} is closed")
        await self._outbox.put(m)

    async def recv(self) -> Optional[Message]:
        if self._closed:
            return None
        m = await self._inbox.get()
        if m is None:
            self._closed = True
            return None
        return m

    async def close(self) -> None:
        if not self._closed:
            self._closed = True
            await self._outbox.put(None)

    @property
    def closed(self) -> bool:
        return self._closed
