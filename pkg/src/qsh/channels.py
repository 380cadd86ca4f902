"""Frame channels: an in-memory pair for tests and a TCP transport.

Both deliver whole frames in order.  ``recv`` blocks up to a timeout
(default 5 s) and failures map to three error kinds: timeout, peer-closed,
io-error.  The TCP reader consumes exactly one header and then exactly the
declared payload length, so a bad length can never desynchronize beyond
the current frame.
"""

from __future__ import annotations

import queue
import socket

from .errors import TransportError
from .frames import HEADER_LEN, Frame, decode_header, frame_decode, frame_encode

DEFAULT_TIMEOUT = 5.0
DEFAULT_PORT = 7411


class ChannelTimeout(TransportError):
    pass


class ChannelClosed(TransportError):
    pass


class ChannelIoError(TransportError):
    pass


class Channel:
    def send(self, frame: Frame) -> None:
        raise NotImplementedError

    def recv(self, timeout: float = DEFAULT_TIMEOUT) -> Frame:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError

    def __enter__(self) -> "Channel":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


_CLOSED = object()


class MemoryChannel(Channel):
    """One endpoint of an in-process pair; see :func:`memory_pair`."""

    def __init__(self) -> None:
        self._inbox: queue.Queue = queue.Queue()
        self._peer: "MemoryChannel | None" = None
        self._closed = False

    def send(self, frame: Frame) -> None:
        if self._closed:
            raise ChannelClosed("send on closed channel")
        peer = self._peer
        if peer is None or peer._closed:
            raise ChannelClosed("peer endpoint is closed")
        frame_encode(frame)  # enforce wire invariants even in memory
        peer._inbox.put(frame)

    def recv(self, timeout: float = DEFAULT_TIMEOUT) -> Frame:
        if self._closed:
            raise ChannelClosed("recv on closed channel")
        try:
            item = self._inbox.get(timeout=timeout)
        except queue.Empty:
            raise ChannelTimeout(f"no frame within {timeout} s") from None
        if item is _CLOSED:
            # propagate so later receivers see the close too
            self._inbox.put(_CLOSED)
            raise ChannelClosed("peer closed the channel")
        return item

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        peer = self._peer
        if peer is not None:
            peer._inbox.put(_CLOSED)


def memory_pair() -> tuple[MemoryChannel, MemoryChannel]:
    a, b = MemoryChannel(), MemoryChannel()
    a._peer, b._peer = b, a
    return a, b


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket) -> None:
        self._sock = sock
        self._closed = False

    def send(self, frame: Frame) -> None:
        data = frame_encode(frame)
        try:
            self._sock.sendall(data)
        except (BrokenPipeError, ConnectionResetError) as exc:
            raise ChannelClosed(str(exc)) from exc
        except OSError as exc:
            raise ChannelIoError(str(exc)) from exc

    def _read_exact(self, count: int, what: str) -> bytes:
        buf = bytearray()
        while len(buf) < count:
            try:
                chunk = self._sock.recv(count - len(buf))
            except socket.timeout:
                raise ChannelTimeout(f"timed out reading {what}") from None
            except ConnectionResetError as exc:
                raise ChannelClosed(str(exc)) from exc
            except OSError as exc:
                raise ChannelIoError(str(exc)) from exc
            if not chunk:
                raise ChannelClosed(f"peer closed while reading {what}")
            buf.extend(chunk)
        return bytes(buf)

    def recv(self, timeout: float = DEFAULT_TIMEOUT) -> Frame:
        self._sock.settimeout(timeout)
        header = self._read_exact(HEADER_LEN, "frame header")
        _, payload_len = decode_header(header)
        payload = self._read_exact(payload_len, "frame payload")
        return frame_decode(header + payload)

    def close(self) -> None:
        if self._closed:
            return
        self._closed = True
        try:
            self._sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self._sock.close()


def connect_tcp(host: str, port: int, timeout: float = DEFAULT_TIMEOUT) -> TcpChannel:
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except socket.timeout:
        raise ChannelTimeout(f"connect to {host}:{port} timed out") from None
    except OSError as exc:
        raise ChannelIoError(f"connect to {host}:{port} failed: {exc}") from exc
    sock.settimeout(timeout)
    return TcpChannel(sock)
