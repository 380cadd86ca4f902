"""Connection drivers: run one handshake over any channel, plus a
concurrent TCP server wrapping the same per-session loop.

``serve_session`` and ``client_authenticate`` contain the only send/recv
choreography in the project; the state machines themselves never touch a
socket, which is what lets the interceptor harness sit between two real
endpoints unmodified.
"""

from __future__ import annotations

import socket
import struct
import threading

from .capture import SessionCapture
from .channels import DEFAULT_TIMEOUT, Channel, TcpChannel
from .errors import TransportError
from .frames import ALERT_BAD_AUTHENTICITY
from .handshake import (
    AuthResult,
    ClientSession,
    Credential,
    HandshakeAborted,
    PeerAlert,
    ServerConfig,
    ServerSession,
    ServerState,
)
from .primitives import Rng


def client_authenticate(
    channel: Channel,
    session: ClientSession,
    credential: Credential,
    timeout: float = DEFAULT_TIMEOUT,
) -> AuthResult:
    """Drive a client session to completion; the caller owns the channel.

    Raises HandshakeAborted (after sending our alert), PeerAlert, or a
    transport error; returns the decrypted verdict otherwise.
    """
    try:
        channel.send(session.start())
        for frame in session.handle_server_hello(channel.recv(timeout)):
            channel.send(frame)
        channel.send(session.submit_credentials(credential))
        return session.handle_auth_result(channel.recv(timeout))
    except HandshakeAborted as exc:
        try:
            channel.send(exc.alert_frame)
        except TransportError:
            pass
        raise


def serve_session(
    channel: Channel,
    config: ServerConfig,
    rng: Rng,
    capture: SessionCapture | None = None,
    timeout: float = DEFAULT_TIMEOUT,
) -> ServerSession:
    """Serve exactly one handshake; always returns the session for
    inspection, recording frames and verdicts into ``capture`` if given."""
    session = ServerSession(config, rng)
    alert_seen: int | None = None
    transport_failed = False
    try:
        while session.state not in (ServerState.DONE, ServerState.FAILED):
            frame = channel.recv(timeout)
            if capture is not None:
                capture.record("c2s", frame)
            try:
                replies = session.handle_frame(frame)
            except HandshakeAborted as exc:
                try:
                    channel.send(exc.alert_frame)
                    if capture is not None:
                        capture.record("s2c", exc.alert_frame)
                except TransportError:
                    pass
                break
            for reply in replies:
                channel.send(reply)
                if capture is not None:
                    capture.record("s2c", reply)
    except PeerAlert as exc:
        alert_seen = exc.code
    except TransportError:
        transport_failed = True
    if capture is not None:
        _annotate(capture, session, alert_seen, transport_failed)
    return session


def _annotate(
    capture: SessionCapture,
    session: ServerSession,
    alert_seen: int | None,
    transport_failed: bool,
) -> None:
    capture.annotate("mode", session.mode.value if session.mode else "none")
    capture.annotate("kem", session.chosen_kem or "none")
    capture.annotate("signature", session.chosen_sig or "unsigned")
    if session.mode is None:
        chain_verdict = "not-sent"
    elif alert_seen == ALERT_BAD_AUTHENTICITY:
        chain_verdict = "rejected-by-client (alert 0x03)"
    elif session.state in (ServerState.WAIT_CREDENTIALS, ServerState.DONE):
        chain_verdict = "sent"
        if session.auth_result is not None:
            chain_verdict = "accepted-by-client"
    else:
        chain_verdict = "sent"
    capture.annotate("chain", chain_verdict)
    if session.auth_result is None:
        capture.annotate("auth", "none")
    else:
        capture.annotate("auth", "success" if session.auth_result.success else "failure")
    if alert_seen is not None:
        capture.annotate("alert-received", f"{alert_seen:#04x}")
    if transport_failed:
        capture.annotate("transport", "error")


class QshServer:
    """Accepts TCP connections and serves one handshake per connection.

    With ``capture_path`` set, the most recent completed session is written
    there (one session per file, latest wins).
    """

    def __init__(
        self,
        host: str,
        port: int,
        config: ServerConfig,
        rng: Rng,
        capture_path=None,
        timeout: float = DEFAULT_TIMEOUT,
    ):
        self._host = host
        self._requested_port = port
        self._config = config
        self._rng = rng
        self._capture_path = capture_path
        self._timeout = timeout
        self._listener: socket.socket | None = None
        self._accept_thread: threading.Thread | None = None
        self._handlers: list[threading.Thread] = []
        self._conn_count = 0
        self._lock = threading.Lock()
        self.port: int | None = None

    def start(self) -> None:
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self._host, self._requested_port))
        listener.listen(32)
        self._listener = listener
        self.port = listener.getsockname()[1]
        self._accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        self._accept_thread.start()

    def _accept_loop(self) -> None:
        while True:
            try:
                sock, _ = self._listener.accept()
            except OSError:
                return  # listener closed
            with self._lock:
                index = self._conn_count
                self._conn_count += 1
            handler = threading.Thread(
                target=self._handle, args=(sock, index), daemon=True
            )
            self._handlers.append(handler)
            handler.start()

    def _handle(self, sock: socket.socket, index: int) -> None:
        channel = TcpChannel(sock)
        rng = self._rng.derive(b"conn-" + struct.pack(">Q", index))
        capture = SessionCapture() if self._capture_path else None
        try:
            serve_session(channel, self._config, rng, capture, self._timeout)
        finally:
            channel.close()
        if capture is not None:
            capture.save(self._capture_path)

    def stop(self) -> None:
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        if self._accept_thread is not None:
            self._accept_thread.join(timeout=2.0)
        for handler in self._handlers:
            handler.join(timeout=2.0)

    def __enter__(self) -> "QshServer":
        self.start()
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
