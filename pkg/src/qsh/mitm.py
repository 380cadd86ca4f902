"""Man-in-the-middle interceptor harness.

The interceptor owns both halves of the wire: it terminates the client's
channel and the server's channel and pumps frames between them through a
strategy.  ``SubstituteKeyShare`` runs the textbook active attack -- it
swaps its own key material into both directions, maintains one transcript
per leg, derives both session keys, and re-encrypts the credential traffic
so neither endpoint notices.  Against a handshake whose transcript is
signed, the substitution breaks the signature and the client aborts before
any credential leaves it; the attack log then contains no plaintext.

Every frame forwarded or altered is logged.  The other strategies are
transparency (``PassThrough``), targeted corruption (``CorruptByte``), and
cross-session frame replay (``Replay``).
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass

from .channels import ChannelClosed, ChannelTimeout, memory_pair
from .errors import QshError, TransportError
from .frames import Frame, MsgType, alert_name, make_frame, parse_alert
from .handshake import (
    NONCE_CLIENT_TO_SERVER,
    NONCE_SERVER_TO_CLIENT,
    AuthResult,
    ClientSession,
    Credential,
    ServerConfig,
    Transcript,
    _E_CIPHERTEXT,
    _E_NONCE,
    _E_TAG,
    _H_KEM_PREFS,
    _H_KEM_PUBLIC,
    _H_MODE,
    _K_DH_PUBLIC,
    _S_CHOSEN_KEM,
    _S_DH_PUBLIC,
    _S_KEM_CIPHERTEXT,
    _WIRE_MODE,
    Mode,
    derive_session_key,
)
from .kem import get_kem, get_kem_by_code
from .primitives import AeadBox, Rng, aead_decrypt, aead_encrypt
from .server import client_authenticate, serve_session


class AttackLog:
    def __init__(self) -> None:
        self.entries: list[str] = []

    def add(self, text: str) -> None:
        self.entries.append(text)

    def text(self) -> str:
        return "\n".join(self.entries)

    def __contains__(self, needle: str) -> bool:
        return needle in self.text()


class Strategy:
    """Base: forward everything untouched, log every frame."""

    name = "pass-through"

    def __init__(self) -> None:
        self.log = AttackLog()
        self._count = 0

    def process(self, direction: str, frame: Frame) -> Frame:
        out = self.transform(direction, frame)
        altered = " (altered)" if out is not frame else ""
        self.log.add(
            f"[{self._count}] {direction} {frame.type_name} "
            f"{len(frame.payload)}B payload{altered}"
        )
        if frame.msg_type == MsgType.ALERT:
            code = parse_alert(frame)
            self.log.add(f"    alert {code:#04x} ({alert_name(code)})")
        self._count += 1
        return out

    def transform(self, direction: str, frame: Frame) -> Frame:
        return frame


class PassThrough(Strategy):
    pass


class CorruptByte(Strategy):
    """Flip one payload byte of the Nth observed frame (0-based, both
    directions counted in arrival order)."""

    name = "corrupt-byte"

    def __init__(self, frame_index: int, offset: int):
        super().__init__()
        self.frame_index = frame_index
        self.offset = offset

    def transform(self, direction: str, frame: Frame) -> Frame:
        if self._count != self.frame_index:
            return frame
        if not 0 <= self.offset < len(frame.payload):
            raise ValueError(f"offset {self.offset} outside payload")
        payload = bytearray(frame.payload)
        payload[self.offset] ^= 0xFF
        return Frame(frame.msg_type, bytes(payload))


class Replay(Strategy):
    """Substitute a frame recorded in an earlier session for the first
    client frame of the same type in this session."""

    name = "replay"

    def __init__(self, recorded: Frame, target_type: int = MsgType.ENCRYPTED_CREDENTIALS):
        super().__init__()
        self.recorded = recorded
        self.target_type = target_type
        self._done = False

    def transform(self, direction: str, frame: Frame) -> Frame:
        if direction == "c2s" and frame.msg_type == self.target_type and not self._done:
            self._done = True
            self.log.add("    replayed recorded frame in place of the live one")
            return self.recorded
        return frame


class SubstituteKeyShare(Strategy):
    """Active key-substitution with full re-encryption on both legs."""

    name = "substitute-key-share"

    def __init__(self, rng: Rng):
        super().__init__()
        self.rng = rng
        self.mode: Mode | None = None
        self.client_leg = Transcript()  # frames as the client sees them
        self.server_leg = Transcript()  # frames as the server sees them
        self._client_pk: bytes | None = None  # client's real KEM public key
        self._toward_client_kp = None  # attacker pair the client talks to
        self._toward_server_kp = None  # attacker pair the server talks to
        self._server_pub: bytes | None = None
        self._alg = None
        self._ss_client: bytes | None = None
        self._ss_server: bytes | None = None
        self._key_client: bytes | None = None
        self._key_server: bytes | None = None

    def process(self, direction: str, frame: Frame) -> Frame:
        out = super().process(direction, frame)
        # append after transform so encrypted-message handling can use the
        # pre-frame transcript hashes as associated data
        if direction == "c2s":
            self.client_leg.append(frame)
            self.server_leg.append(out)
        else:
            self.server_leg.append(frame)
            self.client_leg.append(out)
        self._maybe_derive_keys(frame.msg_type)
        return out

    def transform(self, direction: str, frame: Frame) -> Frame:
        handler = {
            MsgType.CLIENT_HELLO: self._on_hello,
            MsgType.SERVER_HELLO: self._on_server_hello,
            MsgType.CLIENT_KEY_SHARE: self._on_key_share,
            MsgType.ENCRYPTED_CREDENTIALS: self._on_credentials,
            MsgType.AUTH_RESULT: self._on_auth_result,
        }.get(frame.msg_type)
        return frame if handler is None else handler(frame)

    def _on_hello(self, frame: Frame) -> Frame:
        fields = frame.fields()
        self.mode = _WIRE_MODE.get(fields[_H_MODE][0])
        if self.mode is not Mode.KEM:
            return frame
        codes = fields[_H_KEM_PREFS]
        top_code = int.from_bytes(codes[:2], "big")
        self._alg = get_kem_by_code(top_code)
        self._client_pk = fields[_H_KEM_PUBLIC]
        self._toward_server_kp = self._alg.keypair(self.rng)
        fields[_H_KEM_PUBLIC] = self._toward_server_kp.public_key
        self.log.add("    swapped client public key toward server")
        return make_frame(frame.msg_type, fields)

    def _on_server_hello(self, frame: Frame) -> Frame:
        fields = frame.fields()
        if self._alg is None:
            self._alg = get_kem_by_code(int.from_bytes(fields[_S_CHOSEN_KEM], "big"))
        if self.mode is Mode.KEM:
            # server encapsulated to our key: open it, then re-encapsulate
            # to the client's real key
            ss = self._alg.decaps(
                self._toward_server_kp.secret_key, fields[_S_KEM_CIPHERTEXT]
            )
            self._ss_server = ss.data
            ciphertext, ss_client = self._alg.encaps(self._client_pk, self.rng)
            self._ss_client = ss_client.data
            fields[_S_KEM_CIPHERTEXT] = ciphertext.data
            self.log.add("    re-encapsulated toward client")
        else:
            self._server_pub = fields[_S_DH_PUBLIC]
            self._toward_client_kp = self._alg.keypair(self.rng)
            fields[_S_DH_PUBLIC] = self._toward_client_kp.public_key
            self.log.add("    swapped server key share toward client")
        return make_frame(frame.msg_type, fields)

    def _on_key_share(self, frame: Frame) -> Frame:
        fields = frame.fields()
        client_pub = fields[_K_DH_PUBLIC]
        self._ss_client = self._alg.exchange(
            self._toward_client_kp.secret_key, client_pub
        ).data
        self._toward_server_kp = self._alg.keypair(self.rng)
        self._ss_server = self._alg.exchange(
            self._toward_server_kp.secret_key, self._server_pub
        ).data
        fields[_K_DH_PUBLIC] = self._toward_server_kp.public_key
        self.log.add("    swapped client key share toward server")
        return make_frame(frame.msg_type, fields)

    def _maybe_derive_keys(self, msg_type: int) -> None:
        if self._key_client is not None or self._ss_client is None:
            return
        ready = (self.mode is Mode.KEM and msg_type == MsgType.SERVER_HELLO) or (
            self.mode is Mode.DH and msg_type == MsgType.CLIENT_KEY_SHARE
        )
        if ready:
            self._key_client = derive_session_key(
                self._ss_client, self.client_leg.running_hash
            )
            self._key_server = derive_session_key(
                self._ss_server, self.server_leg.running_hash
            )
            self.log.add("    derived both session keys")

    def _reencrypt(self, frame: Frame, key_in, hash_in, key_out, hash_out, nonce) -> tuple[bytes, Frame]:
        fields = frame.fields()
        box = AeadBox(fields[_E_NONCE], fields[_E_CIPHERTEXT], fields[_E_TAG])
        plaintext = aead_decrypt(key_in, box, ad=hash_in)
        out_box = aead_encrypt(key_out, nonce, plaintext, ad=hash_out)
        out = make_frame(
            frame.msg_type,
            {_E_NONCE: out_box.nonce, _E_CIPHERTEXT: out_box.ciphertext, _E_TAG: out_box.tag},
        )
        return plaintext, out

    def _on_credentials(self, frame: Frame) -> Frame:
        if self._key_client is None:
            return frame
        plaintext, out = self._reencrypt(
            frame,
            self._key_client,
            self.client_leg.running_hash,
            self._key_server,
            self.server_leg.running_hash,
            NONCE_CLIENT_TO_SERVER,
        )
        credential = Credential.decode(plaintext)
        self.log.add(
            f"    recovered credentials user={credential.user_id} "
            f"password={credential.password}"
        )
        return out

    def _on_auth_result(self, frame: Frame) -> Frame:
        if self._key_client is None:
            return frame
        plaintext, out = self._reencrypt(
            frame,
            self._key_server,
            self.server_leg.running_hash,
            self._key_client,
            self.client_leg.running_hash,
            NONCE_SERVER_TO_CLIENT,
        )
        verdict = AuthResult.decode(plaintext)
        self.log.add(f"    observed auth result success={verdict.success}")
        return out


@dataclass
class MitmResult:
    log: AttackLog
    client_result: AuthResult | None
    client_error: Exception | None
    server_session: object


def mitm_run(
    strategy: Strategy,
    config: ServerConfig,
    server_rng: Rng,
    client_session: ClientSession,
    credential: Credential,
    deadline: float = 10.0,
) -> MitmResult:
    """Run one intercepted handshake over in-memory channels."""
    client_end, mitm_client_end = memory_pair()
    mitm_server_end, server_end = memory_pair()

    server_out = {}
    client_out = {"result": None, "error": None}

    def server_main():
        try:
            server_out["session"] = serve_session(server_end, config, server_rng)
        finally:
            server_end.close()

    def client_main():
        try:
            client_out["result"] = client_authenticate(
                client_end, client_session, credential
            )
        except QshError as exc:
            client_out["error"] = exc
        finally:
            client_end.close()

    server_thread = threading.Thread(target=server_main, daemon=True)
    client_thread = threading.Thread(target=client_main, daemon=True)
    server_thread.start()
    client_thread.start()

    open_legs = {"c2s": mitm_client_end, "s2c": mitm_server_end}
    destinations = {"c2s": mitm_server_end, "s2c": mitm_client_end}
    stop_at = time.monotonic() + deadline
    while open_legs and time.monotonic() < stop_at:
        for direction in list(open_legs):
            try:
                frame = open_legs[direction].recv(timeout=0.02)
            except ChannelTimeout:
                continue
            except ChannelClosed:
                del open_legs[direction]
                continue
            out = strategy.process(direction, frame)
            try:
                destinations[direction].send(out)
            except TransportError:
                del open_legs[direction]

    mitm_client_end.close()
    mitm_server_end.close()
    client_thread.join(timeout=2.0)
    server_thread.join(timeout=2.0)
    return MitmResult(
        log=strategy.log,
        client_result=client_out["result"],
        client_error=client_out["error"],
        server_session=server_out.get("session"),
    )
