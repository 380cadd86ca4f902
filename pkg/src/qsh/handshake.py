"""Client/server authentication handshake: two key-establishment flows
behind one negotiated wire protocol.

* ``Mode.DH``  -- both sides exchange public values of an exchange-capable
  algorithm (classical finite-field DH); the client's share travels in a
  dedicated third message.
* ``Mode.KEM`` -- the client sends an ephemeral public key for its top
  preference inside the hello; the server encapsulates and returns the
  ciphertext, so key establishment finishes one round-trip earlier.

Every frame, in both directions, is appended to an ordered transcript.
The session key is ``kdf(shared_secret, "qsh1-session" || transcript_hash)``
taken at the moment key material is complete (after the server hello in KEM
mode, after the client key share in DH mode).  When transcript signing is
negotiated the server signs ``H(client_hello || server_hello_without_the_
signature_field)`` with a certificate-chain key, which is what defeats an
active key-substitution attacker; disabling it recreates the vulnerable
plain-DH configuration.

Credentials and the final verdict travel encrypted under the session key
with fixed direction nonces (final byte 0x00 client-to-server, 0x01 back)
and the current transcript hash as associated data, so a frame replayed
into any other session fails authentication.

State machines are explicit: any (state, msg_type) pair outside the legal
transition tables aborts with alert code 0x02 and never raises anything
outside the library error hierarchy.
"""

from __future__ import annotations

import enum
import struct
import threading
import time
from dataclasses import dataclass

from .certs import (
    CertChain,
    CertError,
    Certificate,
    ChainInvalid,
    ValidationPolicy,
    validate_chain,
)
from .errors import ProtocolError
from .frames import (
    ALERT_BAD_AUTHENTICITY,
    ALERT_DECRYPT_FAILED,
    ALERT_MALFORMED,
    ALERT_NO_MUTUAL_ALGORITHM,
    Frame,
    MsgType,
    alert_name,
    encode_fields,
    frame_encode,
    make_alert,
    make_frame,
    parse_alert,
)
from .kem import MalformedCiphertext, MalformedKey, get_kem, get_kem_by_code
from .primitives import AeadAuthError, AeadBox, Rng, aead_decrypt, aead_encrypt, kdf, sha256
from .sig import SigSecretKey, get_sig
from .userstore import UserStore

SESSION_KEY_CONTEXT = b"qsh1-session"
NONCE_CLIENT_TO_SERVER = bytes(11) + b"\x00"
NONCE_SERVER_TO_CLIENT = bytes(11) + b"\x01"
AUTH_OK_DETAIL = "authentication succeeded"
AUTH_FAIL_DETAIL = "authentication failed"  # same string for unknown user and wrong password


class Mode(enum.Enum):
    DH = "dh"
    KEM = "kem"


_MODE_WIRE = {Mode.DH: 0x01, Mode.KEM: 0x02}
_WIRE_MODE = {v: k for k, v in _MODE_WIRE.items()}

# ClientHello field ids
_H_NONCE = 0x01
_H_MODE = 0x02
_H_KEM_PREFS = 0x03
_H_SIG_PREFS = 0x04
_H_KEM_PUBLIC = 0x05

# ServerHello field ids
_S_NONCE = 0x01
_S_CHOSEN_KEM = 0x02
_S_CHOSEN_SIG = 0x03
_S_KEM_CIPHERTEXT = 0x04
_S_DH_PUBLIC = 0x05
_S_CERT_CHAIN = 0x06
_S_TRANSCRIPT_SIG = 0x07

# ClientKeyShare field ids
_K_DH_PUBLIC = 0x01

# EncryptedCredentials / AuthResult field ids
_E_NONCE = 0x01
_E_CIPHERTEXT = 0x02
_E_TAG = 0x03


class HandshakeAborted(ProtocolError):
    """This side is aborting; ``alert_frame`` should be sent before closing."""

    def __init__(self, code: int, reason: str):
        self.code = code
        self.reason = reason
        super().__init__(f"handshake aborted ({alert_name(code)}): {reason}")

    @property
    def alert_frame(self) -> Frame:
        return make_alert(self.code)


class PeerAlert(ProtocolError):
    """The peer aborted and told us why."""

    def __init__(self, code: int):
        self.code = code
        super().__init__(f"peer sent alert {code:#04x} ({alert_name(code)})")


@dataclass(frozen=True)
class NegotiationOffer:
    kem_prefs: tuple[str, ...]
    sig_prefs: tuple[str, ...]
    modes: frozenset[Mode]
    client_nonce: bytes

    def __post_init__(self) -> None:
        if not self.kem_prefs or not self.sig_prefs or not self.modes:
            raise ValueError("preference lists and mode set must be non-empty")
        if len(set(self.kem_prefs)) != len(self.kem_prefs):
            raise ValueError("duplicate KEM preference")
        if len(set(self.sig_prefs)) != len(self.sig_prefs):
            raise ValueError("duplicate signature preference")
        if len(self.client_nonce) != 32:
            raise ValueError("client nonce must be 32 bytes")
        for name in self.kem_prefs:
            get_kem(name)
        for name in self.sig_prefs:
            get_sig(name)


def make_offer(
    kem_prefs,
    sig_prefs,
    modes,
    rng: Rng,
) -> NegotiationOffer:
    return NegotiationOffer(
        tuple(kem_prefs), tuple(sig_prefs), frozenset(modes), rng.bytes(32)
    )


def negotiate(prefs, allowed) -> str | None:
    """First client preference present in the server's allowed set."""
    allowed_set = set(allowed)
    for name in prefs:
        if name in allowed_set:
            return name
    return None


def default_sig_prefs() -> tuple[str, ...]:
    """Registered schemes, stateless first so routine handshakes do not
    burn one-time signing keys."""
    from .sig import sig_names

    return tuple(sorted(sig_names(), key=lambda n: (get_sig(n).stateful, n)))


class Transcript:
    """Append-only record of raw frames with a running hash."""

    def __init__(self) -> None:
        self.frames: list[Frame] = []
        self._data = bytearray()

    def append(self, frame: Frame) -> None:
        self.frames.append(frame)
        self._data += frame_encode(frame)

    @property
    def running_hash(self) -> bytes:
        return sha256(bytes(self._data))

    @property
    def raw(self) -> bytes:
        return bytes(self._data)


@dataclass(frozen=True)
class SessionKeys:
    key: bytes
    established_from: tuple[str, str]  # (kem algorithm, mode value)

    def __post_init__(self) -> None:
        if len(self.key) != 32:
            raise ValueError("session key must be 32 bytes")


def derive_session_key(shared_secret: bytes, transcript_hash: bytes) -> bytes:
    return kdf(shared_secret, SESSION_KEY_CONTEXT + transcript_hash, 32)


@dataclass(frozen=True)
class Credential:
    user_id: str
    password: str

    def __post_init__(self) -> None:
        for label, value in (("user_id", self.user_id), ("password", self.password)):
            if not value:
                raise ValueError(f"{label} must be non-empty")
            if len(value.encode()) > 255:
                raise ValueError(f"{label} exceeds 255 UTF-8 bytes")

    def encode(self) -> bytes:
        user = self.user_id.encode()
        pw = self.password.encode()
        return bytes([len(user)]) + user + bytes([len(pw)]) + pw

    @classmethod
    def decode(cls, data: bytes) -> "Credential":
        if not data:
            raise ProtocolError("empty credential payload")
        user_len = data[0]
        if len(data) < 1 + user_len + 1:
            raise ProtocolError("truncated credential payload")
        user = data[1 : 1 + user_len]
        pw_len = data[1 + user_len]
        pw = data[2 + user_len :]
        if len(pw) != pw_len:
            raise ProtocolError("credential length fields inconsistent")
        return cls(user.decode(), pw.decode())


@dataclass(frozen=True)
class AuthResult:
    success: bool
    detail: str

    def encode(self) -> bytes:
        return bytes([int(self.success)]) + self.detail.encode()

    @classmethod
    def decode(cls, data: bytes) -> "AuthResult":
        if not data or data[0] > 1:
            raise ProtocolError("malformed auth result payload")
        return cls(bool(data[0]), data[1:].decode())


class SigningKey:
    """Thread-safe holder advancing stateful signature keys atomically.

    ``on_update`` (if given) receives each advanced secret, letting the CLI
    rewrite the on-disk key file after every signature.
    """

    def __init__(self, secret: SigSecretKey, on_update=None):
        self._secret = secret
        self._on_update = on_update
        self._lock = threading.Lock()

    @property
    def alg(self) -> str:
        return self._secret.alg

    @property
    def secret(self) -> SigSecretKey:
        with self._lock:
            return self._secret

    def sign(self, message: bytes) -> bytes:
        with self._lock:
            signature, advanced = get_sig(self._secret.alg).sign(self._secret, message)
            self._secret = advanced
            if self._on_update is not None:
                self._on_update(advanced)
            return signature


@dataclass
class ServerConfig:
    chain: CertChain
    userstore: UserStore
    classical_signer: SigningKey | None = None
    pq_signer: SigningKey | None = None
    allowed_kems: tuple[str, ...] = ()
    modes: frozenset = frozenset((Mode.DH, Mode.KEM))
    sign_transcript: bool = True

    def signer_for(self, name: str) -> SigningKey | None:
        leaf = self.chain.leaf.body
        if self.classical_signer is not None and name == self.classical_signer.alg:
            if leaf.classical_alg == name:
                return self.classical_signer
        if self.pq_signer is not None and name == self.pq_signer.alg:
            if leaf.pq_alg == name:
                return self.pq_signer
        return None

    def signable_names(self) -> set[str]:
        names = set()
        for signer in (self.classical_signer, self.pq_signer):
            if signer is not None and self.signer_for(signer.alg) is not None:
                names.add(signer.alg)
        return names


class ClientState(enum.Enum):
    START = "start"
    WAIT_SERVER_HELLO = "wait-server-hello"
    ESTABLISHED = "established"
    WAIT_AUTH_RESULT = "wait-auth-result"
    DONE = "done"
    FAILED = "failed"


class ServerState(enum.Enum):
    WAIT_HELLO = "wait-hello"
    WAIT_KEY_SHARE = "wait-key-share"
    WAIT_CREDENTIALS = "wait-credentials"
    DONE = "done"
    FAILED = "failed"


# Legal inbound message types per state; anything else draws alert 0x02.
# Alerts are accepted in every receiving state as a peer abort.
CLIENT_ACCEPTS: dict[ClientState, frozenset] = {
    ClientState.START: frozenset(),
    ClientState.WAIT_SERVER_HELLO: frozenset({MsgType.SERVER_HELLO}),
    ClientState.ESTABLISHED: frozenset(),
    ClientState.WAIT_AUTH_RESULT: frozenset({MsgType.AUTH_RESULT}),
    ClientState.DONE: frozenset(),
    ClientState.FAILED: frozenset(),
}

SERVER_ACCEPTS: dict[ServerState, frozenset] = {
    ServerState.WAIT_HELLO: frozenset({MsgType.CLIENT_HELLO}),
    ServerState.WAIT_KEY_SHARE: frozenset({MsgType.CLIENT_KEY_SHARE}),
    ServerState.WAIT_CREDENTIALS: frozenset({MsgType.ENCRYPTED_CREDENTIALS}),
    ServerState.DONE: frozenset(),
    ServerState.FAILED: frozenset(),
}


def _checked_fields(
    frame: Frame,
    required: dict[int, int | None],
    optional: dict[int, int | None] = {},
) -> dict[int, bytes]:
    fields = frame.fields()
    known = {**required, **optional}
    for field_id in fields:
        if field_id not in known:
            raise ProtocolError(f"unknown field {field_id:#04x} in {frame.type_name}")
    for field_id, length in required.items():
        if field_id not in fields:
            raise ProtocolError(f"missing field {field_id:#04x} in {frame.type_name}")
    for field_id, length in known.items():
        if field_id in fields and length is not None and len(fields[field_id]) != length:
            raise ProtocolError(
                f"field {field_id:#04x} in {frame.type_name} must be {length} bytes"
            )
    return fields


def _encode_pref_codes(names, registry_get) -> bytes:
    return b"".join(struct.pack(">H", registry_get(n).code) for n in names)


def _decode_pref_codes(data: bytes) -> list[int]:
    if len(data) % 2 != 0 or not data:
        raise ProtocolError("preference list must be a non-empty sequence of 2-byte codes")
    codes = [c for (c,) in struct.iter_unpack(">H", data)]
    if len(set(codes)) != len(codes):
        raise ProtocolError("duplicate code in preference list")
    return codes


class _SessionBase:
    def __init__(self, rng: Rng):
        self.rng = rng
        self.transcript = Transcript()
        self.session_keys: SessionKeys | None = None

    def _abort(self, code: int, reason: str):
        # drop key material before surfacing the failure
        self.session_keys = None
        self.state = self._failed_state
        raise HandshakeAborted(code, reason)

    def _expect(self, frame: Frame, accepts: frozenset):
        if frame.msg_type == MsgType.ALERT:
            self.session_keys = None
            self.state = self._failed_state
            try:
                code = parse_alert(frame)
            except ProtocolError:
                raise HandshakeAborted(ALERT_MALFORMED, "unparseable alert") from None
            raise PeerAlert(code)
        if frame.msg_type not in accepts:
            self._abort(
                ALERT_MALFORMED,
                f"unexpected {frame.type_name} in state {self.state.value}",
            )


class ClientSession(_SessionBase):
    _failed_state = ClientState.FAILED

    def __init__(
        self,
        offer: NegotiationOffer,
        mode: Mode,
        rng: Rng,
        trust_root: Certificate,
        policy: ValidationPolicy,
        require_signed: bool = True,
        now: int | None = None,
    ):
        super().__init__(rng)
        if mode not in offer.modes:
            raise ValueError(f"mode {mode.value} not offered")
        self.offer = offer
        self.mode = mode
        self.trust_root = trust_root
        self.policy = policy
        self.require_signed = require_signed
        self.now = now
        self.state = ClientState.START
        self.chosen_kem: str | None = None
        self.chosen_sig: str | None = None
        self.chain_validated = False
        self._kem_keypair = None

    def start(self) -> Frame:
        if self.state is not ClientState.START:
            self._abort(ALERT_MALFORMED, f"start() in state {self.state.value}")
        fields = {
            _H_NONCE: self.offer.client_nonce,
            _H_MODE: bytes([_MODE_WIRE[self.mode]]),
            _H_KEM_PREFS: _encode_pref_codes(self.offer.kem_prefs, get_kem),
            _H_SIG_PREFS: _encode_pref_codes(self.offer.sig_prefs, get_sig),
        }
        if self.mode is Mode.KEM:
            top = get_kem(self.offer.kem_prefs[0])
            self._kem_keypair = top.keypair(self.rng)
            fields[_H_KEM_PUBLIC] = self._kem_keypair.public_key
        frame = make_frame(MsgType.CLIENT_HELLO, fields)
        self.transcript.append(frame)
        self.state = ClientState.WAIT_SERVER_HELLO
        return frame

    def handle_server_hello(self, frame: Frame) -> list[Frame]:
        """Validate the server's reply; returns frames to send (the DH key
        share, or nothing in KEM mode).  Session keys are set on return."""
        self._expect(frame, CLIENT_ACCEPTS[self.state])
        try:
            fields = _checked_fields(
                frame,
                required={_S_NONCE: 32, _S_CHOSEN_KEM: 2, _S_CERT_CHAIN: None},
                optional={
                    _S_CHOSEN_SIG: 2,
                    _S_KEM_CIPHERTEXT: None,
                    _S_DH_PUBLIC: None,
                    _S_TRANSCRIPT_SIG: None,
                },
            )
            chain = CertChain.decode(fields[_S_CERT_CHAIN])
        except (ProtocolError, CertError) as exc:
            self._abort(ALERT_MALFORMED, f"malformed server hello: {exc}")

        try:
            kem_alg = get_kem_by_code(struct.unpack(">H", fields[_S_CHOSEN_KEM])[0])
        except Exception:
            self._abort(ALERT_MALFORMED, "server chose an unknown KEM code")
        if kem_alg.name not in self.offer.kem_prefs:
            self._abort(ALERT_MALFORMED, "server chose a KEM we never offered")
        if self.mode is Mode.KEM:
            if kem_alg.name != self.offer.kem_prefs[0]:
                self._abort(ALERT_MALFORMED, "server ignored the key-share preference")
            if _S_KEM_CIPHERTEXT not in fields or _S_DH_PUBLIC in fields:
                self._abort(ALERT_MALFORMED, "server hello fields do not fit KEM mode")
        else:
            if _S_DH_PUBLIC not in fields or _S_KEM_CIPHERTEXT in fields:
                self._abort(ALERT_MALFORMED, "server hello fields do not fit DH mode")

        now = int(time.time()) if self.now is None else self.now
        try:
            validate_chain(chain, self.trust_root, self.policy, now)
        except ChainInvalid as exc:
            self._abort(ALERT_BAD_AUTHENTICITY, f"certificate chain invalid: {exc}")
        self.chain_validated = True

        signed = _S_TRANSCRIPT_SIG in fields
        if signed != (_S_CHOSEN_SIG in fields):
            self._abort(ALERT_MALFORMED, "signature fields must appear together")
        if self.require_signed and not signed:
            self._abort(ALERT_BAD_AUTHENTICITY, "server refused to sign the transcript")
        if signed:
            sig_code = struct.unpack(">H", fields[_S_CHOSEN_SIG])[0]
            sig_name = None
            for name in self.offer.sig_prefs:
                if get_sig(name).code == sig_code:
                    sig_name = name
            if sig_name is None:
                self._abort(ALERT_MALFORMED, "server chose a signature scheme we never offered")
            leaf = chain.leaf.body
            if sig_name == leaf.classical_alg:
                leaf_pub = leaf.classical_pub
            elif sig_name == leaf.pq_alg:
                leaf_pub = leaf.pq_pub
            else:
                self._abort(
                    ALERT_BAD_AUTHENTICITY, "chosen signature scheme not present in leaf"
                )
            unsigned = {k: v for k, v in fields.items() if k != _S_TRANSCRIPT_SIG}
            span = self.transcript.raw + frame_encode(
                Frame(MsgType.SERVER_HELLO, encode_fields(unsigned))
            )
            if not get_sig(sig_name).verify(
                leaf_pub, sha256(span), fields[_S_TRANSCRIPT_SIG]
            ):
                self._abort(ALERT_BAD_AUTHENTICITY, "transcript signature invalid")
            self.chosen_sig = sig_name

        self.chosen_kem = kem_alg.name
        self.transcript.append(frame)

        if self.mode is Mode.KEM:
            try:
                ss = kem_alg.decaps(self._kem_keypair.secret_key, fields[_S_KEM_CIPHERTEXT])
            except (MalformedKey, MalformedCiphertext) as exc:
                self._abort(ALERT_MALFORMED, f"bad encapsulation: {exc}")
            self.session_keys = SessionKeys(
                derive_session_key(ss.data, self.transcript.running_hash),
                (kem_alg.name, self.mode.value),
            )
            self.state = ClientState.ESTABLISHED
            return []

        if not getattr(kem_alg, "supports_exchange", False):
            self._abort(ALERT_MALFORMED, f"{kem_alg.name} cannot run the exchange flow")
        keypair = kem_alg.keypair(self.rng)
        share = make_frame(MsgType.CLIENT_KEY_SHARE, {_K_DH_PUBLIC: keypair.public_key})
        try:
            ss = kem_alg.exchange(keypair.secret_key, fields[_S_DH_PUBLIC])
        except MalformedKey as exc:
            self._abort(ALERT_MALFORMED, f"bad server key share: {exc}")
        self.transcript.append(share)
        self.session_keys = SessionKeys(
            derive_session_key(ss.data, self.transcript.running_hash),
            (kem_alg.name, self.mode.value),
        )
        self.state = ClientState.ESTABLISHED
        return [share]

    def submit_credentials(self, credential: Credential) -> Frame:
        if self.state is not ClientState.ESTABLISHED:
            self._abort(ALERT_MALFORMED, f"submit_credentials in state {self.state.value}")
        box = aead_encrypt(
            self.session_keys.key,
            NONCE_CLIENT_TO_SERVER,
            credential.encode(),
            ad=self.transcript.running_hash,
        )
        frame = make_frame(
            MsgType.ENCRYPTED_CREDENTIALS,
            {_E_NONCE: box.nonce, _E_CIPHERTEXT: box.ciphertext, _E_TAG: box.tag},
        )
        self.transcript.append(frame)
        self.state = ClientState.WAIT_AUTH_RESULT
        return frame

    def handle_auth_result(self, frame: Frame) -> AuthResult:
        self._expect(frame, CLIENT_ACCEPTS[self.state])
        try:
            fields = _checked_fields(
                frame, required={_E_NONCE: 12, _E_CIPHERTEXT: None, _E_TAG: 32}
            )
        except ProtocolError as exc:
            self._abort(ALERT_MALFORMED, str(exc))
        box = AeadBox(fields[_E_NONCE], fields[_E_CIPHERTEXT], fields[_E_TAG])
        try:
            plaintext = aead_decrypt(
                self.session_keys.key, box, ad=self.transcript.running_hash
            )
        except AeadAuthError:
            self._abort(ALERT_DECRYPT_FAILED, "auth result failed decryption")
        self.transcript.append(frame)
        self.state = ClientState.DONE
        try:
            return AuthResult.decode(plaintext)
        except (ProtocolError, UnicodeDecodeError):
            raise HandshakeAborted(ALERT_MALFORMED, "malformed auth result plaintext") from None


class ServerSession(_SessionBase):
    _failed_state = ServerState.FAILED

    def __init__(self, config: ServerConfig, rng: Rng):
        super().__init__(rng)
        self.config = config
        self.state = ServerState.WAIT_HELLO
        self.mode: Mode | None = None
        self.chosen_kem: str | None = None
        self.chosen_sig: str | None = None
        self.auth_result: AuthResult | None = None
        self._kem_alg = None
        self._dh_secret: bytes | None = None

    def handle_frame(self, frame: Frame) -> list[Frame]:
        """Single driver entry point: routes by state, returns reply frames."""
        if self.state is ServerState.WAIT_HELLO:
            return [self.handle_hello(frame)]
        if self.state is ServerState.WAIT_KEY_SHARE:
            self.handle_key_share(frame)
            return []
        if self.state is ServerState.WAIT_CREDENTIALS:
            _, reply = self.handle_credentials(frame)
            return [reply]
        self._expect(frame, SERVER_ACCEPTS[self.state])
        return []

    def handle_hello(self, frame: Frame) -> Frame:
        self._expect(frame, SERVER_ACCEPTS[self.state])
        try:
            fields = _checked_fields(
                frame,
                required={_H_NONCE: 32, _H_MODE: 1, _H_KEM_PREFS: None, _H_SIG_PREFS: None},
                optional={_H_KEM_PUBLIC: None},
            )
            kem_codes = _decode_pref_codes(fields[_H_KEM_PREFS])
            sig_codes = _decode_pref_codes(fields[_H_SIG_PREFS])
        except ProtocolError as exc:
            self._abort(ALERT_MALFORMED, f"malformed client hello: {exc}")

        mode = _WIRE_MODE.get(fields[_H_MODE][0])
        if mode is None:
            self._abort(ALERT_MALFORMED, f"unknown mode byte {fields[_H_MODE][0]:#04x}")
        if mode not in self.config.modes:
            self._abort(ALERT_NO_MUTUAL_ALGORITHM, f"mode {mode.value} not enabled")
        if (mode is Mode.KEM) != (_H_KEM_PUBLIC in fields):
            self._abort(ALERT_MALFORMED, "key-share field must match the requested mode")

        # unknown codes are simply not mutual; they never abort by themselves
        kem_names = []
        for code in kem_codes:
            try:
                kem_names.append(get_kem_by_code(code).name)
            except Exception:
                pass

        if mode is Mode.KEM:
            # the hello's key share is for the top preference, so only that
            # preference can be honored in this mode
            chosen = kem_names[0] if kem_names else None
            if chosen is None or chosen not in self.config.allowed_kems:
                self._abort(ALERT_NO_MUTUAL_ALGORITHM, "no mutual KEM algorithm")
        else:
            exchange_capable = [
                n for n in kem_names if getattr(get_kem(n), "supports_exchange", False)
            ]
            chosen = negotiate(exchange_capable, self.config.allowed_kems)
            if chosen is None:
                self._abort(ALERT_NO_MUTUAL_ALGORITHM, "no mutual exchange algorithm")
        alg = get_kem(chosen)

        chosen_sig = None
        if self.config.sign_transcript:
            chosen_sig = negotiate(_names_for_sig_codes(sig_codes), self.config.signable_names())
            if chosen_sig is None:
                self._abort(ALERT_NO_MUTUAL_ALGORITHM, "no mutual signature scheme")

        reply: dict[int, bytes] = {
            _S_NONCE: self.rng.bytes(32),
            _S_CHOSEN_KEM: struct.pack(">H", alg.code),
            _S_CERT_CHAIN: self.config.chain.encode(),
        }
        if mode is Mode.KEM:
            try:
                ciphertext, ss = alg.encaps(fields[_H_KEM_PUBLIC], self.rng)
            except (MalformedKey, MalformedCiphertext) as exc:
                self._abort(ALERT_MALFORMED, f"bad client public key: {exc}")
            reply[_S_KEM_CIPHERTEXT] = ciphertext.data
        else:
            keypair = alg.keypair(self.rng)
            self._dh_secret = keypair.secret_key
            reply[_S_DH_PUBLIC] = keypair.public_key
            ss = None

        self.transcript.append(frame)
        if chosen_sig is not None:
            reply[_S_CHOSEN_SIG] = struct.pack(">H", get_sig(chosen_sig).code)
            unsigned = frame_encode(Frame(MsgType.SERVER_HELLO, encode_fields(reply)))
            span_hash = sha256(self.transcript.raw + unsigned)
            reply[_S_TRANSCRIPT_SIG] = self.config.signer_for(chosen_sig).sign(span_hash)
        server_hello = make_frame(MsgType.SERVER_HELLO, reply)
        self.transcript.append(server_hello)

        self.mode = mode
        self.chosen_kem = chosen
        self.chosen_sig = chosen_sig
        self._kem_alg = alg
        if mode is Mode.KEM:
            self.session_keys = SessionKeys(
                derive_session_key(ss.data, self.transcript.running_hash),
                (chosen, mode.value),
            )
            self.state = ServerState.WAIT_CREDENTIALS
        else:
            self.state = ServerState.WAIT_KEY_SHARE
        return server_hello

    def handle_key_share(self, frame: Frame) -> None:
        self._expect(frame, SERVER_ACCEPTS[self.state])
        try:
            fields = _checked_fields(frame, required={_K_DH_PUBLIC: None})
        except ProtocolError as exc:
            self._abort(ALERT_MALFORMED, str(exc))
        try:
            ss = self._kem_alg.exchange(self._dh_secret, fields[_K_DH_PUBLIC])
        except MalformedKey as exc:
            self._abort(ALERT_MALFORMED, f"bad client key share: {exc}")
        self.transcript.append(frame)
        self.session_keys = SessionKeys(
            derive_session_key(ss.data, self.transcript.running_hash),
            (self.chosen_kem, self.mode.value),
        )
        self.state = ServerState.WAIT_CREDENTIALS

    def handle_credentials(self, frame: Frame) -> tuple[AuthResult, Frame]:
        self._expect(frame, SERVER_ACCEPTS[self.state])
        try:
            fields = _checked_fields(
                frame, required={_E_NONCE: 12, _E_CIPHERTEXT: None, _E_TAG: 32}
            )
        except ProtocolError as exc:
            self._abort(ALERT_MALFORMED, str(exc))
        box = AeadBox(fields[_E_NONCE], fields[_E_CIPHERTEXT], fields[_E_TAG])
        try:
            plaintext = aead_decrypt(
                self.session_keys.key, box, ad=self.transcript.running_hash
            )
        except AeadAuthError:
            self._abort(ALERT_DECRYPT_FAILED, "credential frame failed decryption")
        try:
            credential = Credential.decode(plaintext)
        except (ProtocolError, UnicodeDecodeError, ValueError):
            self._abort(ALERT_MALFORMED, "malformed credential plaintext")
        self.transcript.append(frame)

        success = self.config.userstore.verify_password(
            credential.user_id, credential.password
        )
        result = AuthResult(success, AUTH_OK_DETAIL if success else AUTH_FAIL_DETAIL)
        box = aead_encrypt(
            self.session_keys.key,
            NONCE_SERVER_TO_CLIENT,
            result.encode(),
            ad=self.transcript.running_hash,
        )
        reply = make_frame(
            MsgType.AUTH_RESULT,
            {_E_NONCE: box.nonce, _E_CIPHERTEXT: box.ciphertext, _E_TAG: box.tag},
        )
        self.transcript.append(reply)
        self.auth_result = result
        self.state = ServerState.DONE
        return result, reply


def _names_for_sig_codes(codes) -> list[str]:
    from .sig import get_sig_by_code

    names = []
    for code in codes:
        try:
            names.append(get_sig_by_code(code).name)
        except Exception:
            pass
    return names
