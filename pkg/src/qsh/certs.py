"""Hybrid certificates: one object carrying a classical signature and an
optional post-quantum signature over the same canonical body.

A chain is ordered leaf first, root last (max 8).  Validation walks the
chain under an explicit policy -- classical signatures only, post-quantum
only, or both -- against an explicit trust root and an explicit clock, and
reports the first failure with its kind and chain index.

Encoding reuses the transport TLV scheme for the body and the certificate
envelope, so one serializer covers the whole project; files are the binary
encoding hex-armored between ``-----QSH CERT-----`` and ``-----END-----``
lines, concatenated leaf-first for chains.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, replace

from .errors import CryptoError
from .frames import decode_fields, encode_fields
from .sig import SigSecretKey, get_sig, get_sig_by_code

MAX_CHAIN_LEN = 8
SERIAL_LEN = 8


class CertError(CryptoError):
    pass


class ChainErrorKind(enum.Enum):
    NAME_MISMATCH = "name-mismatch"
    EXPIRED = "expired"
    NOT_CA = "not-ca"
    MISSING_PQ_MATERIAL = "missing-pq-material"
    BAD_CLASSICAL_SIG = "bad-classical-sig"
    BAD_PQ_SIG = "bad-pq-sig"
    UNTRUSTED_ROOT = "untrusted-root"


class ChainInvalid(CertError):
    def __init__(self, kind: ChainErrorKind, index: int, detail: str = ""):
        self.kind = kind
        self.index = index
        text = f"{kind.value} at chain index {index}"
        super().__init__(f"{text}: {detail}" if detail else text)


class ValidationPolicy(enum.Enum):
    CLASSICAL_ONLY = "classical"
    PQ_ONLY = "pq"
    HYBRID_BOTH = "hybrid"


@dataclass(frozen=True)
class CertificateBody:
    subject: str
    issuer: str
    serial: bytes
    not_before: int
    not_after: int
    classical_alg: str
    classical_pub: bytes
    is_ca: bool = False
    pq_alg: str | None = None
    pq_pub: bytes | None = None

    def __post_init__(self) -> None:
        if not self.subject or not self.issuer:
            raise CertError("subject and issuer must be non-empty")
        if len(self.serial) != SERIAL_LEN:
            raise CertError(f"serial must be {SERIAL_LEN} bytes")
        if self.not_before >= self.not_after:
            raise CertError("not_before must precede not_after")
        if (self.pq_alg is None) != (self.pq_pub is None):
            raise CertError("pq algorithm and key must be present together")

    @property
    def has_pq(self) -> bool:
        return self.pq_alg is not None


# Body TLV ids (frozen; see PROTOCOL.md)
_B_SUBJECT = 0x01
_B_ISSUER = 0x02
_B_SERIAL = 0x03
_B_NOT_BEFORE = 0x04
_B_NOT_AFTER = 0x05
_B_CLASSICAL_ALG = 0x06
_B_CLASSICAL_PUB = 0x07
_B_IS_CA = 0x08
_B_PQ_ALG = 0x09
_B_PQ_PUB = 0x0A

# Certificate envelope TLV ids
_C_BODY = 0x01
_C_CLASSICAL_SIG = 0x02
_C_PQ_SIG = 0x03


def encode_body(body: CertificateBody) -> bytes:
    fields = {
        _B_SUBJECT: body.subject.encode(),
        _B_ISSUER: body.issuer.encode(),
        _B_SERIAL: body.serial,
        _B_NOT_BEFORE: struct.pack(">Q", body.not_before),
        _B_NOT_AFTER: struct.pack(">Q", body.not_after),
        _B_CLASSICAL_ALG: struct.pack(">H", get_sig(body.classical_alg).code),
        _B_CLASSICAL_PUB: body.classical_pub,
        _B_IS_CA: bytes([int(body.is_ca)]),
    }
    if body.has_pq:
        fields[_B_PQ_ALG] = struct.pack(">H", get_sig(body.pq_alg).code)
        fields[_B_PQ_PUB] = body.pq_pub
    return encode_fields(fields)


def decode_body(data: bytes) -> CertificateBody:
    fields = decode_fields(data)
    required = {
        _B_SUBJECT,
        _B_ISSUER,
        _B_SERIAL,
        _B_NOT_BEFORE,
        _B_NOT_AFTER,
        _B_CLASSICAL_ALG,
        _B_CLASSICAL_PUB,
        _B_IS_CA,
    }
    if not required <= set(fields):
        raise CertError("certificate body missing required fields")
    pq_alg = pq_pub = None
    if _B_PQ_ALG in fields or _B_PQ_PUB in fields:
        if not {_B_PQ_ALG, _B_PQ_PUB} <= set(fields):
            raise CertError("pq algorithm and key must be present together")
        pq_alg = get_sig_by_code(struct.unpack(">H", fields[_B_PQ_ALG])[0]).name
        pq_pub = fields[_B_PQ_PUB]
    if len(fields[_B_IS_CA]) != 1 or fields[_B_IS_CA][0] > 1:
        raise CertError("is_ca must be a single 0/1 byte")
    return CertificateBody(
        subject=fields[_B_SUBJECT].decode(),
        issuer=fields[_B_ISSUER].decode(),
        serial=fields[_B_SERIAL],
        not_before=struct.unpack(">Q", fields[_B_NOT_BEFORE])[0],
        not_after=struct.unpack(">Q", fields[_B_NOT_AFTER])[0],
        classical_alg=get_sig_by_code(struct.unpack(">H", fields[_B_CLASSICAL_ALG])[0]).name,
        classical_pub=fields[_B_CLASSICAL_PUB],
        is_ca=bool(fields[_B_IS_CA][0]),
        pq_alg=pq_alg,
        pq_pub=pq_pub,
    )


@dataclass(frozen=True)
class Certificate:
    body: CertificateBody
    classical_sig: bytes
    pq_sig: bytes | None = None

    def encode(self) -> bytes:
        fields = {_C_BODY: encode_body(self.body), _C_CLASSICAL_SIG: self.classical_sig}
        if self.pq_sig is not None:
            fields[_C_PQ_SIG] = self.pq_sig
        return encode_fields(fields)

    @classmethod
    def decode(cls, data: bytes) -> "Certificate":
        fields = decode_fields(data)
        if not {_C_BODY, _C_CLASSICAL_SIG} <= set(fields):
            raise CertError("certificate missing body or classical signature")
        return cls(
            body=decode_body(fields[_C_BODY]),
            classical_sig=fields[_C_CLASSICAL_SIG],
            pq_sig=fields.get(_C_PQ_SIG),
        )


@dataclass(frozen=True)
class CertChain:
    certs: tuple[Certificate, ...]

    def __post_init__(self) -> None:
        if not 1 <= len(self.certs) <= MAX_CHAIN_LEN:
            raise CertError(f"chain length must be in [1, {MAX_CHAIN_LEN}]")

    @property
    def leaf(self) -> Certificate:
        return self.certs[0]

    @property
    def root(self) -> Certificate:
        return self.certs[-1]

    def encode(self) -> bytes:
        parts = [bytes([len(self.certs)])]
        for cert in self.certs:
            blob = cert.encode()
            parts.append(struct.pack(">I", len(blob)) + blob)
        return b"".join(parts)

    @classmethod
    def decode(cls, data: bytes) -> "CertChain":
        if not data:
            raise CertError("empty chain encoding")
        count = data[0]
        offset = 1
        certs = []
        for _ in range(count):
            if offset + 4 > len(data):
                raise CertError("truncated chain encoding")
            (length,) = struct.unpack_from(">I", data, offset)
            offset += 4
            if offset + length > len(data):
                raise CertError("truncated certificate in chain")
            certs.append(Certificate.decode(data[offset : offset + length]))
            offset += length
        if offset != len(data):
            raise CertError("trailing bytes after chain")
        return cls(tuple(certs))


@dataclass(frozen=True)
class IssueResult:
    cert: Certificate
    classical_secret: SigSecretKey
    pq_secret: SigSecretKey | None


def issue(
    body: CertificateBody,
    classical_secret: SigSecretKey,
    pq_secret: SigSecretKey | None = None,
) -> IssueResult:
    """Sign a body with the issuer's keys; returns advanced secret-key state.

    Stateful schemes burn one leaf per signature, so callers must keep the
    returned secrets.
    """
    if body.has_pq and pq_secret is None:
        raise CertError("body carries pq key but no pq signing secret supplied")
    encoded = encode_body(body)
    classical_sig, classical_secret = get_sig(classical_secret.alg).sign(classical_secret, encoded)
    pq_sig = None
    if pq_secret is not None:
        pq_sig, pq_secret = get_sig(pq_secret.alg).sign(pq_secret, encoded)
    return IssueResult(Certificate(body, classical_sig, pq_sig), classical_secret, pq_secret)


def validate_chain(
    chain: CertChain,
    trust_root: Certificate,
    policy: ValidationPolicy,
    now: int,
) -> None:
    """Raise ChainInvalid on the first failure; return None when valid.

    Checks, in order: root anchoring, then per certificate from the leaf --
    name chaining, validity window, CA flag for non-leaves, then signatures
    under the issuing certificate's keys per policy (classical before pq).
    """
    certs = chain.certs
    root_index = len(certs) - 1
    if certs[root_index].encode() != trust_root.encode():
        raise ChainInvalid(ChainErrorKind.UNTRUSTED_ROOT, root_index, "root not the trust anchor")
    for index, cert in enumerate(certs):
        body = cert.body
        issuer_body = certs[index + 1].body if index < root_index else body
        if index < root_index:
            if body.issuer != issuer_body.subject:
                raise ChainInvalid(
                    ChainErrorKind.NAME_MISMATCH,
                    index,
                    f"issuer {body.issuer!r} != next subject {issuer_body.subject!r}",
                )
        elif body.issuer != body.subject:
            raise ChainInvalid(ChainErrorKind.NAME_MISMATCH, index, "root not self-issued")
        if not body.not_before <= now < body.not_after:
            raise ChainInvalid(ChainErrorKind.EXPIRED, index, f"not valid at {now}")
        if index > 0 and not body.is_ca:
            raise ChainInvalid(ChainErrorKind.NOT_CA, index, "issuing certificate lacks CA flag")
        encoded = encode_body(body)
        if policy in (ValidationPolicy.CLASSICAL_ONLY, ValidationPolicy.HYBRID_BOTH):
            alg = get_sig(issuer_body.classical_alg)
            if not alg.verify(issuer_body.classical_pub, encoded, cert.classical_sig):
                raise ChainInvalid(ChainErrorKind.BAD_CLASSICAL_SIG, index)
        if policy in (ValidationPolicy.PQ_ONLY, ValidationPolicy.HYBRID_BOTH):
            if not issuer_body.has_pq or cert.pq_sig is None:
                raise ChainInvalid(ChainErrorKind.MISSING_PQ_MATERIAL, index)
            alg = get_sig(issuer_body.pq_alg)
            if not alg.verify(issuer_body.pq_pub, encoded, cert.pq_sig):
                raise ChainInvalid(ChainErrorKind.BAD_PQ_SIG, index)


# ---------------------------------------------------------------------------
# File armor

ARMOR_HEADER = "-----QSH CERT-----"
ARMOR_FOOTER = "-----END-----"
_WRAP = 64


def armor(cert: Certificate) -> str:
    hex_text = cert.encode().hex()
    lines = [ARMOR_HEADER]
    lines += [hex_text[i : i + _WRAP] for i in range(0, len(hex_text), _WRAP)]
    lines.append(ARMOR_FOOTER)
    return "\n".join(lines) + "\n"


def dearmor_all(text: str) -> list[Certificate]:
    certs = []
    collecting = False
    hex_parts: list[str] = []
    for line_no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line == ARMOR_HEADER:
            if collecting:
                raise CertError(f"nested armor header at line {line_no}")
            collecting = True
            hex_parts = []
        elif line == ARMOR_FOOTER:
            if not collecting:
                raise CertError(f"stray armor footer at line {line_no}")
            collecting = False
            try:
                blob = bytes.fromhex("".join(hex_parts))
            except ValueError:
                raise CertError(f"bad hex in armor block ending at line {line_no}") from None
            certs.append(Certificate.decode(blob))
        elif collecting:
            hex_parts.append(line)
        elif line:
            raise CertError(f"unexpected text outside armor at line {line_no}")
    if collecting:
        raise CertError("unterminated armor block")
    return certs


def save_chain(chain: CertChain, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for cert in chain.certs:
            fh.write(armor(cert))


def load_chain(path) -> CertChain:
    with open(path, encoding="utf-8") as fh:
        certs = dearmor_all(fh.read())
    if not certs:
        raise CertError(f"no certificates in {path}")
    return CertChain(tuple(certs))


def corrupt_signature(cert: Certificate, which: str) -> Certificate:
    """Flip one bit of a signature; test helper for the validation matrix."""
    if which == "classical":
        sig = bytes([cert.classical_sig[0] ^ 0x01]) + cert.classical_sig[1:]
        return replace(cert, classical_sig=sig)
    if which == "pq":
        if cert.pq_sig is None:
            raise CertError("certificate has no pq signature to corrupt")
        sig = bytes([cert.pq_sig[0] ^ 0x01]) + cert.pq_sig[1:]
        return replace(cert, pq_sig=sig)
    raise ValueError(f"unknown signature kind {which!r}")
