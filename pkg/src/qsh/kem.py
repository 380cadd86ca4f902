"""Key-encapsulation interface with pluggable backends.

Every algorithm implements the same three operations -- keypair, encapsulate,
decapsulate -- and declares its own key and ciphertext sizes, which callers
must query at runtime instead of assuming constants.  Two families ship by
default:

* ``dh-2048``  -- finite-field Diffie-Hellman over a fixed 2048-bit
  safe-prime group, wrapped as a KEM (encapsulation sends an ephemeral
  public value).  A small test group can be substituted for vector checks.
* ``lwe-512/768/1024`` -- a module-lattice KEM (n = 256, q = 3329, noise
  from the centered binomial distribution with eta = 2, ranks k = 2/3/4).
  Encapsulation encrypts a random 32-byte seed bit-by-bit at q/2 scaling;
  both sides derive the shared secret as kdf(seed || H(ct)).  Coefficients
  travel packed 12 bits each, uncompressed, so the decryption-failure rate
  is negligible (far below 2^-40 per bit).

New algorithms register at runtime via :func:`register_kem`; nothing in the
stack assumes the built-in sizes.

The module also carries the security-strength registry: effective classical
and quantum security levels for the common key-encryption algorithms.
"""

from __future__ import annotations

import functools
import hashlib
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CryptoError
from .primitives import Rng, kdf, modpow, sha256
from .ring import N, Q, negacyclic_mul

SHARED_SECRET_LEN = 32


class UnknownAlgorithm(CryptoError):
    pass


class MalformedKey(CryptoError):
    pass


class MalformedCiphertext(CryptoError):
    pass


@dataclass(frozen=True)
class KemKeyPair:
    alg: str
    public_key: bytes
    secret_key: bytes


@dataclass(frozen=True)
class KemCiphertext:
    alg: str
    data: bytes


@dataclass(frozen=True)
class SharedSecret:
    data: bytes

    def __post_init__(self) -> None:
        if len(self.data) != SHARED_SECRET_LEN:
            raise ValueError(f"shared secret must be {SHARED_SECRET_LEN} bytes")


class KemAlgorithm:
    """Backend interface: subclasses declare sizes and the three operations."""

    name: str
    code: int
    public_key_size: int
    secret_key_size: int
    ciphertext_size: int
    #: True when the backend can also run a raw two-sided exchange
    #: (both parties contribute key pairs), as classical DH does.
    supports_exchange: bool = False

    def keypair(self, rng: Rng) -> KemKeyPair:
        raise NotImplementedError

    def encaps(self, public_key: bytes, rng: Rng) -> tuple[KemCiphertext, SharedSecret]:
        raise NotImplementedError

    def decaps(self, secret_key: bytes, ciphertext: bytes) -> SharedSecret:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Classical finite-field backend


@dataclass(frozen=True)
class DhGroup:
    """A prime-order multiplicative group: modulus p and generator g."""

    name: str
    p: int
    g: int

    @property
    def element_size(self) -> int:
        return (self.p.bit_length() + 7) // 8


# The 2048-bit safe-prime group from the standard negotiated-FFDHE list.
_FFDHE_2048_P = int(
    "FFFFFFFFFFFFFFFFADF85458A2BB4A9AAFDC5620273D3CF1D8B9C583CE2D3695"
    "A9E13641146433FBCC939DCE249B3EF97D2FE363630C75D8F681B202AEC4617A"
    "D3DF1ED5D5FD65612433F51F5F066ED0856365553DED1AF3B557135E7F57C935"
    "984F0C70E0E68B77E2A689DAF3EFE8721DF158A136ADE73530ACCA4F483A797A"
    "BC0AB182B324FB61D108A94BB2C8E3FBB96ADAB760D7F4681D4F42A3DE394DF4"
    "AE56EDE76372BB190B07A7C8EE0A6D709E02FCE1CDF7E2ECC03404CD28342F61"
    "9172FE9CE98583FF8E4F1232EEF28183C3FE3B1B4C6FAD733BB5FCBC2EC22005"
    "C58EF1837D1683B2C6F34A26C1B2EFFA886B423861285C97FFFFFFFFFFFFFFFF",
    16,
)
FFDHE_2048 = DhGroup("ffdhe2048", _FFDHE_2048_P, 2)
TOY_GROUP = DhGroup("toy-23", 23, 5)  # test-only: p = 23, g = 5

_DH_CONTEXT = b"dh-kem"


class DhKem(KemAlgorithm):
    """Diffie-Hellman as a KEM: ct is an ephemeral public value."""

    def __init__(self, group: DhGroup = FFDHE_2048, name: str = "dh-2048", code: int = 0x0001):
        self.group = group
        self.name = name
        self.code = code
        size = group.element_size
        self.public_key_size = size
        self.secret_key_size = size
        self.ciphertext_size = size

    supports_exchange = True

    def _encode(self, value: int) -> bytes:
        return value.to_bytes(self.group.element_size, "big")

    def _decode_element(self, data: bytes, what: str) -> int:
        if len(data) != self.group.element_size:
            raise MalformedKey(
                f"{what} must be {self.group.element_size} bytes, got {len(data)}"
            )
        value = int.from_bytes(data, "big")
        if not 2 <= value <= self.group.p - 2:
            raise MalformedKey(f"{what} outside [2, p-2]")
        return value

    def _derive(self, shared_value: int) -> SharedSecret:
        return SharedSecret(kdf(self._encode(shared_value), _DH_CONTEXT, SHARED_SECRET_LEN))

    def keypair(self, rng: Rng) -> KemKeyPair:
        a = rng.uniform_int(2, self.group.p - 2)
        public = modpow(self.group.g, a, self.group.p)
        return KemKeyPair(self.name, self._encode(public), self._encode(a))

    def encaps(self, public_key: bytes, rng: Rng) -> tuple[KemCiphertext, SharedSecret]:
        peer = self._decode_element(public_key, "public key")
        b = rng.uniform_int(2, self.group.p - 2)
        ct = modpow(self.group.g, b, self.group.p)
        shared = modpow(peer, b, self.group.p)
        return KemCiphertext(self.name, self._encode(ct)), self._derive(shared)

    def decaps(self, secret_key: bytes, ciphertext: bytes) -> SharedSecret:
        if len(secret_key) != self.group.element_size:
            raise MalformedKey("secret key has wrong length")
        if len(ciphertext) != self.ciphertext_size:
            raise MalformedCiphertext("ciphertext has wrong length")
        a = int.from_bytes(secret_key, "big")
        peer = self._decode_element(ciphertext, "ciphertext")
        return self._derive(modpow(peer, a, self.group.p))

    def exchange(self, secret_key: bytes, peer_public: bytes) -> SharedSecret:
        """Two-sided exchange: derive the secret from own exponent and peer value."""
        a = int.from_bytes(secret_key, "big")
        peer = self._decode_element(peer_public, "peer public key")
        return self._derive(modpow(peer, a, self.group.p))


# ---------------------------------------------------------------------------
# Lattice backend

ETA = 2
SEED_LEN = 32
_POLY_PACKED = N * 12 // 8  # 384 bytes per polynomial
_LWE_CONTEXT = b"lwe-kem"


def pack12(coeffs: np.ndarray) -> bytes:
    """Pack coefficients in [0, 4095] at 12 bits each, two per 3 bytes."""
    a = coeffs.astype(np.uint32)
    c0, c1 = a[0::2], a[1::2]
    out = np.empty((len(c0), 3), dtype=np.uint8)
    out[:, 0] = c0 & 0xFF
    out[:, 1] = ((c0 >> 8) & 0x0F) | ((c1 & 0x0F) << 4)
    out[:, 2] = (c1 >> 4) & 0xFF
    return out.tobytes()


def unpack12(data: bytes) -> np.ndarray:
    arr = np.frombuffer(data, dtype=np.uint8).reshape(-1, 3).astype(np.int64)
    lo = arr[:, 0] | ((arr[:, 1] & 0x0F) << 8)
    hi = (arr[:, 1] >> 4) | (arr[:, 2] << 4)
    out = np.empty(2 * len(arr), dtype=np.int64)
    out[0::2] = lo
    out[1::2] = hi
    return out


@functools.lru_cache(maxsize=64)
def _expand_matrix(seed: bytes, k: int) -> np.ndarray:
    """Derive the k x k public matrix from a 32-byte seed (uniform mod q)."""
    mat = np.empty((k, k, N), dtype=np.int64)
    for i in range(k):
        for j in range(k):
            mat[i, j] = _uniform_poly(seed, i, j)
    mat.flags.writeable = False
    return mat


def _uniform_poly(seed: bytes, i: int, j: int) -> np.ndarray:
    out = np.empty(N, dtype=np.int64)
    filled = 0
    block = 0
    while filled < N:
        chunks = []
        for _ in range(16):
            chunks.append(
                hashlib.sha256(seed + bytes([i, j]) + struct.pack(">I", block)).digest()
            )
            block += 1
        buf = b"".join(chunks)
        raw = np.frombuffer(buf[: len(buf) // 3 * 3], dtype=np.uint8).reshape(-1, 3)
        raw = raw.astype(np.int64)
        cand = np.empty(2 * len(raw), dtype=np.int64)
        cand[0::2] = raw[:, 0] | ((raw[:, 1] & 0x0F) << 8)
        cand[1::2] = (raw[:, 1] >> 4) | (raw[:, 2] << 4)
        good = cand[cand < Q]
        take = min(N - filled, len(good))
        out[filled : filled + take] = good[:take]
        filled += take
    return out


def _cbd_poly(rng: Rng) -> np.ndarray:
    """Centered binomial noise, eta = 2: four stream bits per coefficient."""
    bits = np.unpackbits(np.frombuffer(rng.bytes(N // 2), dtype=np.uint8))
    coeffs = (bits[0::4].astype(np.int64) + bits[1::4]) - (bits[2::4].astype(np.int64) + bits[3::4])
    return np.mod(coeffs, Q)


def _matvec(mat: np.ndarray, vec: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((k, N), dtype=np.int64)
    for i in range(k):
        acc = np.zeros(2 * N - 1, dtype=np.int64)
        for j in range(k):
            acc += np.convolve(mat[i, j], vec[j])
        folded = acc[:N].copy()
        folded[: N - 1] -= acc[N:]
        out[i] = np.mod(folded, Q)
    return out


def _unpack_checked(data: bytes, what: str, exc: type[CryptoError]) -> np.ndarray:
    coeffs = unpack12(data)
    if coeffs.max(initial=0) >= Q:
        raise exc(f"{what} coefficient out of range")
    return coeffs


class LweKem(KemAlgorithm):
    """Module-lattice KEM at rank k; see the module docstring for parameters."""

    def __init__(self, k: int, name: str, code: int):
        self.k = k
        self.name = name
        self.code = code
        self.public_key_size = k * _POLY_PACKED + SEED_LEN
        self.secret_key_size = SEED_LEN + k * _POLY_PACKED
        self.ciphertext_size = (k + 1) * _POLY_PACKED

    def keypair(self, rng: Rng) -> KemKeyPair:
        k = self.k
        seed = rng.bytes(SEED_LEN)
        s = np.stack([_cbd_poly(rng) for _ in range(k)])
        e = np.stack([_cbd_poly(rng) for _ in range(k)])
        mat = _expand_matrix(seed, k)
        t = np.mod(_matvec(mat, s, k) + e, Q)
        public = pack12(t.reshape(-1)) + seed
        secret = seed + pack12(s.reshape(-1))
        return KemKeyPair(self.name, public, secret)

    def _parse_public(self, public_key: bytes) -> tuple[np.ndarray, bytes]:
        if len(public_key) != self.public_key_size:
            raise MalformedKey(
                f"public key must be {self.public_key_size} bytes, got {len(public_key)}"
            )
        t = _unpack_checked(public_key[:-SEED_LEN], "public key", MalformedKey)
        return t.reshape(self.k, N), public_key[-SEED_LEN:]

    def encaps(self, public_key: bytes, rng: Rng) -> tuple[KemCiphertext, SharedSecret]:
        k = self.k
        t, seed = self._parse_public(public_key)
        message = rng.bytes(SEED_LEN)
        r = np.stack([_cbd_poly(rng) for _ in range(k)])
        e1 = np.stack([_cbd_poly(rng) for _ in range(k)])
        e2 = _cbd_poly(rng)
        mat_t = _expand_matrix(seed, k).transpose(1, 0, 2)
        u = np.mod(_matvec(mat_t, r, k) + e1, Q)
        bits = np.unpackbits(np.frombuffer(message, dtype=np.uint8), bitorder="little")
        encoded = bits.astype(np.int64) * ((Q + 1) // 2)
        acc = np.zeros(2 * N - 1, dtype=np.int64)
        for i in range(k):
            acc += np.convolve(t[i], r[i])
        v = acc[:N].copy()
        v[: N - 1] -= acc[N:]
        v = np.mod(v + e2 + encoded, Q)
        ct = pack12(u.reshape(-1)) + pack12(v)
        return KemCiphertext(self.name, ct), self._derive(message, ct)

    def decaps(self, secret_key: bytes, ciphertext: bytes) -> SharedSecret:
        k = self.k
        if len(secret_key) != self.secret_key_size:
            raise MalformedKey(
                f"secret key must be {self.secret_key_size} bytes, got {len(secret_key)}"
            )
        if len(ciphertext) != self.ciphertext_size:
            raise MalformedCiphertext(
                f"ciphertext must be {self.ciphertext_size} bytes, got {len(ciphertext)}"
            )
        s = _unpack_checked(secret_key[SEED_LEN:], "secret key", MalformedKey).reshape(k, N)
        u = _unpack_checked(ciphertext[: k * _POLY_PACKED], "ciphertext", MalformedCiphertext)
        u = u.reshape(k, N)
        v = _unpack_checked(ciphertext[k * _POLY_PACKED :], "ciphertext", MalformedCiphertext)
        acc = np.zeros(2 * N - 1, dtype=np.int64)
        for i in range(k):
            acc += np.convolve(s[i], u[i])
        su = acc[:N].copy()
        su[: N - 1] -= acc[N:]
        w = np.mod(v - su, Q)
        bits = (((2 * w + Q // 2) // Q) & 1).astype(np.uint8)
        message = np.packbits(bits, bitorder="little").tobytes()
        return self._derive(message, ciphertext)

    def _derive(self, message: bytes, ciphertext: bytes) -> SharedSecret:
        return SharedSecret(kdf(message + sha256(ciphertext), _LWE_CONTEXT, SHARED_SECRET_LEN))


# ---------------------------------------------------------------------------
# Registry

_BY_NAME: dict[str, KemAlgorithm] = {}
_BY_CODE: dict[int, KemAlgorithm] = {}


def register_kem(alg: KemAlgorithm, replace: bool = False) -> None:
    if not replace and (alg.name in _BY_NAME or alg.code in _BY_CODE):
        raise ValueError(f"KEM {alg.name!r} / {alg.code:#06x} already registered")
    if not 0 <= alg.code <= 0xFFFF:
        raise ValueError("algorithm code must fit 16 bits")
    _BY_NAME[alg.name] = alg
    _BY_CODE[alg.code] = alg


def unregister_kem(name: str) -> None:
    alg = _BY_NAME.pop(name, None)
    if alg is not None:
        _BY_CODE.pop(alg.code, None)


def get_kem(name: str) -> KemAlgorithm:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnknownAlgorithm(f"unknown KEM algorithm {name!r}") from None


def get_kem_by_code(code: int) -> KemAlgorithm:
    try:
        return _BY_CODE[code]
    except KeyError:
        raise UnknownAlgorithm(f"unknown KEM code {code:#06x}") from None


def kem_names() -> list[str]:
    return sorted(_BY_NAME)


register_kem(DhKem())
register_kem(LweKem(2, "lwe-512", 0x0101))
register_kem(LweKem(3, "lwe-768", 0x0102))
register_kem(LweKem(4, "lwe-1024", 0x0103))

DEFAULT_KEM = "lwe-768"


def kem_keypair(alg: str, rng: Rng) -> KemKeyPair:
    return get_kem(alg).keypair(rng)


def kem_encaps(alg: str, public_key: bytes, rng: Rng) -> tuple[KemCiphertext, SharedSecret]:
    return get_kem(alg).encaps(public_key, rng)


def kem_decaps(alg: str, secret_key: bytes, ciphertext: KemCiphertext | bytes) -> SharedSecret:
    data = ciphertext.data if isinstance(ciphertext, KemCiphertext) else ciphertext
    return get_kem(alg).decaps(secret_key, data)


# ---------------------------------------------------------------------------
# Security-strength registry

@dataclass(frozen=True)
class SecurityProfile:
    label: str
    key_bits: int
    classical_bits: int
    quantum_bits: int

    @property
    def quantum_safe(self) -> bool:
        return self.quantum_bits > 0


SECURITY_PROFILES: dict[str, SecurityProfile] = {
    p.label: p
    for p in (
        SecurityProfile("RSA 1024", 1024, 80, 0),
        SecurityProfile("RSA 2048", 2048, 112, 0),
        SecurityProfile("ECC 256", 256, 128, 0),
        SecurityProfile("ECC 384", 384, 256, 0),
        SecurityProfile("AES 128", 128, 128, 64),
        SecurityProfile("AES 256", 256, 256, 128),
    )
}


def security_profile(label: str) -> SecurityProfile:
    try:
        return SECURITY_PROFILES[label]
    except KeyError:
        raise UnknownAlgorithm(f"no security profile for {label!r}") from None
