"""Core cryptographic building blocks.

Everything here is deliberately built from SHA-256 plus arbitrary-precision
integers so that every operation has an obvious independent oracle:

* ``sha256`` / ``hmac_sha256``  -- the one hash everything else reuses
* ``kdf``                       -- extract-then-expand key derivation
* ``aead_encrypt`` / ``aead_decrypt`` -- keystream XOR + keyed-hash MAC
  (encrypt-then-MAC, tag over ad-length || ad || ciphertext)
* ``modpow`` / ``miller_rabin`` -- modular arithmetic for the classical
  key-exchange and signature baselines
* ``SystemRng`` / ``SeededRng`` -- CSPRNG plus a deterministic stream for
  reproducible tests and captures

Tag and password-hash comparisons go through ``hmac.compare_digest``; that
constant-time contract is part of the module interface.
"""

from __future__ import annotations

import hashlib
import hmac
import os
import struct
from dataclasses import dataclass

from .errors import CryptoError

try:
    from gmpy2 import powmod as _powmod
except ImportError:  # pragma: no cover - gmpy2 is a declared dependency
    _powmod = pow

DIGEST_LEN = 32
KEY_LEN = 32
NONCE_LEN = 12
TAG_LEN = 32
KDF_MAX_LEN = 255 * DIGEST_LEN  # 8160, the expand-stage ceiling


class AeadAuthError(CryptoError):
    """Authentication failed: the box was tampered with or the key is wrong."""


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def hmac_sha256(key: bytes, data: bytes) -> bytes:
    return hmac.new(key, data, hashlib.sha256).digest()


def constant_time_equal(a: bytes, b: bytes) -> bool:
    return hmac.compare_digest(a, b)


def kdf(secret: bytes, context: bytes, out_len: int) -> bytes:
    """Derive ``out_len`` bytes from ``secret`` bound to ``context``.

    Extract-then-expand over HMAC-SHA256 with a fixed all-zero salt.
    Output length is capped at 255 hash blocks (8160 bytes).
    """
    if not 1 <= out_len <= KDF_MAX_LEN:
        raise ValueError(f"kdf output length {out_len} outside [1, {KDF_MAX_LEN}]")
    prk = hmac_sha256(b"\x00" * DIGEST_LEN, secret)
    blocks = []
    prev = b""
    for i in range((out_len + DIGEST_LEN - 1) // DIGEST_LEN):
        prev = hmac_sha256(prk, prev + context + bytes([i + 1]))
        blocks.append(prev)
    return b"".join(blocks)[:out_len]


@dataclass(frozen=True)
class AeadBox:
    """One authenticated ciphertext: nonce, ciphertext, and 32-byte tag."""

    nonce: bytes
    ciphertext: bytes
    tag: bytes

    def __post_init__(self) -> None:
        if len(self.nonce) != NONCE_LEN:
            raise ValueError(f"nonce must be {NONCE_LEN} bytes, got {len(self.nonce)}")
        if len(self.tag) != TAG_LEN:
            raise ValueError(f"tag must be {TAG_LEN} bytes, got {len(self.tag)}")


def _xor_stream(key: bytes, nonce: bytes, data: bytes) -> bytes:
    if not data:
        return b""
    stream = kdf(key, b"aead-stream" + nonce, len(data))
    n = len(data)
    x = int.from_bytes(data, "big") ^ int.from_bytes(stream, "big")
    return x.to_bytes(n, "big")


def _mac(key: bytes, nonce: bytes, ad: bytes, ciphertext: bytes) -> bytes:
    mac_key = kdf(key, b"aead-mac" + nonce, KEY_LEN)
    return hmac_sha256(mac_key, struct.pack(">Q", len(ad)) + ad + ciphertext)


def aead_encrypt(key: bytes, nonce: bytes, plaintext: bytes, ad: bytes = b"") -> AeadBox:
    """Encrypt-then-MAC under a 256-bit key; ``ad`` is authenticated only."""
    if len(key) != KEY_LEN:
        raise ValueError(f"key must be {KEY_LEN} bytes, got {len(key)}")
    if len(nonce) != NONCE_LEN:
        raise ValueError(f"nonce must be {NONCE_LEN} bytes, got {len(nonce)}")
    ciphertext = _xor_stream(key, nonce, plaintext)
    return AeadBox(nonce, ciphertext, _mac(key, nonce, ad, ciphertext))


def aead_decrypt(key: bytes, box: AeadBox, ad: bytes = b"") -> bytes:
    """Return the plaintext, or raise :class:`AeadAuthError` without leaking it."""
    if len(key) != KEY_LEN:
        raise ValueError(f"key must be {KEY_LEN} bytes, got {len(key)}")
    expected = _mac(key, box.nonce, ad, box.ciphertext)
    if not hmac.compare_digest(expected, box.tag):
        raise AeadAuthError("authentication tag mismatch")
    return _xor_stream(key, box.nonce, box.ciphertext)


def modpow(base: int, exp: int, modulus: int) -> int:
    """base**exp mod modulus via square-and-multiply (GMP-backed)."""
    if modulus < 2:
        raise ValueError(f"modulus must be >= 2, got {modulus}")
    if exp < 0:
        raise ValueError("negative exponents not supported")
    return int(_powmod(base, exp, modulus))


_SMALL_PRIMES = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47)


def miller_rabin(n: int, rounds: int, rng: "Rng") -> bool:
    """Probabilistic primality: False is certain, True errs with prob <= 4**-rounds."""
    if n < 2:
        raise ValueError("n must be >= 2")
    if n in _SMALL_PRIMES:
        return True
    if n % 2 == 0:
        return False
    for p in _SMALL_PRIMES:
        if n % p == 0:
            return False
    d = n - 1
    s = 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for _ in range(rounds):
        a = rng.uniform_int(2, n - 2)
        x = modpow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = modpow(x, 2, n)
            if x == n - 1:
                break
        else:
            return False
    return True


class Rng:
    """Byte-stream randomness source; integer helpers are rejection-sampled."""

    def bytes(self, n: int) -> bytes:
        raise NotImplementedError

    def randbelow(self, n: int) -> int:
        if n <= 0:
            raise ValueError("randbelow needs n >= 1")
        nbits = n.bit_length()
        nbytes = (nbits + 7) // 8
        mask = (1 << nbits) - 1
        while True:
            candidate = int.from_bytes(self.bytes(nbytes), "big") & mask
            if candidate < n:
                return candidate

    def uniform_int(self, lo: int, hi: int) -> int:
        """Uniform integer in the inclusive range [lo, hi]."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.randbelow(hi - lo + 1)

    def derive(self, label: bytes) -> "Rng":
        """Independent child stream; the system source just returns itself."""
        return self


class SystemRng(Rng):
    """Operating-system CSPRNG."""

    def bytes(self, n: int) -> bytes:
        if n < 0:
            raise ValueError("n must be >= 0")
        return os.urandom(n)


class SeededRng(Rng):
    """Deterministic stream for tests: block i is SHA-256(seed || counter).

    Single-owner by contract; not for production key material.
    """

    def __init__(self, seed: bytes):
        self._seed = bytes(seed)
        self._counter = 0
        self._buffer = b""

    def bytes(self, n: int) -> bytes:
        if n < 0:
            raise ValueError("n must be >= 0")
        while len(self._buffer) < n:
            block = sha256(self._seed + struct.pack(">Q", self._counter))
            self._counter += 1
            self._buffer += block
        out, self._buffer = self._buffer[:n], self._buffer[n:]
        return out

    def derive(self, label: bytes) -> "SeededRng":
        return SeededRng(sha256(self._seed + label))


def random_bytes(n: int, rng: Rng | None = None) -> bytes:
    return (rng or SystemRng()).bytes(n)
