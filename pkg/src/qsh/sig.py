"""Signature schemes behind one interface, classical and hash-based.

* ``rsa-2048-fdh`` -- textbook RSA with a full-domain hash: the message is
  expanded to one byte less than the modulus via the KDF, then exponentiated.
  Stateless; the secret index field stays 0.
* ``merkle-lamport-sha256`` -- a stateful one-time-signature tree of height
  8.  Every leaf is a Lamport key pair derived from a 32-byte master seed,
  the public key is the Merkle root, and each signature burns one leaf.
  Signing returns an advanced secret key; reusing an index would leak both
  preimages per digest bit, so callers must persist the returned state.
  The 257th signature raises :class:`KeyExhausted`.

Verification never raises on malformed input: any structural problem simply
yields ``False`` so certificate checks can treat all bad signatures alike.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from functools import lru_cache

from .errors import CryptoError
from .primitives import Rng, kdf, miller_rabin, modpow, sha256


class KeyExhausted(CryptoError):
    pass


class UnknownSigAlgorithm(CryptoError):
    pass


@dataclass(frozen=True)
class SigSecretKey:
    alg: str
    key: bytes
    index: int = 0


@dataclass(frozen=True)
class SigKeyPair:
    alg: str
    public_key: bytes
    secret: SigSecretKey


class SigAlgorithm:
    name: str
    code: int
    public_key_size: int
    secret_key_size: int
    signature_size: int
    stateful: bool = False

    def keypair(self, rng: Rng) -> SigKeyPair:
        raise NotImplementedError

    def sign(self, secret: SigSecretKey, message: bytes) -> tuple[bytes, SigSecretKey]:
        raise NotImplementedError

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        raise NotImplementedError


# ---------------------------------------------------------------------------
# RSA with full-domain hash

_RSA_E = 65537
_RSA_FDH_CONTEXT = b"rsa-fdh"
_PRIME_BUDGET = 10_000
_MR_ROUNDS = 40


class RsaFdhSig(SigAlgorithm):
    name = "rsa-2048-fdh"
    code = 0x0201
    modulus_size = 256  # bytes
    public_key_size = 256 + 4  # n || e
    secret_key_size = 256 + 256  # n || d
    signature_size = 256

    def _prime(self, rng: Rng) -> int:
        bits = self.modulus_size * 4  # half the modulus
        for _ in range(_PRIME_BUDGET):
            cand = int.from_bytes(rng.bytes(bits // 8), "big")
            cand |= (1 << (bits - 1)) | (1 << (bits - 2)) | 1
            if miller_rabin(cand, _MR_ROUNDS, rng):
                return cand
        raise CryptoError("prime generation budget exhausted")

    def keypair(self, rng: Rng) -> SigKeyPair:
        while True:
            p = self._prime(rng)
            q = self._prime(rng)
            if p == q:
                continue
            lam = math.lcm(p - 1, q - 1)
            if math.gcd(_RSA_E, lam) != 1:
                continue
            n = p * q
            d = pow(_RSA_E, -1, lam)
            public = n.to_bytes(self.modulus_size, "big") + struct.pack(">I", _RSA_E)
            secret = n.to_bytes(self.modulus_size, "big") + d.to_bytes(self.modulus_size, "big")
            return SigKeyPair(self.name, public, SigSecretKey(self.name, secret))

    def _digest_int(self, message: bytes) -> int:
        # One byte short of the modulus keeps the value below n.
        return int.from_bytes(kdf(message, _RSA_FDH_CONTEXT, self.modulus_size - 1), "big")

    def sign(self, secret: SigSecretKey, message: bytes) -> tuple[bytes, SigSecretKey]:
        if len(secret.key) != self.secret_key_size:
            raise CryptoError("RSA secret key has wrong length")
        n = int.from_bytes(secret.key[: self.modulus_size], "big")
        d = int.from_bytes(secret.key[self.modulus_size :], "big")
        sig = modpow(self._digest_int(message), d, n)
        return sig.to_bytes(self.modulus_size, "big"), secret

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        if len(public_key) != self.public_key_size or len(signature) != self.signature_size:
            return False
        n = int.from_bytes(public_key[: self.modulus_size], "big")
        (e,) = struct.unpack(">I", public_key[self.modulus_size :])
        s = int.from_bytes(signature, "big")
        if not 0 < s < n:
            return False
        return modpow(s, e, n) == self._digest_int(message)


# ---------------------------------------------------------------------------
# Merkle tree of Lamport one-time keys

TREE_HEIGHT = 8
LEAVES = 1 << TREE_HEIGHT
_DIGEST_BITS = 256
_OTS_CONTEXT = b"ml-ots"


def _leaf_secret(seed: bytes, leaf: int, pos: int, bit: int) -> bytes:
    return kdf(seed, _OTS_CONTEXT + struct.pack(">IHB", leaf, pos, bit), 32)


def _leaf_public(seed: bytes, leaf: int) -> bytes:
    parts = []
    for pos in range(_DIGEST_BITS):
        parts.append(sha256(_leaf_secret(seed, leaf, pos, 0)))
        parts.append(sha256(_leaf_secret(seed, leaf, pos, 1)))
    return sha256(b"".join(parts))


@lru_cache(maxsize=16)
def _tree_levels(seed: bytes) -> tuple[tuple[bytes, ...], ...]:
    # memoized per seed: the tree never changes, and rebuilding it costs
    # hundreds of milliseconds per signature otherwise
    levels = [tuple(_leaf_public(seed, i) for i in range(LEAVES))]
    while len(levels[-1]) > 1:
        prev = levels[-1]
        levels.append(tuple(sha256(prev[i] + prev[i + 1]) for i in range(0, len(prev), 2)))
    return tuple(levels)


class MerkleLamportSig(SigAlgorithm):
    name = "merkle-lamport-sha256"
    code = 0x0301
    public_key_size = 32
    secret_key_size = 32  # master seed; the index travels separately
    # index || (secret, sibling hash) per digest bit || authentication path
    signature_size = 4 + _DIGEST_BITS * 64 + TREE_HEIGHT * 32
    stateful = True

    def keypair(self, rng: Rng) -> SigKeyPair:
        seed = rng.bytes(32)
        root = _tree_levels(seed)[-1][0]
        return SigKeyPair(self.name, root, SigSecretKey(self.name, seed, 0))

    def sign(self, secret: SigSecretKey, message: bytes) -> tuple[bytes, SigSecretKey]:
        if len(secret.key) != self.secret_key_size:
            raise CryptoError("master seed has wrong length")
        index = secret.index
        if index >= LEAVES:
            raise KeyExhausted(f"all {LEAVES} one-time keys consumed")
        seed = secret.key
        digest = sha256(message)
        parts = [struct.pack(">I", index)]
        for pos in range(_DIGEST_BITS):
            bit = (digest[pos >> 3] >> (7 - (pos & 7))) & 1
            parts.append(_leaf_secret(seed, index, pos, bit))
            parts.append(sha256(_leaf_secret(seed, index, pos, 1 - bit)))
        levels = _tree_levels(seed)
        node = index
        for level in range(TREE_HEIGHT):
            parts.append(levels[level][node ^ 1])
            node >>= 1
        return b"".join(parts), replace(secret, index=index + 1)

    def verify(self, public_key: bytes, message: bytes, signature: bytes) -> bool:
        if len(public_key) != self.public_key_size or len(signature) != self.signature_size:
            return False
        (index,) = struct.unpack(">I", signature[:4])
        if index >= LEAVES:
            return False
        digest = sha256(message)
        offset = 4
        hashes = []
        for pos in range(_DIGEST_BITS):
            revealed = signature[offset : offset + 32]
            sibling = signature[offset + 32 : offset + 64]
            offset += 64
            bit = (digest[pos >> 3] >> (7 - (pos & 7))) & 1
            pair = [sibling, sibling]
            pair[bit] = sha256(revealed)
            hashes.extend(pair)
        node = sha256(b"".join(hashes))
        walk = index
        for _ in range(TREE_HEIGHT):
            sibling = signature[offset : offset + 32]
            offset += 32
            if walk & 1:
                node = sha256(sibling + node)
            else:
                node = sha256(node + sibling)
            walk >>= 1
        return node == public_key


# ---------------------------------------------------------------------------
# Registry

_BY_NAME: dict[str, SigAlgorithm] = {}
_BY_CODE: dict[int, SigAlgorithm] = {}


def register_sig(alg: SigAlgorithm, replace_existing: bool = False) -> None:
    if not replace_existing and (alg.name in _BY_NAME or alg.code in _BY_CODE):
        raise ValueError(f"signature scheme {alg.name!r} / {alg.code:#06x} already registered")
    if not 0 <= alg.code <= 0xFFFF:
        raise ValueError("algorithm code must fit 16 bits")
    _BY_NAME[alg.name] = alg
    _BY_CODE[alg.code] = alg


def get_sig(name: str) -> SigAlgorithm:
    try:
        return _BY_NAME[name]
    except KeyError:
        raise UnknownSigAlgorithm(f"unknown signature scheme {name!r}") from None


def get_sig_by_code(code: int) -> SigAlgorithm:
    try:
        return _BY_CODE[code]
    except KeyError:
        raise UnknownSigAlgorithm(f"unknown signature code {code:#06x}") from None


def sig_names() -> list[str]:
    return sorted(_BY_NAME)


register_sig(RsaFdhSig())
register_sig(MerkleLamportSig())
