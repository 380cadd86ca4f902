"""Hash, KDF, AEAD, modular arithmetic, and RNG behavior."""

import hashlib
import hmac as hmac_mod
import struct

import pytest

from qsh.primitives import (
    DIGEST_LEN,
    KDF_MAX_LEN,
    KEY_LEN,
    NONCE_LEN,
    TAG_LEN,
    AeadAuthError,
    AeadBox,
    SeededRng,
    SystemRng,
    aead_decrypt,
    aead_encrypt,
    constant_time_equal,
    hmac_sha256,
    kdf,
    miller_rabin,
    modpow,
    random_bytes,
    sha256,
)


def test_sha256_known_answer():
    assert sha256(b"abc").hex() == (
        "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    )
    assert sha256(b"") == hashlib.sha256(b"").digest()
    assert len(sha256(b"x" * 1000)) == DIGEST_LEN


def test_hmac_matches_stdlib():
    rng = SeededRng(b"hmac-oracle")
    for _ in range(50):
        key = rng.bytes(rng.uniform_int(0, 64))
        msg = rng.bytes(rng.uniform_int(0, 200))
        expected = hmac_mod.new(key, msg, hashlib.sha256).digest()
        assert hmac_sha256(key, msg) == expected


def test_constant_time_equal():
    assert constant_time_equal(b"abc", b"abc")
    assert not constant_time_equal(b"abc", b"abd")
    assert not constant_time_equal(b"abc", b"abcd")
    assert constant_time_equal(b"", b"")


def _kdf_oracle(secret: bytes, context: bytes, out_len: int) -> bytes:
    # independent transcription of the documented extract-then-expand scheme
    prk = hmac_mod.new(b"\x00" * 32, secret, hashlib.sha256).digest()
    out = b""
    block = b""
    counter = 1
    while len(out) < out_len:
        block = hmac_mod.new(prk, block + context + bytes([counter]), hashlib.sha256).digest()
        out += block
        counter += 1
    return out[:out_len]


def test_kdf_matches_oracle():
    rng = SeededRng(b"kdf-oracle")
    for _ in range(40):
        secret = rng.bytes(rng.uniform_int(1, 64))
        context = rng.bytes(rng.uniform_int(0, 32))
        out_len = rng.uniform_int(1, 200)
        assert kdf(secret, context, out_len) == _kdf_oracle(secret, context, out_len)


def test_kdf_length_and_context_separation():
    secret = b"\x01" * 32
    assert len(kdf(secret, b"a", 1)) == 1
    assert len(kdf(secret, b"a", KDF_MAX_LEN)) == KDF_MAX_LEN
    assert kdf(secret, b"a", 32) != kdf(secret, b"b", 32)
    assert kdf(secret, b"a", 32) == kdf(secret, b"a", 64)[:32]
    for bad in (0, -1, KDF_MAX_LEN + 1):
        with pytest.raises(ValueError):
            kdf(secret, b"a", bad)


def _aead_oracle(key: bytes, nonce: bytes, plaintext: bytes, ad: bytes):
    # encrypt-then-MAC, reimplemented from the documented construction
    if plaintext:
        stream = _kdf_oracle(key, b"aead-stream" + nonce, len(plaintext))
        ciphertext = bytes(p ^ s for p, s in zip(plaintext, stream))
    else:
        ciphertext = b""
    mac_key = _kdf_oracle(key, b"aead-mac" + nonce, 32)
    tag = hmac_mod.new(
        mac_key, struct.pack(">Q", len(ad)) + ad + ciphertext, hashlib.sha256
    ).digest()
    return ciphertext, tag


def test_aead_matches_oracle():
    rng = SeededRng(b"aead-oracle")
    for _ in range(40):
        key = rng.bytes(KEY_LEN)
        nonce = rng.bytes(NONCE_LEN)
        plaintext = rng.bytes(rng.uniform_int(0, 300))
        ad = rng.bytes(rng.uniform_int(0, 50))
        box = aead_encrypt(key, nonce, plaintext, ad)
        ct, tag = _aead_oracle(key, nonce, plaintext, ad)
        assert box.ciphertext == ct
        assert box.tag == tag
        assert aead_decrypt(key, box, ad) == plaintext


def test_aead_roundtrip_1000():
    rng = SeededRng(b"aead-roundtrip")
    for _ in range(1000):
        key = rng.bytes(KEY_LEN)
        nonce = rng.bytes(NONCE_LEN)
        plaintext = rng.bytes(rng.uniform_int(0, 120))
        ad = rng.bytes(rng.uniform_int(0, 20))
        box = aead_encrypt(key, nonce, plaintext, ad)
        assert aead_decrypt(key, box, ad) == plaintext


def test_aead_bit_corruption_1000():
    rng = SeededRng(b"aead-corrupt")
    for _ in range(1000):
        key = rng.bytes(KEY_LEN)
        nonce = rng.bytes(NONCE_LEN)
        plaintext = rng.bytes(rng.uniform_int(1, 80))
        ad = rng.bytes(rng.uniform_int(1, 20))
        box = aead_encrypt(key, nonce, plaintext, ad)
        target = rng.uniform_int(0, 3)
        flip = lambda b, i: b[:i] + bytes([b[i] ^ (1 << rng.uniform_int(0, 7))]) + b[i + 1 :]
        if target == 0:
            box = AeadBox(flip(box.nonce, rng.uniform_int(0, NONCE_LEN - 1)), box.ciphertext, box.tag)
        elif target == 1:
            box = AeadBox(box.nonce, flip(box.ciphertext, rng.uniform_int(0, len(box.ciphertext) - 1)), box.tag)
        elif target == 2:
            box = AeadBox(box.nonce, box.ciphertext, flip(box.tag, rng.uniform_int(0, TAG_LEN - 1)))
        else:
            ad = flip(ad, rng.uniform_int(0, len(ad) - 1))
        with pytest.raises(AeadAuthError):
            aead_decrypt(key, box, ad)


def test_aead_rejects_bad_lengths():
    key = b"\x00" * KEY_LEN
    nonce = b"\x00" * NONCE_LEN
    with pytest.raises(ValueError):
        aead_encrypt(key[:-1], nonce, b"x")
    with pytest.raises(ValueError):
        aead_encrypt(key, nonce[:-1], b"x")
    with pytest.raises(ValueError):
        AeadBox(nonce[:-1], b"", b"\x00" * TAG_LEN)
    with pytest.raises(ValueError):
        AeadBox(nonce, b"", b"\x00" * (TAG_LEN - 1))
    box = aead_encrypt(key, nonce, b"x")
    with pytest.raises(ValueError):
        aead_decrypt(key[:-1], box)


def test_modpow_matches_builtin():
    rng = SeededRng(b"modpow")
    for _ in range(200):
        base = rng.uniform_int(0, 1 << 256)
        exp = rng.uniform_int(0, 1 << 64)
        modulus = rng.uniform_int(2, 1 << 256)
        assert modpow(base, exp, modulus) == pow(base, exp, modulus)
    assert modpow(0, 0, 5) == 1
    with pytest.raises(ValueError):
        modpow(2, 3, 1)
    with pytest.raises(ValueError):
        modpow(2, -1, 5)


def _is_prime_trial(n: int) -> bool:
    if n < 2:
        return False
    i = 2
    while i * i <= n:
        if n % i == 0:
            return False
        i += 1
    return True


def test_miller_rabin_agrees_with_trial_division_below_10000():
    rng = SeededRng(b"miller-rabin")
    for n in range(2, 10_000):
        assert miller_rabin(n, 20, rng) == _is_prime_trial(n), f"disagree at {n}"
    for n in (-5, 0, 1):
        with pytest.raises(ValueError):
            miller_rabin(n, 20, rng)


def test_seeded_rng_reproducible_and_derivable():
    a = SeededRng(b"seed")
    b = SeededRng(b"seed")
    assert a.bytes(100) == b.bytes(100)
    assert a.bytes(10) == b.bytes(10)
    # child streams are independent of the parent position and of each other
    parent = SeededRng(b"seed")
    child1 = parent.derive(b"one")
    child2 = parent.derive(b"two")
    assert child1.bytes(32) != child2.bytes(32)
    assert SeededRng(b"seed").derive(b"one").bytes(32) == SeededRng(b"seed").derive(b"one").bytes(32)


def test_rng_integer_helpers():
    rng = SeededRng(b"ints")
    seen = set()
    for _ in range(500):
        v = rng.uniform_int(3, 9)
        assert 3 <= v <= 9
        seen.add(v)
    assert seen == set(range(3, 10))
    for _ in range(100):
        assert 0 <= rng.randbelow(7) < 7
    with pytest.raises(ValueError):
        rng.randbelow(0)
    with pytest.raises(ValueError):
        rng.uniform_int(5, 4)
    with pytest.raises(ValueError):
        rng.bytes(-1)


def test_system_rng_and_random_bytes():
    assert len(SystemRng().bytes(16)) == 16
    assert len(random_bytes(8)) == 8
    assert random_bytes(16, SeededRng(b"r")) == SeededRng(b"r").bytes(16)
    with pytest.raises(ValueError):
        SystemRng().bytes(-1)
