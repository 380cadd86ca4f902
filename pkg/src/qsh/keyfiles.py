"""Binary key files: ``alg_code (2 BE) || key_len (4 BE) || key bytes``.

Public keys use a ``.pk`` suffix, secret keys ``.sk``.  Signature secret
keys carry the stateful next-leaf index appended as 8 big-endian bytes
(always 0 for stateless schemes); rewrites are atomic so an interrupted
signature never loses index state.
"""

from __future__ import annotations

import os
import struct
import tempfile

from .errors import CryptoError
from .kem import get_kem_by_code
from .sig import SigSecretKey, get_sig, get_sig_by_code

PUBLIC_SUFFIX = ".pk"
SECRET_SUFFIX = ".sk"


class KeyFileError(CryptoError):
    pass


def _atomic_write(path: str, data: bytes) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".keytmp-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _encode(code: int, key: bytes, index: int | None = None) -> bytes:
    blob = struct.pack(">HI", code, len(key)) + key
    if index is not None:
        blob += struct.pack(">Q", index)
    return blob


def _decode(data: bytes, path: str) -> tuple[int, bytes, int | None]:
    if len(data) < 6:
        raise KeyFileError(f"{path}: truncated key file header")
    code, key_len = struct.unpack_from(">HI", data)
    if len(data) < 6 + key_len:
        raise KeyFileError(f"{path}: truncated key material")
    key = data[6 : 6 + key_len]
    rest = data[6 + key_len :]
    if not rest:
        return code, key, None
    if len(rest) != 8:
        raise KeyFileError(f"{path}: {len(rest)} trailing bytes (expected 8-byte index)")
    return code, key, struct.unpack(">Q", rest)[0]


def write_key(path: str, code: int, key: bytes, index: int | None = None) -> None:
    _atomic_write(path, _encode(code, key, index))


def read_key(path: str) -> tuple[int, bytes, int | None]:
    with open(path, "rb") as fh:
        return _decode(fh.read(), path)


def write_sig_secret(path: str, secret: SigSecretKey) -> None:
    write_key(path, get_sig(secret.alg).code, secret.key, secret.index)


def read_sig_secret(path: str) -> SigSecretKey:
    code, key, index = read_key(path)
    alg = get_sig_by_code(code)
    if index is None:
        raise KeyFileError(f"{path}: signature secret key lacks the 8-byte index")
    return SigSecretKey(alg.name, key, index)


def read_sig_public(path: str) -> tuple[str, bytes]:
    code, key, _ = read_key(path)
    return get_sig_by_code(code).name, key


def read_kem_public(path: str) -> tuple[str, bytes]:
    code, key, _ = read_key(path)
    return get_kem_by_code(code).name, key


def read_kem_secret(path: str) -> tuple[str, bytes]:
    code, key, _ = read_key(path)
    return get_kem_by_code(code).name, key
