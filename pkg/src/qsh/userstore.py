"""User registry with salted, iterated password hashing.

One record per line: ``user_id:salt_hex:iterations:hash_hex`` (UTF-8, LF,
hex lowercase).  The hash chain is ``H(salt || password)`` re-hashed until
``iterations`` applications total.  Lookups for unknown users still burn a
full hash chain so response timing does not reveal whether the user exists,
and all comparisons are constant-time.
"""

from __future__ import annotations

import os
import tempfile
from dataclasses import dataclass

from .errors import QshError
from .primitives import Rng, SystemRng, constant_time_equal, sha256

SALT_LEN = 16
MIN_ITERATIONS = 1_000
DEFAULT_ITERATIONS = 10_000


class UserstoreError(QshError):
    pass


class DuplicateUser(UserstoreError):
    pass


@dataclass(frozen=True)
class UserRecord:
    user_id: str
    salt: bytes
    iterations: int
    password_hash: bytes

    def __post_init__(self) -> None:
        if not self.user_id or ":" in self.user_id:
            raise UserstoreError("user_id must be non-empty and contain no colons")
        if len(self.salt) != SALT_LEN:
            raise UserstoreError(f"salt must be {SALT_LEN} bytes")
        if self.iterations < MIN_ITERATIONS:
            raise UserstoreError(f"iterations must be at least {MIN_ITERATIONS}")
        if len(self.password_hash) != 32:
            raise UserstoreError("password hash must be 32 bytes")


def hash_password(salt: bytes, password: str, iterations: int) -> bytes:
    digest = sha256(salt + password.encode())
    for _ in range(iterations - 1):
        digest = sha256(digest)
    return digest


class UserStore:
    def __init__(self) -> None:
        self._records: dict[str, UserRecord] = {}

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, user_id: str) -> bool:
        return user_id in self._records

    def records(self) -> list[UserRecord]:
        return list(self._records.values())

    def add_user(
        self,
        user_id: str,
        password: str,
        iterations: int = DEFAULT_ITERATIONS,
        rng: Rng | None = None,
    ) -> None:
        if user_id in self._records:
            raise DuplicateUser(f"user {user_id!r} already registered")
        salt = (rng or SystemRng()).bytes(SALT_LEN)
        record = UserRecord(user_id, salt, iterations, hash_password(salt, password, iterations))
        self._records[user_id] = record

    def verify_password(self, user_id: str, password: str) -> bool:
        record = self._records.get(user_id)
        if record is None:
            # dummy computation keeps unknown-user timing in family
            hash_password(bytes(SALT_LEN), password, DEFAULT_ITERATIONS)
            return False
        computed = hash_password(record.salt, password, record.iterations)
        return constant_time_equal(computed, record.password_hash)


def save(store: UserStore, path) -> None:
    lines = [
        f"{r.user_id}:{r.salt.hex()}:{r.iterations}:{r.password_hash.hex()}\n"
        for r in store.records()
    ]
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".userstmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.writelines(lines)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load(path) -> UserStore:
    store = UserStore()
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            parts = line.split(":")
            if len(parts) != 4:
                raise UserstoreError(f"{path}: line {line_no}: expected 4 colon-separated fields")
            user_id, salt_hex, iter_text, hash_hex = parts
            try:
                record = UserRecord(
                    user_id, bytes.fromhex(salt_hex), int(iter_text), bytes.fromhex(hash_hex)
                )
            except (ValueError, UserstoreError) as exc:
                raise UserstoreError(f"{path}: line {line_no}: {exc}") from None
            if user_id in store:
                raise UserstoreError(f"{path}: line {line_no}: duplicate user {user_id!r}")
            store._records[user_id] = record
    return store
