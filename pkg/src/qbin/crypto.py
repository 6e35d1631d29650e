"""Owner key: randomized authenticated encryption plus keyed search tokens."""

from __future__ import annotations

import hmac
import json
import os
import struct
from hashlib import sha256

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .errors import KeyReuseError, TamperError

SCHEME = {"cipher": "AES-256-GCM", "token": "HMAC-SHA256", "kdf": "HKDF-SHA256"}
NONCE_LEN = 12
TOKEN_LEN = 32


def _derive(master: bytes, label: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=label).derive(master)


def _field(b: bytes) -> bytes:
    return struct.pack(">I", len(b)) + b


class OwnerKey:
    """Master secret held only by the data owner.

    A key is bound to the first store it outsources to and refuses any other.
    """

    def __init__(self, master: bytes | None = None, bound_store: str | None = None):
        self._master = master if master is not None else os.urandom(32)
        if len(self._master) != 32:
            raise ValueError("master key must be 32 bytes")
        self._aead = AESGCM(_derive(self._master, b"qbin/encrypt"))
        self._tok = _derive(self._master, b"qbin/token")
        self.bound_store = bound_store

    @property
    def fingerprint(self) -> str:
        return sha256(b"qbin/fp" + self._master).hexdigest()[:16]

    def bind(self, store_id: str) -> None:
        if self.bound_store is not None and self.bound_store != store_id:
            raise KeyReuseError(f"key already used for store {self.bound_store}")
        self.bound_store = store_id

    def encrypt(self, plaintext: bytes, aad: bytes = b"") -> bytes:
        nonce = os.urandom(NONCE_LEN)
        return nonce + self._aead.encrypt(nonce, plaintext, aad)

    def decrypt(self, blob: bytes, aad: bytes = b"") -> bytes:
        if len(blob) < NONCE_LEN + 16:
            raise TamperError("ciphertext too short")
        try:
            return self._aead.decrypt(blob[:NONCE_LEN], blob[NONCE_LEN:], aad)
        except InvalidTag as e:
            raise TamperError("ciphertext failed authentication") from e

    def token(self, attribute: str, value: str, occurrence: int) -> bytes:
        """Deterministic token for the ``occurrence``-th (1-based) copy of ``value``."""
        msg = _field(attribute.encode()) + _field(value.encode()) + struct.pack(">Q", occurrence)
        return hmac.new(self._tok, msg, sha256).digest()

    # key file: hex master plus the bound store id
    def save(self, path) -> None:
        tmp = f"{path}.tmp"
        fd = os.open(tmp, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o600)
        with os.fdopen(fd, "w") as fh:
            json.dump({"master": self._master.hex(), "bound_store": self.bound_store}, fh)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path) -> "OwnerKey":
        with open(path) as fh:
            d = json.load(fh)
        return cls(bytes.fromhex(d["master"]), d.get("bound_store"))
