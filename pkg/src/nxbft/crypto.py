"""Thin wrappers over ``cryptography`` primitives.

Ed25519 is used for every signature (replica keys and enclave keys). It is
deterministic, which keeps simulation traces reproducible. Seed shares are
encrypted with an X25519/HKDF/ChaCha20-Poly1305 construction.
"""

from __future__ import annotations

import hashlib
import os
from functools import lru_cache
from typing import Callable

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

Entropy = Callable[[int], bytes]

_RAW = serialization.Encoding.Raw
_RAW_PUB = serialization.PublicFormat.Raw
_RAW_PRIV = serialization.PrivateFormat.Raw
_NOENC = serialization.NoEncryption()


def system_entropy(size: int) -> bytes:
    return os.urandom(size)


def seeded_entropy(seed: bytes) -> Entropy:
    """Deterministic entropy stream (SHAKE-256 over seed and a call counter); simulations only."""
    counter = 0

    def draw(size: int) -> bytes:
        nonlocal counter
        counter += 1
        return hashlib.shake_256(seed + counter.to_bytes(8, "big")).digest(size)

    return draw


class SigningKey:
    """An Ed25519 signing key; ``public`` holds the raw 32-byte verify key."""

    __slots__ = ("_key", "public")

    def __init__(self, seed: bytes):
        if len(seed) != 32:
            raise ValueError("signing key seed must be 32 bytes")
        self._key = Ed25519PrivateKey.from_private_bytes(seed)
        self.public = self._key.public_key().public_bytes(_RAW, _RAW_PUB)

    @classmethod
    def generate(cls, entropy: Entropy = system_entropy) -> "SigningKey":
        return cls(entropy(32))

    def sign(self, message: bytes) -> bytes:
        return self._key.sign(message)

    def __repr__(self) -> str:
        return f"SigningKey(public={self.public.hex()[:16]}...)"


@lru_cache(maxsize=4096)
def _load_verify_key(public: bytes) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(public)


@lru_cache(maxsize=1 << 16)
def verify(public: bytes, message: bytes, signature: bytes) -> bool:
    """Pure signature check; memoised because every replica checks every vertex."""
    try:
        _load_verify_key(bytes(public)).verify(bytes(signature), bytes(message))
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


class KexKey:
    """X25519 key used only to receive encrypted seed shares."""

    __slots__ = ("_key", "public")

    def __init__(self, seed: bytes):
        self._key = X25519PrivateKey.from_private_bytes(seed)
        self.public = self._key.public_key().public_bytes(_RAW, _RAW_PUB)

    def decrypt(self, blob: bytes, aad: bytes) -> bytes:
        if len(blob) < 32 + 12 + 16:
            raise ValueError("ciphertext too short")
        eph, nonce, body = blob[:32], blob[32:44], blob[44:]
        shared = self._key.exchange(X25519PublicKey.from_public_bytes(eph))
        key = _hkdf(shared, eph + self.public)
        try:
            return ChaCha20Poly1305(key).decrypt(nonce, body, aad)
        except InvalidTag as exc:
            raise ValueError("authentication failed") from exc


def encrypt_to(recipient: bytes, plaintext: bytes, aad: bytes, entropy: Entropy) -> bytes:
    """Encrypt ``plaintext`` to the X25519 public key ``recipient``."""
    eph = X25519PrivateKey.from_private_bytes(entropy(32))
    eph_pub = eph.public_key().public_bytes(_RAW, _RAW_PUB)
    shared = eph.exchange(X25519PublicKey.from_public_bytes(recipient))
    key = _hkdf(shared, eph_pub + recipient)
    nonce = entropy(12)
    return eph_pub + nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, aad)


def _hkdf(secret: bytes, info: bytes) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=32, salt=None, info=b"nxbft-share" + info).derive(secret)


def aead_seal(key: bytes, plaintext: bytes, aad: bytes, entropy: Entropy) -> bytes:
    nonce = entropy(12)
    return nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, aad)


def aead_open(key: bytes, blob: bytes, aad: bytes) -> bytes:
    if len(blob) < 12 + 16:
        raise ValueError("sealed blob too short")
    try:
        return ChaCha20Poly1305(key).decrypt(blob[:12], blob[12:], aad)
    except InvalidTag as exc:
        raise ValueError("authentication failed") from exc
