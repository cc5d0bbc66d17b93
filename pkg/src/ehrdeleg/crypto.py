"""Cryptographic primitives behind a small, purpose-checked contract.

Signing uses Ed25519, public-key encryption is X25519 + HKDF-SHA256 +
ChaCha20-Poly1305, symmetric encryption is AES-256-GCM. Every random byte
is drawn from an injected ``rng`` (anything with ``randbytes(n)``) so a
seeded :class:`random.Random` makes whole scenarios reproducible.

Two block-cipher profiles exist. ``PRODUCTION`` is a 32-byte keyed
permutation (four-round Feistel network over HMAC-SHA256).  ``TOY`` is a
1-byte cipher, ``input XOR key``, small enough that secrecy claims can be
checked by exhaustive enumeration.
"""

from __future__ import annotations

import hashlib
import hmac
import random
from dataclasses import dataclass
from typing import Literal, Protocol

from cryptography.exceptions import InvalidSignature, InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.asymmetric.x25519 import (
    X25519PrivateKey,
    X25519PublicKey,
)
from cryptography.hazmat.primitives.ciphers.aead import AESGCM, ChaCha20Poly1305
from cryptography.hazmat.primitives.kdf.hkdf import HKDF
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .errors import (
    AuthenticityError,
    FormatError,
    KeyFormatError,
    ParameterError,
    PurposeError,
)

Purpose = Literal["signing", "encryption"]

_PURPOSE_TAG = {"signing": b"\x01", "encryption": b"\x02"}
_RAW = 32
_NONCE = 12
_TAG = 16


class Rng(Protocol):
    def randbytes(self, n: int) -> bytes: ...


def system_rng() -> Rng:
    return random.SystemRandom()


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def xor_bytes(a: bytes, b: bytes) -> bytes:
    if len(a) != len(b):
        raise FormatError(f"xor of unequal widths {len(a)} and {len(b)}")
    return bytes(x ^ y for x, y in zip(a, b))


# ---------------------------------------------------------------------------
# Key pairs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KeyPair:
    """Public and private halves, each prefixed with a one-byte purpose tag."""

    public_key: bytes
    private_key: bytes
    purpose: Purpose

    def __repr__(self) -> str:
        return f"KeyPair(purpose={self.purpose!r}, public_key={self.public_key.hex()[:16]}...)"


def generate_keypair(purpose: Purpose, rng: Rng) -> KeyPair:
    if purpose not in _PURPOSE_TAG:
        raise ParameterError(f"unknown key purpose {purpose!r}")
    seed = rng.randbytes(_RAW)
    if purpose == "signing":
        priv = Ed25519PrivateKey.from_private_bytes(seed)
    else:
        priv = X25519PrivateKey.from_private_bytes(seed)
    pub = priv.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    tag = _PURPOSE_TAG[purpose]
    return KeyPair(public_key=tag + pub, private_key=tag + seed, purpose=purpose)


def key_purpose(key: bytes) -> Purpose:
    if len(key) != _RAW + 1:
        raise KeyFormatError(f"key must be {_RAW + 1} bytes, got {len(key)}")
    for purpose, tag in _PURPOSE_TAG.items():
        if key[:1] == tag:
            return purpose
    raise KeyFormatError("unknown key purpose tag")


def _raw_key(key: bytes, purpose: Purpose) -> bytes:
    found = key_purpose(key)
    if found != purpose:
        raise PurposeError(f"{found} key used where {purpose} key required")
    return key[1:]


def _require_pair(keypair: KeyPair, purpose: Purpose) -> None:
    if keypair.purpose != purpose:
        raise PurposeError(f"{keypair.purpose} key pair used where {purpose} required")


# ---------------------------------------------------------------------------
# Signatures
# ---------------------------------------------------------------------------


def sign(message: bytes, keypair: KeyPair) -> bytes:
    _require_pair(keypair, "signing")
    priv = Ed25519PrivateKey.from_private_bytes(_raw_key(keypair.private_key, "signing"))
    return priv.sign(message)


def verify(message: bytes, signature: bytes, public_key: bytes) -> bool:
    """Return True iff ``signature`` is valid; raises only for a wrong-purpose key."""
    raw = _raw_key(public_key, "signing")
    try:
        Ed25519PublicKey.from_public_bytes(raw).verify(signature, message)
    except (InvalidSignature, ValueError):
        return False
    return True


# ---------------------------------------------------------------------------
# Public-key encryption (ECIES-style)
# ---------------------------------------------------------------------------


def _hybrid_key(shared: bytes, eph_pub: bytes, recipient_pub: bytes) -> bytes:
    return HKDF(
        algorithm=hashes.SHA256(),
        length=32,
        salt=None,
        info=b"ehrdeleg/pk-encrypt" + eph_pub + recipient_pub,
    ).derive(shared)


def pk_encrypt(plaintext: bytes, recipient_public: bytes, rng: Rng) -> bytes:
    """Encrypt to an encryption-purpose public key.

    Output layout: ``ephemeral_pub(32) || nonce(12) || ciphertext+tag``.
    """
    raw_pub = _raw_key(recipient_public, "encryption")
    try:
        peer = X25519PublicKey.from_public_bytes(raw_pub)
    except ValueError as exc:
        raise KeyFormatError(str(exc)) from exc
    eph = X25519PrivateKey.from_private_bytes(rng.randbytes(_RAW))
    eph_pub = eph.public_key().public_bytes(Encoding.Raw, PublicFormat.Raw)
    key = _hybrid_key(eph.exchange(peer), eph_pub, raw_pub)
    nonce = rng.randbytes(_NONCE)
    return eph_pub + nonce + ChaCha20Poly1305(key).encrypt(nonce, plaintext, eph_pub)


def pk_decrypt(ciphertext: bytes, keypair: KeyPair) -> bytes:
    _require_pair(keypair, "encryption")
    if len(ciphertext) < _RAW + _NONCE + _TAG:
        raise FormatError("public-key ciphertext truncated")
    priv = X25519PrivateKey.from_private_bytes(_raw_key(keypair.private_key, "encryption"))
    raw_pub = _raw_key(keypair.public_key, "encryption")
    eph_pub, nonce, body = (
        ciphertext[:_RAW],
        ciphertext[_RAW:_RAW + _NONCE],
        ciphertext[_RAW + _NONCE:],
    )
    try:
        shared = priv.exchange(X25519PublicKey.from_public_bytes(eph_pub))
        key = _hybrid_key(shared, eph_pub, raw_pub)
        return ChaCha20Poly1305(key).decrypt(nonce, body, eph_pub)
    except (InvalidTag, ValueError) as exc:
        raise AuthenticityError("public-key ciphertext failed authentication") from exc


# ---------------------------------------------------------------------------
# Cipher profiles and block cipher
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CipherProfile:
    name: Literal["production", "toy"]
    block_width: int
    key_width: int


PRODUCTION = CipherProfile("production", 32, 32)
TOY = CipherProfile("toy", 1, 1)
PROFILES = {p.name: p for p in (PRODUCTION, TOY)}


def get_profile(name: str | CipherProfile) -> CipherProfile:
    if isinstance(name, CipherProfile):
        return name
    try:
        return PROFILES[name]
    except KeyError:
        raise ParameterError(f"unknown cipher profile {name!r}") from None


@dataclass(frozen=True)
class BlockCipherKey:
    key_bytes: bytes

    def __repr__(self) -> str:
        return f"BlockCipherKey(<{len(self.key_bytes)} bytes>)"


def random_block_key(profile: CipherProfile, rng: Rng) -> BlockCipherKey:
    return BlockCipherKey(rng.randbytes(profile.key_width))


def _check_block(block: bytes, key: BlockCipherKey, profile: CipherProfile) -> None:
    if len(block) != profile.block_width:
        raise FormatError(f"block must be {profile.block_width} bytes, got {len(block)}")
    if len(key.key_bytes) != profile.key_width:
        raise FormatError(f"key must be {profile.key_width} bytes, got {len(key.key_bytes)}")


_ROUNDS = 4


def _feistel_round(key: bytes, rnd: int, half: bytes) -> bytes:
    return hmac.new(key, bytes([rnd]) + half, hashlib.sha256).digest()[: len(half)]


def block_encrypt(block: bytes, key: BlockCipherKey, profile: CipherProfile) -> bytes:
    _check_block(block, key, profile)
    if profile.name == "toy":
        return bytes([block[0] ^ key.key_bytes[0]])
    half = profile.block_width // 2
    left, right = block[:half], block[half:]
    for rnd in range(_ROUNDS):
        left, right = right, xor_bytes(left, _feistel_round(key.key_bytes, rnd, right))
    return left + right


def block_decrypt(block: bytes, key: BlockCipherKey, profile: CipherProfile) -> bytes:
    _check_block(block, key, profile)
    if profile.name == "toy":
        return bytes([block[0] ^ key.key_bytes[0]])
    half = profile.block_width // 2
    left, right = block[:half], block[half:]
    for rnd in reversed(range(_ROUNDS)):
        left, right = xor_bytes(right, _feistel_round(key.key_bytes, rnd, left)), left
    return left + right


# ---------------------------------------------------------------------------
# Authenticated symmetric encryption
# ---------------------------------------------------------------------------


def _aead_key(key: BlockCipherKey, profile: CipherProfile) -> bytes:
    if len(key.key_bytes) != profile.key_width:
        raise FormatError(f"symmetric key must be {profile.key_width} bytes for {profile.name}")
    if profile.name == "toy":
        # toy keys are 1 byte; stretch only so AES-GCM accepts them
        return sha256(b"ehrdeleg/toy-sym" + key.key_bytes)
    return key.key_bytes


def sym_encrypt(
    plaintext: bytes, key: BlockCipherKey, rng: Rng, profile: CipherProfile = PRODUCTION
) -> bytes:
    """AES-256-GCM; output is ``nonce(12) || ciphertext || tag(16)``."""
    nonce = rng.randbytes(_NONCE)
    return nonce + AESGCM(_aead_key(key, profile)).encrypt(nonce, plaintext, None)


def sym_decrypt(
    ciphertext: bytes, key: BlockCipherKey, profile: CipherProfile = PRODUCTION
) -> bytes:
    if len(ciphertext) < _NONCE + _TAG:
        raise FormatError("symmetric ciphertext truncated")
    try:
        return AESGCM(_aead_key(key, profile)).decrypt(
            ciphertext[:_NONCE], ciphertext[_NONCE:], None
        )
    except InvalidTag as exc:
        raise AuthenticityError("symmetric ciphertext failed authentication") from exc
