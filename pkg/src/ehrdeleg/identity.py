"""Decentralized identifiers, DID documents and wallets."""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, field
from typing import Any

from ._codec import b64d, b64e, canonical_decode, canonical_encode, from_u64, u64
from .crypto import KeyPair, Rng, generate_keypair, key_purpose, sha256, system_rng
from .errors import FormatError, NotFoundError

__all__ = [
    "DID_METHOD",
    "Did",
    "DidDocument",
    "Wallet",
    "canonical_decode",
    "canonical_encode",
    "create_identity",
    "resolve",
]

DID_METHOD = "sim"
WALLET_FIELDS = (
    "did", "signing_public", "signing_private", "encryption_public",
    "encryption_private", "credentials", "secrets",
)


def _msid(signing_public_key: bytes) -> str:
    return base64.b32encode(sha256(signing_public_key)).decode("ascii").rstrip("=").lower()


@dataclass(frozen=True, order=True)
class Did:
    method: str
    method_specific_id: str

    def __str__(self) -> str:
        return f"did:{self.method}:{self.method_specific_id}"

    def __bytes__(self) -> bytes:
        return str(self).encode("utf-8")

    @classmethod
    def parse(cls, text: str) -> "Did":
        parts = text.split(":")
        if len(parts) != 3 or parts[0] != "did" or not parts[1] or not parts[2]:
            raise FormatError(f"not a DID: {text!r}")
        return cls(parts[1], parts[2])

    @classmethod
    def for_key(cls, signing_public_key: bytes, method: str = DID_METHOD) -> "Did":
        return cls(method, _msid(signing_public_key))


@dataclass(frozen=True)
class DidDocument:
    did: Did
    signing_public_key: bytes
    encryption_public_key: bytes
    created_at: int = 0

    def is_self_certifying(self) -> bool:
        return self.did.method_specific_id == _msid(self.signing_public_key)

    def encode(self) -> bytes:
        return canonical_encode({
            "did": bytes(self.did),
            "signing_public_key": self.signing_public_key,
            "encryption_public_key": self.encryption_public_key,
            "created_at": u64(self.created_at),
        })

    @classmethod
    def decode(cls, data: bytes) -> "DidDocument":
        fields = canonical_decode(data)
        try:
            doc = cls(
                Did.parse(fields["did"].decode("utf-8")),
                fields["signing_public_key"],
                fields["encryption_public_key"],
                from_u64(fields["created_at"]),
            )
        except (KeyError, UnicodeDecodeError) as exc:
            raise FormatError(f"malformed DID document: {exc}") from exc
        if key_purpose(doc.signing_public_key) != "signing":
            raise FormatError("document signing key has wrong purpose")
        if key_purpose(doc.encryption_public_key) != "encryption":
            raise FormatError("document encryption key has wrong purpose")
        return doc


@dataclass
class Wallet:
    """Private key material and local storage of one participant.

    Credentials and secrets are opaque bytes to the wallet; the owning
    actor decides what to store.
    """

    did: Did
    signing_keypair: KeyPair
    encryption_keypair: KeyPair
    credentials: list[bytes] = field(default_factory=list)
    secrets: dict[str, bytes] = field(default_factory=dict)

    def document(self, created_at: int = 0) -> DidDocument:
        return DidDocument(
            self.did,
            self.signing_keypair.public_key,
            self.encryption_keypair.public_key,
            created_at,
        )

    def private_keys(self) -> list[bytes]:
        return [self.signing_keypair.private_key, self.encryption_keypair.private_key]

    def to_dict(self) -> dict[str, Any]:
        return {
            "did": str(self.did),
            "signing_public": b64e(self.signing_keypair.public_key),
            "signing_private": b64e(self.signing_keypair.private_key),
            "encryption_public": b64e(self.encryption_keypair.public_key),
            "encryption_private": b64e(self.encryption_keypair.private_key),
            "credentials": [b64e(c) for c in self.credentials],
            "secrets": {k: b64e(v) for k, v in sorted(self.secrets.items())},
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Wallet":
        if not isinstance(data, dict) or set(data) != set(WALLET_FIELDS):
            raise FormatError(f"wallet export must have exactly the fields {WALLET_FIELDS}")
        try:
            signing = KeyPair(b64d(data["signing_public"]), b64d(data["signing_private"]), "signing")
            encryption = KeyPair(
                b64d(data["encryption_public"]), b64d(data["encryption_private"]), "encryption"
            )
            wallet = cls(
                Did.parse(data["did"]),
                signing,
                encryption,
                [b64d(c) for c in data["credentials"]],
                {k: b64d(v) for k, v in data["secrets"].items()},
            )
        except (KeyError, TypeError, AttributeError) as exc:
            raise FormatError(f"malformed wallet export: {exc}") from exc
        if wallet.did != Did.for_key(signing.public_key, wallet.did.method):
            raise FormatError("wallet DID does not match its signing key")
        return wallet

    def export_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def import_json(cls, text: str) -> "Wallet":
        return cls.from_dict(json.loads(text))

    def observable_state(self) -> bytes:
        """Raw encoding of everything in the wallet, for knowledge audits."""
        return canonical_encode({
            "did": bytes(self.did),
            "signing_private": self.signing_keypair.private_key,
            "encryption_private": self.encryption_keypair.private_key,
            "credentials": b"".join(self.credentials),
            "secrets": canonical_encode(self.secrets),
        })

    def __repr__(self) -> str:
        return f"Wallet(did={str(self.did)!r}, credentials={len(self.credentials)})"


def create_identity(rng: Rng | None = None, created_at: int = 0) -> tuple[Wallet, DidDocument]:
    rng = rng or system_rng()
    signing = generate_keypair("signing", rng)
    encryption = generate_keypair("encryption", rng)
    wallet = Wallet(Did.for_key(signing.public_key), signing, encryption)
    return wallet, wallet.document(created_at)


def resolve(did: Did | str, ledger) -> DidDocument:
    """Return the earliest registered document for ``did``."""
    if isinstance(did, str):
        did = Did.parse(did)
    doc = ledger.lookup_did(did)
    if doc is None:
        raise NotFoundError(f"DID {did} is not registered")
    return doc
