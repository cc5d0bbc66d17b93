"""In-process append-only ledger standing in for the blockchain.

Records are hash-chained; every payload must self-validate for its kind
before it is accepted. No consensus, no forks: one linearizable log.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, replace
from typing import Iterable, Iterator, Literal

from ._codec import (
    b64d,
    b64e,
    canonical_decode,
    canonical_encode,
    from_u64,
    hexd,
    pack_list,
    u64,
    unpack_list,
)
from .crypto import KeyPair, Rng, pk_decrypt, pk_encrypt, sha256, sign, verify
from .errors import (
    AuthenticityError,
    AuthorizationError,
    FormatError,
    NotARecipientError,
    NotFoundError,
    ProtocolError,
    ValidationError,
)
from .identity import Did, DidDocument, Wallet
from .threshold import MODES, PartyShares

Kind = Literal["did_registration", "authorization", "revocation", "access_event"]
KINDS = ("did_registration", "authorization", "revocation", "access_event")
ACCESS_EVENTS = (
    "notary_verified",
    "notary_denied",
    "dc_verified",
    "dc_granted_link",
    "download_completed",
)
GENESIS_HASH = bytes(32)


def recipient_tag(did: Did, pseudo_id: bytes) -> bytes:
    return sha256(bytes(did) + pseudo_id)


actor_tag = recipient_tag


def credential_tag(vc_id: bytes) -> bytes:
    return sha256(b"vc:" + vc_id)


@dataclass(frozen=True)
class LedgerRecord:
    seq: int
    kind: str
    payload: bytes
    prev_hash: bytes
    record_hash: bytes

    @staticmethod
    def compute_hash(seq: int, kind: str, payload: bytes, prev_hash: bytes) -> bytes:
        return sha256(canonical_encode({
            "seq": u64(seq),
            "kind": kind.encode(),
            "payload": payload,
            "prev_hash": prev_hash,
        }))

    def to_json(self) -> str:
        return json.dumps(
            {
                "seq": self.seq,
                "kind": self.kind,
                "payload": b64e(self.payload),
                "prev_hash": self.prev_hash.hex(),
                "record_hash": self.record_hash.hex(),
            },
            sort_keys=True,
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, line: str) -> "LedgerRecord":
        try:
            data = json.loads(line)
            return cls(
                int(data["seq"]),
                str(data["kind"]),
                b64d(data["payload"]),
                hexd(data["prev_hash"]),
                hexd(data["record_hash"]),
            )
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"malformed ledger line: {exc}") from exc


# ---------------------------------------------------------------------------
# Payload types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DidRegistration:
    document: DidDocument
    signature: bytes

    @classmethod
    def create(cls, wallet: Wallet, created_at: int = 0) -> "DidRegistration":
        doc = wallet.document(created_at)
        return cls(doc, sign(doc.encode(), wallet.signing_keypair))

    def to_payload(self) -> bytes:
        return canonical_encode({"document": self.document.encode(), "signature": self.signature})

    @classmethod
    def from_payload(cls, payload: bytes) -> "DidRegistration":
        fields = canonical_decode(payload)
        if set(fields) != {"document", "signature"}:
            raise FormatError("bad DID registration fields")
        return cls(DidDocument.decode(fields["document"]), fields["signature"])


@dataclass(frozen=True)
class AuthorizationRecord:
    pseudo_id: bytes
    ephemeral_public_key: bytes
    ehr_id: bytes
    blinded_shares: dict[bytes, bytes]
    mode: str
    credential_tags: tuple[bytes, ...]
    posting_signature: bytes = b""

    def _unsigned(self) -> dict[str, bytes]:
        return {
            "pseudo_id": self.pseudo_id,
            "ephemeral_public_key": self.ephemeral_public_key,
            "ehr_id": self.ehr_id,
            "blinded_shares": canonical_encode(
                {tag.hex(): blob for tag, blob in self.blinded_shares.items()}
            ),
            "mode": self.mode.encode(),
            "credential_tags": pack_list(self.credential_tags),
        }

    def signed_bytes(self) -> bytes:
        return canonical_encode(self._unsigned())

    def to_payload(self) -> bytes:
        return canonical_encode({**self._unsigned(), "posting_signature": self.posting_signature})

    @classmethod
    def from_payload(cls, payload: bytes) -> "AuthorizationRecord":
        fields = canonical_decode(payload)
        try:
            shares = {
                hexd(tag): blob
                for tag, blob in canonical_decode(fields["blinded_shares"]).items()
            }
            return cls(
                fields["pseudo_id"],
                fields["ephemeral_public_key"],
                fields["ehr_id"],
                shares,
                fields["mode"].decode(),
                tuple(unpack_list(fields["credential_tags"])),
                fields["posting_signature"],
            )
        except (KeyError, UnicodeDecodeError) as exc:
            raise FormatError(f"malformed authorization record: {exc}") from exc

    @classmethod
    def create(
        cls,
        ephemeral: KeyPair,
        ehr_id: bytes,
        shares: dict[DidDocument, PartyShares] | Iterable[tuple[DidDocument, PartyShares]],
        mode: str,
        vc_ids: Iterable[bytes],
        rng: Rng,
    ) -> "AuthorizationRecord":
        """Build and sign a record; each recipient's shares are encrypted to it."""
        pseudo_id = sha256(ephemeral.public_key)
        items = shares.items() if isinstance(shares, dict) else shares
        blinded = {
            recipient_tag(doc.did, pseudo_id): pk_encrypt(
                party.encode(), doc.encryption_public_key, rng
            )
            for doc, party in items
        }
        record = cls(
            pseudo_id,
            ephemeral.public_key,
            ehr_id,
            blinded,
            mode,
            tuple(credential_tag(v) for v in vc_ids),
        )
        return replace(record, posting_signature=sign(record.signed_bytes(), ephemeral))

    def validate(self) -> None:
        if sha256(self.ephemeral_public_key) != self.pseudo_id:
            raise ValidationError("pseudo_id does not match the ephemeral public key")
        if self.mode not in MODES:
            raise ValidationError(f"unknown mode {self.mode!r}")
        try:
            ok = verify(self.signed_bytes(), self.posting_signature, self.ephemeral_public_key)
        except ProtocolError as exc:
            raise ValidationError(f"bad ephemeral key: {exc}") from exc
        if not ok:
            raise ValidationError("posting signature does not verify")


@dataclass(frozen=True)
class RevocationEntry:
    vc_id: bytes
    revoked_by: bytes
    revocation_signature: bytes

    @staticmethod
    def message(vc_id: bytes, pseudo_id: bytes) -> bytes:
        return canonical_encode({"revoke": vc_id, "pseudo_id": pseudo_id})

    def to_payload(self) -> bytes:
        return canonical_encode({
            "vc_id": self.vc_id,
            "revoked_by": self.revoked_by,
            "revocation_signature": self.revocation_signature,
        })

    @classmethod
    def from_payload(cls, payload: bytes) -> "RevocationEntry":
        fields = canonical_decode(payload)
        try:
            return cls(fields["vc_id"], fields["revoked_by"], fields["revocation_signature"])
        except KeyError as exc:
            raise FormatError(f"malformed revocation: {exc}") from exc


@dataclass(frozen=True)
class AccessEvent:
    pseudo_id: bytes
    ehr_id: bytes
    actor_tag: bytes
    event: str
    timestamp: int

    def to_payload(self) -> bytes:
        return canonical_encode({
            "pseudo_id": self.pseudo_id,
            "ehr_id": self.ehr_id,
            "actor_tag": self.actor_tag,
            "event": self.event.encode(),
            "timestamp": u64(self.timestamp),
        })

    @classmethod
    def from_payload(cls, payload: bytes) -> "AccessEvent":
        fields = canonical_decode(payload)
        try:
            event = cls(
                fields["pseudo_id"],
                fields["ehr_id"],
                fields["actor_tag"],
                fields["event"].decode(),
                from_u64(fields["timestamp"]),
            )
        except (KeyError, UnicodeDecodeError) as exc:
            raise FormatError(f"malformed access event: {exc}") from exc
        if event.event not in ACCESS_EVENTS:
            raise FormatError(f"unknown access event {event.event!r}")
        return event


# ---------------------------------------------------------------------------
# Ledger
# ---------------------------------------------------------------------------


class Ledger:
    """Hash-chained append-only log.

    Appends take a lock so concurrent writers observe one total order;
    readers get a snapshot (a prefix of the log).
    """

    def __init__(self):
        self._records: list[LedgerRecord] = []
        self._lock = threading.RLock()
        self._dids: dict[Did, DidDocument] = {}
        self._auth: list[AuthorizationRecord] = []
        self._revoked: dict[bytes, int] = {}
        self._listeners: list = []

    def subscribe(self, listener) -> None:
        """Call ``listener(record)`` after every successful append."""
        self._listeners.append(listener)

    # -- reading -----------------------------------------------------------

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self) -> Iterator[LedgerRecord]:
        return iter(self.records())

    def records(self) -> list[LedgerRecord]:
        with self._lock:
            return list(self._records)

    @property
    def head_hash(self) -> bytes:
        with self._lock:
            return self._records[-1].record_hash if self._records else GENESIS_HASH

    def lookup_did(self, did: Did) -> DidDocument | None:
        return self._dids.get(did)

    def authorizations(self) -> list[AuthorizationRecord]:
        with self._lock:
            return list(self._auth)

    def find_authorization(self, pseudo_id: bytes, ehr_id: bytes) -> AuthorizationRecord:
        for record in reversed(self.authorizations()):
            if record.pseudo_id == pseudo_id and record.ehr_id == ehr_id:
                return record
        raise NotFoundError("no authorization record for that pseudo_id and ehr_id")

    def is_revoked(self, vc_id: bytes) -> bool:
        return vc_id in self._revoked

    def access_events(
        self, pseudo_id: bytes | None = None, ehr_id: bytes | None = None
    ) -> list[AccessEvent]:
        events = [
            AccessEvent.from_payload(r.payload)
            for r in self.records()
            if r.kind == "access_event"
        ]
        return [
            e for e in events
            if (pseudo_id is None or e.pseudo_id == pseudo_id)
            and (ehr_id is None or e.ehr_id == ehr_id)
        ]

    # -- writing -----------------------------------------------------------

    def append(self, kind: str, payload: bytes) -> int:
        with self._lock:
            decoded = self._validate(kind, payload)
            if kind == "revocation" and decoded.vc_id in self._revoked:
                return self._revoked[decoded.vc_id]
            seq = len(self._records)
            prev = self.head_hash
            record = LedgerRecord(
                seq, kind, payload, prev, LedgerRecord.compute_hash(seq, kind, payload, prev)
            )
            self._records.append(record)
            self._index(record, decoded)
            for listener in self._listeners:
                listener(record)
            return seq

    def register_did(self, wallet: Wallet, created_at: int = 0) -> int:
        return self.append("did_registration", DidRegistration.create(wallet, created_at).to_payload())

    def post_authorization(self, record: AuthorizationRecord) -> int:
        return self.append("authorization", record.to_payload())

    def log_event(self, event: AccessEvent) -> int:
        return self.append("access_event", event.to_payload())

    def _validate(self, kind: str, payload: bytes):
        if kind not in KINDS:
            raise ValidationError(f"unknown record kind {kind!r}")
        try:
            if kind == "did_registration":
                reg = DidRegistration.from_payload(payload)
                doc = reg.document
                if not doc.is_self_certifying():
                    raise ValidationError("DID is not derived from its signing key")
                if not verify(doc.encode(), reg.signature, doc.signing_public_key):
                    raise ValidationError("registration signature does not verify")
                if doc.did in self._dids:
                    raise ValidationError(f"DID {doc.did} already registered")
                return reg
            if kind == "authorization":
                record = AuthorizationRecord.from_payload(payload)
                record.validate()
                return record
            if kind == "revocation":
                entry = RevocationEntry.from_payload(payload)
                self._check_revocation(entry)
                return entry
            return AccessEvent.from_payload(payload)
        except FormatError as exc:
            raise ValidationError(f"invalid {kind} payload: {exc}") from exc

    def _check_revocation(self, entry: RevocationEntry) -> None:
        tag = credential_tag(entry.vc_id)
        for record in self._auth:
            if record.pseudo_id != entry.revoked_by or tag not in record.credential_tags:
                continue
            msg = RevocationEntry.message(entry.vc_id, entry.revoked_by)
            if verify(msg, entry.revocation_signature, record.ephemeral_public_key):
                return
        raise AuthorizationError("revocation is not signed by the credential's pseudoID key")

    def _index(self, record: LedgerRecord, decoded) -> None:
        if record.kind == "did_registration":
            self._dids.setdefault(decoded.document.did, decoded.document)
        elif record.kind == "authorization":
            self._auth.append(decoded)
        elif record.kind == "revocation":
            self._revoked.setdefault(decoded.vc_id, record.seq)

    # -- persistence -------------------------------------------------------

    def export_jsonl(self) -> str:
        return "".join(r.to_json() + "\n" for r in self.records())

    @classmethod
    def import_jsonl(cls, text: str) -> "Ledger":
        """Rebuild a ledger from its export; the chain is verified first."""
        records = [LedgerRecord.from_json(line) for line in text.splitlines() if line.strip()]
        if not verify_records(records):
            raise ValidationError("ledger export fails chain verification")
        ledger = cls()
        for record in records:
            ledger.append(record.kind, record.payload)
        if ledger.head_hash != (records[-1].record_hash if records else GENESIS_HASH):
            raise ValidationError("re-appended ledger diverges from export")
        return ledger


def verify_records(records: list[LedgerRecord]) -> bool:
    prev = GENESIS_HASH
    for expected_seq, record in enumerate(records):
        if record.seq != expected_seq or record.prev_hash != prev:
            return False
        if record.record_hash != LedgerRecord.compute_hash(
            record.seq, record.kind, record.payload, record.prev_hash
        ):
            return False
        prev = record.record_hash
    return True


def verify_chain(ledger: Ledger) -> bool:
    return verify_records(ledger.records())


def find_authorization(pseudo_id: bytes, ehr_id: bytes, ledger: Ledger) -> AuthorizationRecord:
    return ledger.find_authorization(pseudo_id, ehr_id)


def fetch_shares_for(wallet: Wallet, record: AuthorizationRecord) -> PartyShares:
    """Locate and decrypt the share blob addressed to ``wallet`` in ``record``."""
    blob = record.blinded_shares.get(recipient_tag(wallet.did, record.pseudo_id))
    if blob is None:
        raise NotARecipientError(f"{wallet.did} holds no shares in this record")
    plaintext = pk_decrypt(blob, wallet.encryption_keypair)
    try:
        return PartyShares.decode(plaintext)
    except FormatError as exc:
        raise AuthenticityError(f"share blob decrypted to garbage: {exc}") from exc
