"""The data custodian's blob store and time-limited download links."""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass

from ._codec import b64d, b64e, canonical_encode, hexd, u64
from .crypto import Rng, sha256, system_rng
from .errors import ExpiredError, FormatError, NotFoundError, ParameterError
from .identity import Did
from .ledger import AccessEvent, Ledger

DEFAULT_LINK_TTL = 3600
EHR_ID_BYTES = 16
TOKEN_BYTES = 32


@dataclass(frozen=True)
class EncryptedEhr:
    ehr_id: bytes
    ciphertext: bytes
    uploader_did: Did
    storage_location: bytes


@dataclass(frozen=True)
class AccessLink:
    token: bytes
    ehr_id: bytes
    expires_at: int
    issued_to_tag: bytes


@dataclass(frozen=True)
class _LinkGrant:
    link: AccessLink
    pseudo_id: bytes
    actor_tag: bytes


class CustodianStore:
    """Encrypted EHR blobs addressed by ``ehr_id``.

    The store is semi-honest: it never sees ``sk`` or plaintext, only
    ciphertext. ``storage_location`` is the internal locator a real cloud
    store would use; it never leaves the custodian.
    """

    def __init__(self, rng: Rng | None = None, ledger: Ledger | None = None):
        self._rng = rng or system_rng()
        self._ledger = ledger
        self._blobs: dict[bytes, EncryptedEhr] = {}
        self._by_location: dict[bytes, bytes] = {}
        self._links: dict[bytes, _LinkGrant] = {}
        self._lock = threading.RLock()

    def upload(self, ciphertext: bytes, uploader: Did) -> bytes:
        if not ciphertext:
            raise ParameterError("refusing to store an empty payload")
        with self._lock:
            while True:
                ehr_id = self._rng.randbytes(EHR_ID_BYTES)
                if ehr_id not in self._blobs:
                    break
            location = self._rng.randbytes(EHR_ID_BYTES)
            self._blobs[ehr_id] = EncryptedEhr(ehr_id, bytes(ciphertext), uploader, location)
            self._by_location[location] = ehr_id
            return ehr_id

    def has(self, ehr_id: bytes) -> bool:
        return ehr_id in self._blobs

    def grant_link(
        self,
        ehr_id: bytes,
        dr_did: Did,
        ttl: int = DEFAULT_LINK_TTL,
        now: int = 0,
        pseudo_id: bytes = b"",
    ) -> AccessLink:
        """Issue a download capability valid for ``[now, now + ttl)``.

        ``pseudo_id`` only labels the ``download_completed`` ledger event.
        """
        if ttl <= 0:
            raise ParameterError("link ttl must be positive")
        with self._lock:
            if ehr_id not in self._blobs:
                raise NotFoundError("unknown ehr_id")
            token = self._rng.randbytes(TOKEN_BYTES)
            link = AccessLink(token, ehr_id, now + ttl, sha256(bytes(dr_did) + token))
            self._links[token] = _LinkGrant(link, pseudo_id, sha256(bytes(dr_did) + pseudo_id))
            return link

    def download(self, link: AccessLink, now: int) -> bytes:
        with self._lock:
            grant = self._links.get(link.token)
            if grant is None:
                raise NotFoundError("unknown download token")
            if now >= grant.link.expires_at:
                raise ExpiredError("download link has expired")
            blob = self._blobs[grant.link.ehr_id]
            if self._ledger is not None:
                self._ledger.log_event(AccessEvent(
                    grant.pseudo_id, blob.ehr_id, grant.actor_tag, "download_completed", now
                ))
            return blob.ciphertext

    # -- persistence / audit ----------------------------------------------

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "blobs": {
                    e.ehr_id.hex(): {
                        "ciphertext": b64e(e.ciphertext),
                        "uploader": str(e.uploader_did),
                        "location": e.storage_location.hex(),
                    }
                    for e in sorted(self._blobs.values(), key=lambda e: e.ehr_id)
                },
                "links": [
                    {
                        "token": g.link.token.hex(),
                        "ehr_id": g.link.ehr_id.hex(),
                        "expires_at": g.link.expires_at,
                        "issued_to_tag": g.link.issued_to_tag.hex(),
                        "pseudo_id": g.pseudo_id.hex(),
                        "actor_tag": g.actor_tag.hex(),
                    }
                    for g in self._links.values()
                ],
            }

    def export_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data: dict, rng: Rng | None = None, ledger: Ledger | None = None):
        store = cls(rng, ledger)
        try:
            for ehr_hex, entry in data["blobs"].items():
                ehr_id = hexd(ehr_hex)
                location = hexd(entry["location"])
                store._blobs[ehr_id] = EncryptedEhr(
                    ehr_id, b64d(entry["ciphertext"]), Did.parse(entry["uploader"]), location
                )
                store._by_location[location] = ehr_id
            for entry in data["links"]:
                link = AccessLink(
                    hexd(entry["token"]),
                    hexd(entry["ehr_id"]),
                    int(entry["expires_at"]),
                    hexd(entry["issued_to_tag"]),
                )
                store._links[link.token] = _LinkGrant(
                    link, hexd(entry["pseudo_id"]), hexd(entry["actor_tag"])
                )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed store export: {exc}") from exc
        return store

    def observable_state(self) -> bytes:
        """Raw bytes of everything the custodian holds, for knowledge audits."""
        with self._lock:
            parts = {}
            for i, e in enumerate(sorted(self._blobs.values(), key=lambda e: e.ehr_id)):
                parts[f"blob{i}"] = canonical_encode({
                    "ehr_id": e.ehr_id,
                    "ciphertext": e.ciphertext,
                    "uploader": bytes(e.uploader_did),
                    "location": e.storage_location,
                })
            for i, g in enumerate(self._links.values()):
                parts[f"link{i}"] = canonical_encode({
                    "token": g.link.token,
                    "ehr_id": g.link.ehr_id,
                    "expires_at": u64(g.link.expires_at),
                    "pseudo_id": g.pseudo_id,
                })
            return canonical_encode(parts)

    def _inject(self, label: str, data: bytes) -> None:
        """Test hook: plant arbitrary bytes in the store (audit soundness checks)."""
        with self._lock:
            location = sha256(label.encode())[:EHR_ID_BYTES]
            self._blobs[location] = EncryptedEhr(location, data, Did("sim", "leak"), location)

    def storage_locations(self) -> list[bytes]:
        return [e.storage_location for e in self._blobs.values()]
