"""Delegation credentials with salted per-claim commitments.

The issuer signs the credential metadata together with one commitment per
claim, ``sha256(salt || claim_bytes)``. A presentation carries the full
commitment map but only the salts and bytes of the claims the holder
chooses to disclose, plus the holder's signature over a verifier
challenge, so undisclosed claims stay hidden and replay is detectable.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping

from ._codec import (
    b64d,
    b64e,
    canonical_decode,
    canonical_encode,
    from_u64,
    pack_list,
    u64,
    unpack_list,
)
from .crypto import KeyPair, Rng, sha256, sign, system_rng, verify
from .errors import (
    BindingError,
    FormatError,
    NotFoundError,
    ParameterError,
    ProtocolError,
    UnresolvedReferenceError,
)
from .identity import Did, Wallet, resolve
from .ledger import Ledger, RevocationEntry
from .threshold import CipherKey

CREDENTIAL_TYPE = b"DelegationCredential"
SALT_BYTES = 16

CLAIM_NAMES = (
    "authorized_dr_dids",
    "cipher_params",
    "dc_did",
    "ehr_id",
    "expiry",
    "masked_key",
    "nonce_r",
    "notary_dids",
    "pseudo_id",
    "subject_dr_did",
)
METADATA_NAMES = ("issued_at", "issuer_did", "type", "vc_id")

REJECT_REASONS = (
    "bad-signature",
    "commitment-mismatch",
    "bad-binding",
    "expired",
    "revoked",
    "expiry-not-disclosed",
    "malformed",
)


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str | None = None

    def __bool__(self) -> bool:
        return self.accepted

    def __str__(self) -> str:
        return "accept" if self.accepted else f"reject({self.reason})"


ACCEPT = Verdict(True)


def reject(reason: str) -> Verdict:
    return Verdict(False, reason)


def encode_did_list(dids: Iterable[Did]) -> bytes:
    return pack_list(bytes(d) for d in dids)


def decode_did_list(data: bytes) -> list[Did]:
    return [Did.parse(item.decode("utf-8")) for item in unpack_list(data)]


@dataclass(frozen=True)
class DelegationClaims:
    """Typed view of the claim set; ``to_claims`` gives the signed byte form."""

    subject_dr_did: Did
    notary_dids: tuple[Did, ...]
    dc_did: Did
    pseudo_id: bytes
    ehr_id: bytes
    cipher_key: CipherKey
    expiry: int
    authorized_dr_dids: tuple[Did, ...]

    def to_claims(self) -> dict[str, bytes]:
        return {
            "subject_dr_did": bytes(self.subject_dr_did),
            "notary_dids": encode_did_list(self.notary_dids),
            "dc_did": bytes(self.dc_did),
            "pseudo_id": self.pseudo_id,
            "ehr_id": self.ehr_id,
            "nonce_r": self.cipher_key.nonce_r,
            "masked_key": self.cipher_key.masked_key,
            "cipher_params": self.cipher_key.encode_params(),
            "expiry": u64(self.expiry),
            "authorized_dr_dids": encode_did_list(self.authorized_dr_dids),
        }


def _commit(salt: bytes, value: bytes) -> bytes:
    return sha256(salt + value)


def _signed_bytes(metadata: Mapping[str, bytes], commitments: Mapping[str, bytes]) -> bytes:
    fields = dict(metadata)
    fields.update({f"commitment:{name}": c for name, c in commitments.items()})
    return canonical_encode(fields)


def _compute_vc_id(claims: Mapping[str, bytes], salts: Mapping[str, bytes]) -> bytes:
    fields = {f"claim:{n}": v for n, v in claims.items()}
    fields.update({f"salt:{n}": s for n, s in salts.items()})
    return sha256(canonical_encode(fields))


def _strict_object(pairs):
    out = {}
    for key, value in pairs:
        if key in out:
            raise FormatError(f"duplicate JSON key {key!r}")
        out[key] = value
    return out


def _load_json(text: str | bytes) -> dict[str, Any]:
    try:
        data = json.loads(text, object_pairs_hook=_strict_object)
    except (ValueError, UnicodeDecodeError) as exc:
        raise FormatError(f"not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise FormatError("top level must be an object")
    return data


def _b64_map(value: Any, names: Iterable[str] | None = None) -> dict[str, bytes]:
    if not isinstance(value, dict):
        raise FormatError("expected an object of base64 strings")
    if names is not None and set(value) != set(names):
        raise FormatError(f"unexpected field set {sorted(value)}")
    return {k: b64d(v) for k, v in value.items()}


def _dump(obj: dict[str, Any]) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


class _ClaimAccessors:
    """Typed getters over a ``claims`` byte map (full or disclosed)."""

    claims: Mapping[str, bytes]

    def _claim(self, name: str) -> bytes:
        try:
            return self.claims[name]
        except KeyError:
            raise NotFoundError(f"claim {name!r} not available") from None

    @property
    def subject_dr_did(self) -> Did:
        return Did.parse(self._claim("subject_dr_did").decode("utf-8"))

    @property
    def notary_dids(self) -> list[Did]:
        return decode_did_list(self._claim("notary_dids"))

    @property
    def dc_did(self) -> Did:
        return Did.parse(self._claim("dc_did").decode("utf-8"))

    @property
    def authorized_dr_dids(self) -> list[Did]:
        return decode_did_list(self._claim("authorized_dr_dids"))

    @property
    def pseudo_id(self) -> bytes:
        return self._claim("pseudo_id")

    @property
    def ehr_id(self) -> bytes:
        return self._claim("ehr_id")

    @property
    def nonce_r(self) -> bytes:
        return self._claim("nonce_r")

    @property
    def expiry(self) -> int:
        return from_u64(self._claim("expiry"))

    @property
    def issuer_did(self) -> Did:
        return Did.parse(self.metadata["issuer_did"].decode("utf-8"))

    @property
    def vc_id(self) -> bytes:
        return self.metadata["vc_id"]


@dataclass(frozen=True)
class DelegationCredential(_ClaimAccessors):
    metadata: Mapping[str, bytes]
    claims: Mapping[str, bytes]
    salts: Mapping[str, bytes]
    commitments: Mapping[str, bytes]
    issuer_signature: bytes

    @property
    def cipher_key(self) -> CipherKey:
        params, mode, profile = CipherKey.decode_params(self._claim("cipher_params"))
        return CipherKey(self.nonce_r, self._claim("masked_key"), params, mode, profile)

    def signed_bytes(self) -> bytes:
        return _signed_bytes(self.metadata, self.commitments)

    def to_dict(self) -> dict[str, Any]:
        return {
            "metadata": {k: b64e(v) for k, v in self.metadata.items()},
            "claims": {k: b64e(v) for k, v in self.claims.items()},
            "salts": {k: b64e(v) for k, v in self.salts.items()},
            "commitments": {k: b64e(v) for k, v in self.commitments.items()},
            "issuer_signature": b64e(self.issuer_signature),
        }

    def to_json(self) -> str:
        return _dump(self.to_dict())

    @classmethod
    def from_json(cls, text: str | bytes) -> "DelegationCredential":
        data = _load_json(text)
        if set(data) != {"metadata", "claims", "salts", "commitments", "issuer_signature"}:
            raise FormatError("unexpected credential fields")
        return cls(
            _b64_map(data["metadata"], METADATA_NAMES),
            _b64_map(data["claims"], CLAIM_NAMES),
            _b64_map(data["salts"], CLAIM_NAMES),
            _b64_map(data["commitments"], CLAIM_NAMES),
            b64d(data["issuer_signature"]),
        )

    def encode(self) -> bytes:
        """Raw canonical form (wallet storage)."""
        return canonical_encode({
            "metadata": canonical_encode(self.metadata),
            "claims": canonical_encode(self.claims),
            "salts": canonical_encode(self.salts),
            "commitments": canonical_encode(self.commitments),
            "issuer_signature": self.issuer_signature,
        })

    @classmethod
    def decode(cls, data: bytes) -> "DelegationCredential":
        fields = canonical_decode(data)
        try:
            return cls(
                canonical_decode(fields["metadata"]),
                canonical_decode(fields["claims"]),
                canonical_decode(fields["salts"]),
                canonical_decode(fields["commitments"]),
                fields["issuer_signature"],
            )
        except KeyError as exc:
            raise FormatError(f"malformed credential: {exc}") from exc


@dataclass(frozen=True)
class Presentation(_ClaimAccessors):
    metadata: Mapping[str, bytes]
    commitments: Mapping[str, bytes]
    claims: Mapping[str, bytes]
    salts: Mapping[str, bytes]
    issuer_signature: bytes
    holder_did: Did
    holder_binding: bytes

    @property
    def disclosed(self) -> dict[str, tuple[bytes, bytes]]:
        return {n: (self.salts[n], self.claims[n]) for n in self.claims}

    def to_dict(self) -> dict[str, Any]:
        return {
            "metadata": {k: b64e(v) for k, v in self.metadata.items()},
            "commitments": {k: b64e(v) for k, v in self.commitments.items()},
            "claims": {k: b64e(v) for k, v in self.claims.items()},
            "salts": {k: b64e(v) for k, v in self.salts.items()},
            "issuer_signature": b64e(self.issuer_signature),
            "holder_did": str(self.holder_did),
            "holder_binding": b64e(self.holder_binding),
        }

    def to_json(self) -> str:
        return _dump(self.to_dict())

    @classmethod
    def from_json(cls, text: str | bytes) -> "Presentation":
        data = _load_json(text)
        expected = {
            "metadata", "commitments", "claims", "salts",
            "issuer_signature", "holder_did", "holder_binding",
        }
        if set(data) != expected:
            raise FormatError("unexpected presentation fields")
        claims = _b64_map(data["claims"])
        if not isinstance(data["holder_did"], str):
            raise FormatError("holder_did must be a string")
        return cls(
            _b64_map(data["metadata"], METADATA_NAMES),
            _b64_map(data["commitments"], CLAIM_NAMES),
            claims,
            _b64_map(data["salts"], claims),
            b64d(data["issuer_signature"]),
            Did.parse(data["holder_did"]),
            b64d(data["holder_binding"]),
        )

    def encode(self) -> bytes:
        return canonical_encode({
            "metadata": canonical_encode(self.metadata),
            "commitments": canonical_encode(self.commitments),
            "claims": canonical_encode(self.claims),
            "salts": canonical_encode(self.salts),
            "issuer_signature": self.issuer_signature,
            "holder_did": bytes(self.holder_did),
            "holder_binding": self.holder_binding,
        })


def _binding_message(challenge: bytes, vc_id: bytes) -> bytes:
    return canonical_encode({"challenge": challenge, "vc_id": vc_id})


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def issue(
    owner_wallet: Wallet,
    claims: DelegationClaims | Mapping[str, bytes],
    ledger: Ledger,
    now: int,
    rng: Rng | None = None,
) -> DelegationCredential:
    rng = rng or system_rng()
    if isinstance(claims, DelegationClaims):
        claims = claims.to_claims()
    claims = dict(claims)
    missing = [n for n in CLAIM_NAMES if n not in claims]
    if missing:
        raise ParameterError(f"missing claims: {', '.join(missing)}")
    extra = set(claims) - set(CLAIM_NAMES)
    if extra:
        raise ParameterError(f"unknown claims: {', '.join(sorted(extra))}")
    expiry = from_u64(claims["expiry"])
    if expiry <= now:
        raise ParameterError(f"expiry {expiry} is not after issuance time {now}")
    referenced = [owner_wallet.did, Did.parse(claims["subject_dr_did"].decode()),
                  Did.parse(claims["dc_did"].decode())]
    referenced += decode_did_list(claims["notary_dids"])
    referenced += decode_did_list(claims["authorized_dr_dids"])
    for did in referenced:
        try:
            resolve(did, ledger)
        except NotFoundError as exc:
            raise UnresolvedReferenceError(str(exc)) from exc

    salts = {name: rng.randbytes(SALT_BYTES) for name in CLAIM_NAMES}
    commitments = {name: _commit(salts[name], claims[name]) for name in CLAIM_NAMES}
    metadata = {
        "type": CREDENTIAL_TYPE,
        "issuer_did": bytes(owner_wallet.did),
        "issued_at": u64(now),
        "vc_id": _compute_vc_id(claims, salts),
    }
    signature = sign(_signed_bytes(metadata, commitments), owner_wallet.signing_keypair)
    return DelegationCredential(metadata, claims, salts, commitments, signature)


def _check_issuer(metadata, commitments, signature, ledger) -> bool:
    try:
        if metadata.get("type") != CREDENTIAL_TYPE:
            return False
        issuer = Did.parse(metadata["issuer_did"].decode("utf-8"))
        doc = resolve(issuer, ledger)
        return verify(_signed_bytes(metadata, commitments), signature, doc.signing_public_key)
    except (ProtocolError, KeyError, UnicodeDecodeError):
        return False


def verify_credential(credential: DelegationCredential, ledger: Ledger, now: int) -> Verdict:
    """Full check of a credential as held by its subject (all claims present)."""
    if set(credential.commitments) != set(CLAIM_NAMES):
        return reject("commitment-mismatch")
    if not _check_issuer(
        credential.metadata, credential.commitments, credential.issuer_signature, ledger
    ):
        return reject("bad-signature")
    if set(credential.claims) != set(CLAIM_NAMES) or set(credential.salts) != set(CLAIM_NAMES):
        return reject("commitment-mismatch")
    for name in CLAIM_NAMES:
        if _commit(credential.salts[name], credential.claims[name]) != credential.commitments[name]:
            return reject("commitment-mismatch")
    if _compute_vc_id(credential.claims, credential.salts) != credential.vc_id:
        return reject("commitment-mismatch")
    try:
        expiry = credential.expiry
        credential.cipher_key
        credential.notary_dids
    except (ProtocolError, UnicodeDecodeError):
        return reject("malformed")
    if expiry <= now:
        return reject("expired")
    if ledger.is_revoked(credential.vc_id):
        return reject("revoked")
    return ACCEPT


def present(
    credential: DelegationCredential,
    holder_wallet: Wallet,
    disclose: Iterable[str],
    challenge: bytes,
) -> Presentation:
    disclose = set(disclose)
    unknown = disclose - set(credential.claims)
    if unknown:
        raise ParameterError(f"cannot disclose unknown claims {sorted(unknown)}")
    if holder_wallet.did != credential.subject_dr_did:
        raise BindingError("only the credential subject can present it")
    binding = sign(_binding_message(challenge, credential.vc_id), holder_wallet.signing_keypair)
    return Presentation(
        metadata=dict(credential.metadata),
        commitments=dict(credential.commitments),
        claims={n: credential.claims[n] for n in sorted(disclose)},
        salts={n: credential.salts[n] for n in sorted(disclose)},
        issuer_signature=credential.issuer_signature,
        holder_did=holder_wallet.did,
        holder_binding=binding,
    )


def check_holder_binding(p: Presentation, challenge: bytes, ledger: Ledger) -> bool:
    """Holder's challenge signature only; says nothing about the subject claim."""
    try:
        doc = resolve(p.holder_did, ledger)
        return verify(_binding_message(challenge, p.vc_id), p.holder_binding, doc.signing_public_key)
    except (ProtocolError, KeyError):
        return False


def verify_presentation(p: Presentation, challenge: bytes, ledger: Ledger, now: int) -> Verdict:
    if set(p.commitments) != set(CLAIM_NAMES):
        return reject("commitment-mismatch")
    if not _check_issuer(p.metadata, p.commitments, p.issuer_signature, ledger):
        return reject("bad-signature")
    if set(p.claims) != set(p.salts) or not set(p.claims) <= set(CLAIM_NAMES):
        return reject("commitment-mismatch")
    for name, value in p.claims.items():
        if _commit(p.salts[name], value) != p.commitments[name]:
            return reject("commitment-mismatch")
    if "expiry" not in p.claims:
        return reject("expiry-not-disclosed")
    try:
        expiry = p.expiry
        subject = p.subject_dr_did if "subject_dr_did" in p.claims else None
    except (ProtocolError, UnicodeDecodeError):
        return reject("malformed")
    if subject != p.holder_did or not check_holder_binding(p, challenge, ledger):
        return reject("bad-binding")
    if expiry <= now:
        return reject("expired")
    if ledger.is_revoked(p.vc_id):
        return reject("revoked")
    return ACCEPT


def revoke(owner_pseudo_secret: KeyPair, vc_id: bytes, ledger: Ledger) -> RevocationEntry:
    """Post a revocation signed with the pseudoID's ephemeral key.

    Raises :class:`AuthorizationError` (from the ledger) when the key is not
    the one the credential's authorization record was posted under.
    """
    pseudo_id = sha256(owner_pseudo_secret.public_key)
    entry = RevocationEntry(
        vc_id, pseudo_id, sign(RevocationEntry.message(vc_id, pseudo_id), owner_pseudo_secret)
    )
    ledger.append("revocation", entry.to_payload())
    return entry


__all__ = [
    "ACCEPT",
    "CLAIM_NAMES",
    "DelegationClaims",
    "DelegationCredential",
    "Presentation",
    "RevocationEntry",
    "Verdict",
    "check_holder_binding",
    "issue",
    "present",
    "reject",
    "revoke",
    "verify_credential",
    "verify_presentation",
]
