"""Protocol roles and the three end-to-end flows.

Actors exchange :class:`SecureMessage` values through a synchronous
:class:`Network`: every payload is public-key encrypted to the recipient
and signed by the sender, and every message, ledger append and verifier
decision lands in the shared :class:`Transcript`.

Party indices for the threshold layer are fixed by the delegation:
notaries are ``1..n-1`` in the order they are named, the custodian is
``n``. The custodian takes part in every access, so an authorized set is
the custodian plus ``t - 1`` notaries.
"""

from __future__ import annotations

import hashlib
import json
import random
import threading
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from ._codec import canonical_decode, canonical_encode, from_u64, u64
from .credential import (
    DelegationClaims,
    DelegationCredential,
    Presentation,
    Verdict,
    issue,
    present,
    reject,
    revoke,
    verify_credential,
    verify_presentation,
)
from .crypto import (
    PRODUCTION,
    BlockCipherKey,
    CipherProfile,
    KeyPair,
    Rng,
    block_encrypt,
    generate_keypair,
    pk_decrypt,
    pk_encrypt,
    sha256,
    sign,
    sym_decrypt,
    sym_encrypt,
    verify,
)
from .ehr_store import DEFAULT_LINK_TTL, AccessLink, CustodianStore
from .errors import (
    AccessDenied,
    ConfigurationError,
    FormatError,
    NotFoundError,
    ParameterError,
    ProtocolError,
    TransportError,
)
from .identity import Did, Wallet, create_identity, resolve
from .ledger import (
    AccessEvent,
    AuthorizationRecord,
    Ledger,
    LedgerRecord,
    actor_tag,
    fetch_shares_for,
)
from .threshold import (
    CipherKey,
    KeyShareSet,
    Mode,
    PartialContribution,
    PartyShares,
    ThresholdParams,
    combine_cascade,
    combine_xor,
    compute_partial,
    decode_label,
    derive_cipher_key,
    encode_label,
    generate_key_shares,
)

ROLES = ("DO", "HSP", "DR", "Notary", "DC")
AVAILABILITY = ("do_unavailable", "do_available_approves", "do_available_denies")

NOTARY_DISCLOSURE = frozenset({
    "pseudo_id", "ehr_id", "expiry", "nonce_r", "notary_dids",
    "subject_dr_did", "authorized_dr_dids",
})
DC_DISCLOSURE = frozenset({
    "pseudo_id", "ehr_id", "expiry", "nonce_r", "notary_dids", "subject_dr_did",
})

# reply kinds that carry threshold material back to the requester
RELEASE_KINDS = ("partial_contribution", "cascade_labels", "cascade_result")


# ---------------------------------------------------------------------------
# Transcript
# ---------------------------------------------------------------------------


class Transcript:
    def __init__(self):
        self.entries: list[dict] = []
        self._lock = threading.Lock()

    def add(self, entry_type: str, **fields) -> None:
        with self._lock:
            self.entries.append({"i": len(self.entries), "type": entry_type, **fields})

    def on_ledger(self, record: LedgerRecord) -> None:
        self.add("ledger", seq=record.seq, kind=record.kind, record_hash=record.record_hash.hex())

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e, sort_keys=True) + "\n" for e in self.entries)

    def digest(self) -> str:
        return hashlib.sha256(self.to_jsonl().encode()).hexdigest()

    def since(self, index: int) -> list[dict]:
        return self.entries[index:]


# ---------------------------------------------------------------------------
# Secure channel
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SecureMessage:
    sender_did: Did
    recipient_did: Did
    kind: str
    payload: bytes
    sender_signature: bytes

    @staticmethod
    def signed_bytes(sender: Did, recipient: Did, kind: str, payload: bytes) -> bytes:
        return canonical_encode({
            "sender": bytes(sender),
            "recipient": bytes(recipient),
            "kind": kind.encode(),
            "payload": payload,
        })

    @classmethod
    def seal(
        cls, sender: Wallet, recipient_doc, kind: str, body: Mapping[str, bytes], rng: Rng
    ) -> "SecureMessage":
        payload = pk_encrypt(canonical_encode(body), recipient_doc.encryption_public_key, rng)
        sig = sign(cls.signed_bytes(sender.did, recipient_doc.did, kind, payload),
                   sender.signing_keypair)
        return cls(sender.did, recipient_doc.did, kind, payload, sig)

    def open(self, recipient: Wallet, ledger: Ledger) -> dict[str, bytes]:
        if recipient.did != self.recipient_did:
            raise TransportError("message addressed to someone else")
        try:
            sender_doc = resolve(self.sender_did, ledger)
        except NotFoundError as exc:
            raise TransportError(f"unknown sender {self.sender_did}") from exc
        signed = self.signed_bytes(self.sender_did, self.recipient_did, self.kind, self.payload)
        if not verify(signed, self.sender_signature, sender_doc.signing_public_key):
            raise TransportError(f"sender signature invalid for {self.sender_did}")
        try:
            return canonical_decode(pk_decrypt(self.payload, recipient.encryption_keypair))
        except (ProtocolError, FormatError) as exc:
            raise TransportError(f"cannot open message: {exc}") from exc

    def wire(self) -> bytes:
        return canonical_encode({
            "sender": bytes(self.sender_did),
            "recipient": bytes(self.recipient_did),
            "kind": self.kind.encode(),
            "payload": self.payload,
            "signature": self.sender_signature,
        })


class Network:
    """Synchronous, reliable delivery between registered actors."""

    def __init__(self, world: "World"):
        self.world = world
        self.actors: dict[Did, "Actor"] = {}
        self.wire_log: list[bytes] = []

    def register(self, actor: "Actor") -> None:
        self.actors[actor.did] = actor

    def deliver(self, message: SecureMessage) -> SecureMessage:
        """Hand ``message`` to its recipient and return the sealed reply."""
        wire = message.wire()
        self.wire_log.append(wire)
        self.world.transcript.add(
            "message",
            sender=str(message.sender_did),
            recipient=str(message.recipient_did),
            kind=message.kind,
            digest=sha256(wire).hex(),
        )
        recipient = self.actors.get(message.recipient_did)
        if recipient is None:
            raise TransportError(f"no actor at {message.recipient_did}")
        return recipient.receive(message)


# ---------------------------------------------------------------------------
# Actors
# ---------------------------------------------------------------------------


class Actor:
    role = "actor"

    def __init__(self, world: "World", wallet: Wallet, name: str):
        self.world = world
        self.wallet = wallet
        self.name = name
        self.observations: list[bytes] = []
        self._lock = threading.RLock()

    @property
    def did(self) -> Did:
        return self.wallet.did

    @property
    def ledger(self) -> Ledger:
        return self.world.ledger

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.name!r}, {self.did})"

    def observe(self, label: str, data: Mapping[str, bytes] | bytes) -> None:
        blob = data if isinstance(data, bytes) else canonical_encode(data)
        self.observations.append(canonical_encode({"label": label.encode(), "data": blob}))

    def local_state(self) -> bytes:
        return b""

    def self_artifact(self) -> bytes:
        return canonical_encode({
            "wallet": self.wallet.observable_state(),
            "local": self.local_state(),
        })

    def artifacts(self) -> list[bytes]:
        return [self.self_artifact(), *self.observations]

    # -- messaging ---------------------------------------------------------

    def request(self, recipient: Did, kind: str, body: Mapping[str, bytes]) -> tuple[str, dict]:
        doc = resolve(recipient, self.ledger)
        message = SecureMessage.seal(self.wallet, doc, kind, body, self.world.rng)
        self.observe(f"sent:{kind}", {"peer": bytes(recipient), **body})
        reply = self.world.network.deliver(message)
        opened = reply.open(self.wallet, self.ledger)
        if reply.sender_did != recipient:
            raise TransportError("reply from unexpected sender")
        self.observe(f"received:{reply.kind}", {"peer": bytes(recipient), **opened})
        return reply.kind, opened

    def receive(self, message: SecureMessage) -> SecureMessage:
        with self._lock:
            body = message.open(self.wallet, self.ledger)
            self.observe(f"received:{message.kind}", {"peer": bytes(message.sender_did), **body})
            handler = getattr(self, f"on_{message.kind}", None)
            if handler is None:
                raise TransportError(f"{self.role} does not handle {message.kind!r}")
            kind, reply = handler(message.sender_did, body)
            self.observe(f"sent:{kind}", {"peer": bytes(message.sender_did), **reply})
            doc = resolve(message.sender_did, self.ledger)
            sealed = SecureMessage.seal(self.wallet, doc, kind, reply, self.world.rng)
            self.world.network.wire_log.append(sealed.wire())
            self.world.transcript.add(
                "message",
                sender=str(self.did),
                recipient=str(message.sender_did),
                kind=kind,
                digest=sha256(sealed.wire()).hex(),
            )
            return sealed

    def send(self, recipient: Did, kind: str, body: Mapping[str, bytes]) -> dict:
        return self.request(recipient, kind, body)[1]


def _ok() -> tuple[str, dict]:
    return "ack", {}


class HealthServiceProvider(Actor):
    role = "HSP"

    def store_ehr(self, do_did: Did, dc_did: Did, ehr: bytes) -> tuple[bytes, bytes, Did]:
        """Flow 1: encrypt, upload to the custodian, hand ``sk`` to the owner."""
        profile = self.world.profile
        rng = self.world.rng
        sk = rng.randbytes(profile.key_width)
        ciphertext = sym_encrypt(ehr, BlockCipherKey(sk), rng, profile)
        kind, reply = self.request(dc_did, "upload", {"ciphertext": ciphertext})
        if kind != "uploaded":
            raise ProtocolError(f"upload failed: {reply.get('reason', b'').decode()}")
        ehr_id = reply["ehr_id"]
        self.send(do_did, "ehr_key", {"sk": sk, "ehr_id": ehr_id, "dc_did": bytes(dc_did)})
        return sk, ehr_id, dc_did


class DataOwner(Actor):
    role = "DO"

    def on_ehr_key(self, sender: Did, body: dict) -> tuple[str, dict]:
        ehr_id = body["ehr_id"]
        prefix = f"ehr/{ehr_id.hex()}"
        self.wallet.secrets[f"{prefix}/sk"] = body["sk"]
        self.wallet.secrets[f"{prefix}/dc_did"] = body["dc_did"]
        self.wallet.secrets["ehr/latest"] = ehr_id
        return _ok()

    def ehr_secret(self, ehr_id: bytes | None = None) -> tuple[bytes, bytes, Did]:
        if ehr_id is None:
            ehr_id = self.wallet.secrets.get("ehr/latest")
            if ehr_id is None:
                raise ParameterError("owner holds no EHR key yet")
        prefix = f"ehr/{ehr_id.hex()}"
        try:
            sk = self.wallet.secrets[f"{prefix}/sk"]
            dc = Did.parse(self.wallet.secrets[f"{prefix}/dc_did"].decode())
        except KeyError:
            raise ParameterError(f"owner holds no key for ehr {ehr_id.hex()}") from None
        return sk, ehr_id, dc

    def delegate(
        self,
        dr_dids: Sequence[Did],
        notary_dids: Sequence[Did],
        params: ThresholdParams,
        expiry: int,
        mode: Mode = "xor",
        dc_did: Did | None = None,
        ehr_id: bytes | None = None,
    ) -> "Delegation":
        """Flow 2: split keys, post the authorization record, issue credentials."""
        if params.n != len(notary_dids) + 1:
            raise ConfigurationError(
                f"n={params.n} but {len(notary_dids)} notaries + 1 custodian were named"
            )
        if not dr_dids:
            raise ConfigurationError("at least one data requester is required")
        world = self.world
        rng = world.rng
        sk, ehr_id, stored_dc = self.ehr_secret(ehr_id)
        dc_did = dc_did or stored_dc
        shares = generate_key_shares(params, rng, world.profile)
        cipher_key = derive_cipher_key(sk, shares, rng, mode)
        ephemeral = generate_keypair("signing", rng)
        pseudo_id = sha256(ephemeral.public_key)

        credentials = []
        for dr in dr_dids:
            claims = DelegationClaims(
                subject_dr_did=dr,
                notary_dids=tuple(notary_dids),
                dc_did=dc_did,
                pseudo_id=pseudo_id,
                ehr_id=ehr_id,
                cipher_key=cipher_key,
                expiry=expiry,
                authorized_dr_dids=tuple(dr_dids),
            )
            credentials.append(issue(self.wallet, claims, self.ledger, world.now, rng))

        parties = [(resolve(d, self.ledger), shares.shares_of(i + 1))
                   for i, d in enumerate(notary_dids)]
        parties.append((resolve(dc_did, self.ledger), shares.shares_of(params.n)))
        record = AuthorizationRecord.create(
            ephemeral, ehr_id, parties, mode, [c.vc_id for c in credentials], rng
        )
        seq = self.ledger.post_authorization(record)

        tag = pseudo_id.hex()
        self.wallet.secrets[f"pseudo/{tag}/public"] = ephemeral.public_key
        self.wallet.secrets[f"pseudo/{tag}/private"] = ephemeral.private_key
        self.wallet.secrets[f"pseudo/{tag}/keys"] = canonical_encode(
            {encode_label(b): k.key_bytes for b, k in shares.keys.items()}
        )
        for credential in credentials:
            self.wallet.credentials.append(credential.encode())
            self.send(credential.subject_dr_did, "credential", {"credential": credential.encode()})
        return Delegation(pseudo_id, ehr_id, seq, tuple(credentials), shares, cipher_key)

    def pseudo_keypair(self, pseudo_id: bytes) -> KeyPair:
        tag = pseudo_id.hex()
        try:
            return KeyPair(
                self.wallet.secrets[f"pseudo/{tag}/public"],
                self.wallet.secrets[f"pseudo/{tag}/private"],
                "signing",
            )
        except KeyError:
            raise NotFoundError(f"no pseudoID {tag} in this wallet") from None

    def issued_credentials(self) -> list[DelegationCredential]:
        return [DelegationCredential.decode(c) for c in self.wallet.credentials]

    def revoke(self, vc_id: bytes):
        for credential in self.issued_credentials():
            if credential.vc_id == vc_id:
                return revoke(self.pseudo_keypair(credential.pseudo_id), vc_id, self.ledger)
        raise NotFoundError("credential was not issued by this owner")


@dataclass(frozen=True)
class Delegation:
    pseudo_id: bytes
    ehr_id: bytes
    record_seq: int
    credentials: tuple[DelegationCredential, ...]
    shares: KeyShareSet
    cipher_key: CipherKey


@dataclass(frozen=True)
class Notification:
    owner_did: Did
    pseudo_id: bytes
    ehr_id: bytes
    requester_did: Did
    at: int


class _Verifier(Actor):
    """Shared verifier logic for notaries and the custodian."""

    disclosure: frozenset = frozenset()

    def __init__(self, world, wallet, name):
        super().__init__(world, wallet, name)
        self._challenges: dict[Did, bytes] = {}
        self._sessions: dict[tuple[Did, bytes], PartyShares] = {}
        self.fetched: list[PartyShares] = []

    def on_challenge_request(self, sender: Did, body: dict) -> tuple[str, dict]:
        challenge = self.world.rng.randbytes(32)
        self._challenges[sender] = challenge
        return "challenge", {"challenge": challenge}

    def _check(self, sender: Did, body: dict) -> tuple[Presentation | None, Verdict]:
        challenge = self._challenges.pop(sender, None)
        try:
            p = Presentation.from_json(body["presentation"])
        except (FormatError, KeyError):
            return None, reject("malformed")
        self.observe("presentation", p.encode())
        if challenge is None or p.holder_did != sender:
            return p, reject("bad-binding")
        verdict = verify_presentation(p, challenge, self.ledger, self.world.now)
        self.world.transcript.add(
            "decision", verifier=str(self.did), role=self.role, verdict=str(verdict)
        )
        return p, verdict

    def _shares_for(self, p: Presentation) -> tuple[AuthorizationRecord, PartyShares]:
        record = self.ledger.find_authorization(p.pseudo_id, p.ehr_id)
        shares = fetch_shares_for(self.wallet, record)
        self.fetched.append(shares)
        self.observe("fetched_shares", shares.encode())
        return record, shares

    def _release(self, sender, p, record, shares, n_blocks) -> tuple[str, dict]:
        if record.mode == "cascade":
            self._sessions[(sender, p.pseudo_id)] = shares
            labels = canonical_encode({encode_label(b): b"" for b in shares.labels})
            return "cascade_labels", {"labels": labels, "mode": b"cascade"}
        partial = compute_partial(shares, p.nonce_r, n_blocks)
        return "partial_contribution", {"partial": partial.encode(), "mode": b"xor"}

    def on_cascade_step(self, sender: Did, body: dict) -> tuple[str, dict]:
        shares = self._sessions.get((sender, body["pseudo_id"]))
        if shares is None:
            return "access_denied", {"reason": b"no-session"}
        label = decode_label(body["label"].decode())
        if label not in shares.keys:
            return "access_denied", {"reason": b"not-a-holder"}
        out = block_encrypt(body["block"], shares.keys[label], shares.profile)
        return "cascade_result", {"block": out}

    def _event(self, p: Presentation, event: str) -> None:
        self.ledger.log_event(AccessEvent(
            p.pseudo_id, p.ehr_id, actor_tag(self.did, p.pseudo_id), event, self.world.now
        ))

    def local_state(self) -> bytes:
        return canonical_encode({
            f"shares{i}": s.encode() for i, s in enumerate(self.fetched)
        })


AvailabilityOracle = Callable[[bytes], str]


class Notary(_Verifier):
    role = "Notary"
    disclosure = NOTARY_DISCLOSURE

    def __init__(self, world, wallet, name, availability: AvailabilityOracle | None = None):
        super().__init__(world, wallet, name)
        self.availability = availability
        self.outbox: list[Notification] = []

    def on_access_request(self, sender: Did, body: dict) -> tuple[str, dict]:
        p, verdict = self._check(sender, body)
        if verdict and ("notary_dids" not in p.claims or self.did not in p.notary_dids):
            verdict = reject("not-designated")
        if not verdict:
            if p is not None and "pseudo_id" in p.claims and "ehr_id" in p.claims:
                self._event(p, "notary_denied")
            return "access_denied", {"reason": verdict.reason.encode()}
        oracle = self.availability or self.world.availability
        decision = oracle(p.pseudo_id)
        if decision not in AVAILABILITY:
            raise ConfigurationError(f"availability oracle returned {decision!r}")
        self.world.transcript.add("oracle", notary=str(self.did), decision=decision)
        if decision == "do_available_denies":
            self._event(p, "notary_denied")
            return "access_denied", {"reason": b"owner-denied"}
        try:
            record, shares = self._shares_for(p)
        except ProtocolError as exc:
            self._event(p, "notary_denied")
            return "access_denied", {"reason": type(exc).__name__.encode()}
        self._event(p, "notary_verified")
        if decision == "do_unavailable":
            self.outbox.append(Notification(
                p.issuer_did, p.pseudo_id, p.ehr_id, sender, self.world.now
            ))
        return self._release(sender, p, record, shares, from_u64(body["n_blocks"]))

    def local_state(self) -> bytes:
        notes = {
            f"note{i}": canonical_encode({
                "owner": bytes(n.owner_did),
                "pseudo_id": n.pseudo_id,
                "ehr_id": n.ehr_id,
                "requester": bytes(n.requester_did),
            })
            for i, n in enumerate(self.outbox)
        }
        return canonical_encode({"verifier": super().local_state(), **notes})


class DataCustodian(_Verifier):
    role = "DC"
    disclosure = DC_DISCLOSURE

    def __init__(self, world, wallet, name):
        super().__init__(world, wallet, name)
        self.store = CustodianStore(world.rng, world.ledger)

    def on_upload(self, sender: Did, body: dict) -> tuple[str, dict]:
        try:
            ehr_id = self.store.upload(body["ciphertext"], sender)
        except ProtocolError as exc:
            return "upload_failed", {"reason": str(exc).encode()}
        return "uploaded", {"ehr_id": ehr_id}

    def on_access_request(self, sender: Did, body: dict) -> tuple[str, dict]:
        p, verdict = self._check(sender, body)
        try:
            notary = Did.parse(body["notary_did"].decode())
        except (KeyError, FormatError, UnicodeDecodeError):
            notary = None
        if verdict and ("notary_dids" not in p.claims or notary not in p.notary_dids):
            verdict = reject("unknown-notary")
        if verdict and self.world.dc_checks_notary:
            tag = actor_tag(notary, p.pseudo_id)
            seen = any(
                e.actor_tag == tag and e.event == "notary_verified"
                for e in self.ledger.access_events(p.pseudo_id, p.ehr_id)
            )
            if not seen:
                verdict = reject("notary-not-verified")
        if not verdict:
            return "access_denied", {"reason": verdict.reason.encode()}
        try:
            record, shares = self._shares_for(p)
        except ProtocolError as exc:
            return "access_denied", {"reason": type(exc).__name__.encode()}
        self._event(p, "dc_verified")
        link = self.store.grant_link(
            p.ehr_id, sender, self.world.link_ttl, self.world.now, p.pseudo_id
        )
        self._event(p, "dc_granted_link")
        kind, reply = self._release(sender, p, record, shares, from_u64(body["n_blocks"]))
        reply.update({
            "link_token": link.token,
            "link_ehr_id": link.ehr_id,
            "link_expires_at": u64(link.expires_at),
            "link_tag": link.issued_to_tag,
        })
        return kind, reply

    def on_download(self, sender: Did, body: dict) -> tuple[str, dict]:
        link = AccessLink(
            body["token"], body["ehr_id"], from_u64(body["expires_at"]), body["tag"]
        )
        try:
            return "ehr_blob", {"ciphertext": self.store.download(link, self.world.now)}
        except ProtocolError as exc:
            return "download_failed", {"reason": type(exc).__name__.encode()}

    def local_state(self) -> bytes:
        return canonical_encode({
            "verifier": super().local_state(),
            "store": self.store.observable_state(),
        })


class _RemoteCascade:
    """Cascade step function that asks cooperating verifiers to apply each link."""

    def __init__(self, dr: "DataRequester", pseudo_id: bytes, holders: dict):
        self.dr = dr
        self.pseudo_id = pseudo_id
        self.holders = holders
        self.labels = frozenset(holders)

    def __call__(self, label, block: bytes) -> bytes:
        did = self.holders[label]
        kind, reply = self.dr.request(did, "cascade_step", {
            "pseudo_id": self.pseudo_id, "label": encode_label(label).encode(), "block": block,
        })
        if kind != "cascade_result":
            raise AccessDenied(reply.get("reason", b"").decode(), by=str(did))
        return reply["block"]


class DataRequester(Actor):
    role = "DR"

    def __init__(self, world, wallet, name):
        super().__init__(world, wallet, name)
        self.recovered: list[tuple[bytes, bytes]] = []

    def on_credential(self, sender: Did, body: dict) -> tuple[str, dict]:
        credential = DelegationCredential.decode(body["credential"])
        verdict = verify_credential(credential, self.ledger, self.world.now)
        if not verdict or credential.subject_dr_did != self.did:
            return "credential_rejected", {"reason": str(verdict).encode()}
        self.wallet.credentials.append(body["credential"])
        return _ok()

    def credentials(self) -> list[DelegationCredential]:
        return [DelegationCredential.decode(c) for c in self.wallet.credentials]

    def credential(self, vc_id: bytes | None = None) -> DelegationCredential:
        held = self.credentials()
        if not held:
            raise NotFoundError(f"{self.name} holds no credentials")
        if vc_id is None:
            return held[-1]
        for c in held:
            if c.vc_id == vc_id:
                return c
        raise NotFoundError("credential not held")

    def _present_to(self, verifier: Did, credential, disclose, extra: dict) -> tuple[str, dict]:
        _, reply = self.request(verifier, "challenge_request", {})
        p = present(credential, self.wallet, disclose, reply["challenge"])
        body = {"presentation": p.to_json().encode(), "n_blocks": u64(credential.cipher_key.n_blocks)}
        body.update(extra)
        return self.request(verifier, "access_request", body)

    def access(
        self,
        credential: DelegationCredential | None = None,
        notaries: Sequence[Did] | Did | None = None,
        *,
        notary_disclosure: Iterable[str] = NOTARY_DISCLOSURE,
        dc_disclosure: Iterable[str] = DC_DISCLOSURE,
    ) -> bytes:
        """Flow 3: collect partial ciphers from notaries and custodian, decrypt the EHR.

        ``notaries`` defaults to the first ``t - 1`` notaries named in the
        credential.
        """
        credential = credential or self.credential()
        cipher_key = credential.cipher_key
        if notaries is None:
            notaries = credential.notary_dids[: cipher_key.params.t - 1]
        elif isinstance(notaries, Did):
            notaries = [notaries]
        self.world.transcript.add("access_attempt", requester=str(self.did),
                                  notaries=[str(n) for n in notaries])
        partials: list[PartialContribution] = []
        holders: dict = {}
        for notary in notaries:
            kind, reply = self._present_to(notary, credential, notary_disclosure, {})
            self._collect(kind, reply, notary, partials, holders)
        contact = notaries[0] if notaries else credential.notary_dids[0]
        kind, reply = self._present_to(
            credential.dc_did, credential, dc_disclosure, {"notary_did": bytes(contact)}
        )
        self._collect(kind, reply, credential.dc_did, partials, holders)
        link = AccessLink(
            reply["link_token"], reply["link_ehr_id"],
            from_u64(reply["link_expires_at"]), reply["link_tag"],
        )
        if cipher_key.mode == "xor":
            sk = combine_xor(cipher_key, partials)
        else:
            sk = combine_cascade(
                cipher_key, _RemoteCascade(self, credential.pseudo_id, holders)
            )
        return self._download_and_decrypt(credential, link, sk)

    def _collect(self, kind, reply, verifier, partials, holders) -> None:
        if kind == "access_denied":
            raise AccessDenied(reply["reason"].decode(), by=str(verifier))
        if kind == "partial_contribution":
            partials.append(PartialContribution.decode(reply["partial"]))
        elif kind == "cascade_labels":
            for name in canonical_decode(reply["labels"]):
                holders.setdefault(decode_label(name), verifier)
        else:
            raise ProtocolError(f"unexpected reply {kind!r}")

    def download(self, link: AccessLink, dc_did: Did) -> bytes:
        kind, reply = self.request(dc_did, "download", {
            "token": link.token, "ehr_id": link.ehr_id,
            "expires_at": u64(link.expires_at), "tag": link.issued_to_tag,
        })
        if kind != "ehr_blob":
            raise AccessDenied(reply["reason"].decode(), by=str(dc_did))
        return reply["ciphertext"]

    def _download_and_decrypt(self, credential, link: AccessLink, sk: bytes) -> bytes:
        ciphertext = self.download(link, credential.dc_did)
        profile = credential.cipher_key.profile
        plaintext = sym_decrypt(ciphertext, BlockCipherKey(sk), profile)
        self.recovered.append((sk, plaintext))
        self.observe("recovered", {"sk": sk, "ehr": plaintext})
        return plaintext

    def local_state(self) -> bytes:
        return canonical_encode({
            f"recovered{i}": canonical_encode({"sk": sk, "ehr": ehr})
            for i, (sk, ehr) in enumerate(self.recovered)
        })


_ROLE_CLASSES = {
    "DO": DataOwner,
    "HSP": HealthServiceProvider,
    "DR": DataRequester,
    "Notary": Notary,
    "DC": DataCustodian,
}


class ScriptedAvailability:
    """Returns scripted responses in order, then ``default`` forever."""

    def __init__(self, script: Iterable[str] = (), default: str = "do_unavailable"):
        self.script = list(script)
        for answer in [*self.script, default]:
            if answer not in AVAILABILITY:
                raise ConfigurationError(f"unknown availability response {answer!r}")
        self.default = default
        self.calls = 0

    def __call__(self, pseudo_id: bytes) -> str:
        answer = self.script[self.calls] if self.calls < len(self.script) else self.default
        self.calls += 1
        return answer


class World:
    """Shared simulation state: ledger, clock, randomness, network, actors."""

    def __init__(
        self,
        seed: int | None = None,
        profile: CipherProfile = PRODUCTION,
        *,
        rng: Rng | None = None,
        link_ttl: int = DEFAULT_LINK_TTL,
        availability: AvailabilityOracle | None = None,
        dc_checks_notary: bool = True,
    ):
        self.rng = rng or random.Random(seed)
        self.profile = profile
        self.now = 0
        self.link_ttl = link_ttl
        self.availability = availability or ScriptedAvailability()
        self.dc_checks_notary = dc_checks_notary
        self.transcript = Transcript()
        self.ledger = Ledger()
        self.ledger.subscribe(self.transcript.on_ledger)
        self.network = Network(self)
        self.actors: dict[str, Actor] = {}

    def tick(self, ticks: int = 1) -> int:
        if ticks < 0:
            raise ParameterError("time only moves forward")
        self.now += ticks
        self.transcript.add("tick", now=self.now)
        return self.now

    def add_actor(self, role: str, name: str | None = None, **kwargs) -> Actor:
        if role not in _ROLE_CLASSES:
            raise ConfigurationError(f"unknown role {role!r}")
        name = name or f"{role.lower()}{sum(a.role == role for a in self.actors.values())}"
        if name in self.actors:
            raise ConfigurationError(f"duplicate actor name {name!r}")
        wallet, _ = create_identity(self.rng)
        actor = _ROLE_CLASSES[role](self, wallet, name, **kwargs)
        self.ledger.register_did(wallet, self.now)
        self.network.register(actor)
        self.actors[name] = actor
        return actor

    def by_role(self, role: str) -> list[Actor]:
        return [a for a in self.actors.values() if a.role == role]

    def by_did(self, did: Did) -> Actor:
        return self.network.actors[did]

    @property
    def owner(self) -> DataOwner:
        return self.by_role("DO")[0]

    @property
    def hsp(self) -> HealthServiceProvider:
        return self.by_role("HSP")[0]

    @property
    def custodian(self) -> DataCustodian:
        return self.by_role("DC")[0]

    @property
    def notaries(self) -> list[Notary]:
        return self.by_role("Notary")

    @property
    def requesters(self) -> list[DataRequester]:
        return self.by_role("DR")


def build_world(
    notaries: int = 2,
    requesters: int = 1,
    seed: int | None = None,
    profile: CipherProfile = PRODUCTION,
    **kwargs,
) -> World:
    """A world with one owner, HSP and custodian plus the given notaries and requesters."""
    world = World(seed, profile, **kwargs)
    world.add_actor("DO", "do")
    world.add_actor("HSP", "hsp")
    world.add_actor("DC", "dc")
    for i in range(notaries):
        world.add_actor("Notary", f"notary{i}")
    for i in range(requesters):
        world.add_actor("DR", f"dr{i}")
    return world


# -- module-level flow entry points ----------------------------------------


def flow1_store_ehr(world: World, ehr_plaintext: bytes) -> tuple[bytes, bytes, Did]:
    return world.hsp.store_ehr(world.owner.did, world.custodian.did, ehr_plaintext)


def flow2_delegate(
    world: World,
    params: ThresholdParams,
    expiry: int,
    mode: Mode = "xor",
    dr_dids: Sequence[Did] | None = None,
    notary_dids: Sequence[Did] | None = None,
) -> Delegation:
    dr_dids = dr_dids if dr_dids is not None else [a.did for a in world.requesters]
    notary_dids = notary_dids if notary_dids is not None else [a.did for a in world.notaries]
    return world.owner.delegate(dr_dids, notary_dids, params, expiry, mode, world.custodian.did)


def flow3_access(
    world: World, dr: DataRequester, credential=None, notaries=None, **kwargs
) -> bytes:
    return dr.access(credential, notaries, **kwargs)
