"""Collusion and tamper experiments against a running :class:`World`."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable

from ._codec import canonical_decode
from .actors import (
    NOTARY_DISCLOSURE,
    Actor,
    DataCustodian,
    DataOwner,
    DataRequester,
    HealthServiceProvider,
    Notary,
    SecureMessage,
    World,
    build_world,
    flow1_store_ehr,
    flow2_delegate,
)
from .credential import _binding_message, present
from .crypto import PRODUCTION, CipherProfile, pk_encrypt, sign
from .errors import (
    AccessDenied,
    AuthenticityError,
    BindingError,
    NotARecipientError,
    ProtocolError,
    TransportError,
)
from .identity import create_identity, resolve
from .ledger import LedgerRecord, fetch_shares_for, verify_chain
from .threshold import (
    CascadeStep,
    PartyShares,
    ThresholdParams,
    combine_cascade,
    combine_xor,
    compute_partial,
    coverage_missing,
    decode_label,
    secrecy_oracle,
)

SAMPLE_EHR = (
    b'{"resourceType":"Patient","id":"example","name":[{"family":"Chalmers",'
    b'"given":["Peter","James"]}],"gender":"male","birthDate":"1974-12-25",'
    b'"condition":[{"code":"I10","text":"Essential hypertension"}]}'
)


@dataclass(frozen=True)
class CollusionResult:
    verdict: str
    members: tuple[str, ...]
    party_indices: tuple[int, ...]
    has_cipher_key: bool
    missing: tuple[tuple[int, ...], ...]
    method: str


def _resolve_members(world: World, parties: Iterable[Actor | str]) -> list[Actor]:
    return [world.actors[p] if isinstance(p, str) else p for p in parties]


def _owner_truth(world: World, pseudo_id: bytes):
    owner = world.owner
    keys_blob = owner.wallet.secrets[f"pseudo/{pseudo_id.hex()}/keys"]
    keys = {decode_label(k): v for k, v in canonical_decode(keys_blob).items()}
    credential = next(c for c in owner.issued_credentials() if c.pseudo_id == pseudo_id)
    sk, _, _ = owner.ehr_secret(credential.ehr_id)
    return sk, keys, credential


def adversary_collude(
    world: World, parties: Iterable[Actor | str], pseudo_id: bytes | None = None
) -> CollusionResult:
    """Pool what a coalition legitimately holds and try to recover ``sk``.

    Under the toy profile the verdict comes from exhaustive enumeration of
    the keys the coalition lacks; under production it is label coverage
    followed by an actual reconstruction attempt.
    """
    members = _resolve_members(world, parties)
    records = world.ledger.authorizations()
    if pseudo_id is None:
        pseudo_id = records[-1].pseudo_id
    record = next(r for r in reversed(records) if r.pseudo_id == pseudo_id)
    sk, true_keys, owner_credential = _owner_truth(world, pseudo_id)
    cipher_key_truth = owner_credential.cipher_key
    params = cipher_key_truth.params
    names = tuple(sorted(m.name for m in members))

    def result(verdict, indices=(), has_ck=False, missing=(), method="knowledge"):
        return CollusionResult(verdict, names, tuple(sorted(indices)), has_ck,
                               tuple(missing), method)

    # members who hold sk outright
    for m in members:
        if isinstance(m, (DataOwner, HealthServiceProvider)):
            return result("sk_recovered")
        if isinstance(m, DataRequester) and any(s == sk for s, _ in m.recovered):
            return result("sk_recovered")

    cipher_key = None
    for m in members:
        if isinstance(m, DataRequester):
            for c in m.credentials():
                if c.pseudo_id == pseudo_id:
                    cipher_key = c.cipher_key
    shares: list[PartyShares] = []
    for m in members:
        if isinstance(m, (Notary, DataCustodian)):
            try:
                shares.append(fetch_shares_for(m.wallet, record))
            except NotARecipientError:
                pass
    indices = [s.party_index for s in shares]
    missing = coverage_missing(params, indices)

    if cipher_key_truth.profile.name == "toy":
        verdict = secrecy_oracle(
            params,
            indices,
            mode=cipher_key_truth.mode,
            instance=(
                sk[0],
                {b: k[0] for b, k in true_keys.items()},
                cipher_key_truth.nonce_r[0],
            ),
            knows_cipher_key=cipher_key is not None,
        )
        outcome = "sk_recovered" if verdict.verdict == "reconstructs" else "not_recovered"
        return result(outcome, indices, cipher_key is not None, missing, "enumeration")

    if cipher_key is None or missing:
        return result("not_recovered", indices, cipher_key is not None, missing, "coverage")
    if cipher_key.mode == "xor":
        recovered = combine_xor(
            cipher_key,
            [compute_partial(s, cipher_key.nonce_r, cipher_key.n_blocks) for s in shares],
        )
    else:
        recovered = combine_cascade(cipher_key, CascadeStep(shares))
    outcome = "sk_recovered" if recovered == sk else "not_recovered"
    return result(outcome, indices, True, missing, "coverage")


def collusion_trial(
    seed: int,
    parties: Iterable[str],
    profile: CipherProfile = PRODUCTION,
    notaries: int = 2,
    params: ThresholdParams = ThresholdParams(3, 2),
    mode: str = "xor",
) -> CollusionResult:
    """Fresh world, store + delegate, then collude. Used for seeded trial batches."""
    world = build_world(notaries, 1, seed=seed, profile=profile)
    flow1_store_ehr(world, SAMPLE_EHR)
    flow2_delegate(world, params, expiry=1000, mode=mode)
    return adversary_collude(world, list(parties))


# ---------------------------------------------------------------------------
# Tamper scenarios (one per applicable STRIDE row, plus expiry/revocation)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TamperOutcome:
    scenario: str
    expected: str
    observed: str
    partial_released: bool = False

    @property
    def passed(self) -> bool:
        return self.expected == self.observed


def _fixture(seed: int, profile: CipherProfile = PRODUCTION, requesters: int = 2):
    world = build_world(2, requesters, seed=seed, profile=profile)
    flow1_store_ehr(world, SAMPLE_EHR)
    flow2_delegate(world, ThresholdParams(3, 2), expiry=100)
    return world


def _released_since(world: World, start: int) -> bool:
    return any(
        e["type"] == "message" and e["kind"] in ("partial_contribution", "cascade_labels")
        for e in world.transcript.since(start)
    )


def _denial(exc: AccessDenied) -> str:
    return exc.reason


def _spoofed_sender(world: World) -> str:
    dr = world.requesters[0]
    notary = world.notaries[0]
    attacker, _ = create_identity(world.rng)
    doc = resolve(notary.did, world.ledger)
    payload = pk_encrypt(b"", doc.encryption_public_key, world.rng)
    forged = SecureMessage(
        dr.did, notary.did, "challenge_request", payload,
        sign(SecureMessage.signed_bytes(dr.did, notary.did, "challenge_request", payload),
             attacker.signing_keypair),
    )
    try:
        world.network.deliver(forged)
    except TransportError:
        return "transport-error"
    return "accepted"


def _tampered_vc(world: World) -> str:
    dr = world.requesters[0]
    notary = world.notaries[0]
    credential = dr.credential()
    _, reply = dr.request(notary.did, "challenge_request", {})
    p = present(credential, dr.wallet, NOTARY_DISCLOSURE, reply["challenge"])
    claims = dict(p.claims)
    ehr_id = bytearray(claims["ehr_id"])
    ehr_id[0] ^= 0x01
    claims["ehr_id"] = bytes(ehr_id)
    forged = replace(p, claims=claims)
    kind, reply = dr.request(notary.did, "access_request", {
        "presentation": forged.to_json().encode(), "n_blocks": (1).to_bytes(8, "big"),
    })
    return reply["reason"].decode() if kind == "access_denied" else "accepted"


def _tampered_blob(world: World) -> str:
    store = world.custodian.store
    ehr_id = world.owner.ehr_secret()[1]
    blob = store._blobs[ehr_id]
    flipped = bytearray(blob.ciphertext)
    flipped[len(flipped) // 2] ^= 0x01
    store._blobs[ehr_id] = replace(blob, ciphertext=bytes(flipped))
    try:
        world.requesters[0].access()
    except AuthenticityError:
        return "authenticity-error"
    return "accepted"


def _tampered_ledger(world: World) -> str:
    records = world.ledger._records
    target = next(i for i, r in enumerate(records) if r.kind == "authorization")
    payload = bytearray(records[target].payload)
    payload[-1] ^= 0x01
    records[target] = LedgerRecord(
        records[target].seq, records[target].kind, bytes(payload),
        records[target].prev_hash, records[target].record_hash,
    )
    return "chain-broken" if not verify_chain(world.ledger) else "accepted"


def _replayed_presentation(world: World) -> str:
    dr = world.requesters[0]
    notary = world.notaries[0]
    credential = dr.credential()
    _, reply = dr.request(notary.did, "challenge_request", {})
    captured = present(credential, dr.wallet, NOTARY_DISCLOSURE, reply["challenge"])
    dr.request(notary.did, "challenge_request", {})  # verifier issues a new challenge
    kind, reply = dr.request(notary.did, "access_request", {
        "presentation": captured.to_json().encode(), "n_blocks": (1).to_bytes(8, "big"),
    })
    return reply["reason"].decode() if kind == "access_denied" else "accepted"


def _stolen_vc(world: World) -> str:
    owner_dr, thief = world.requesters[0], world.requesters[1]
    credential = owner_dr.credential()
    try:
        present(credential, thief.wallet, NOTARY_DISCLOSURE, b"x")
    except BindingError:
        pass
    else:
        return "accepted"
    # hand-assembled presentation carrying the thief's own binding signature
    notary = world.notaries[0]
    _, reply = thief.request(notary.did, "challenge_request", {})
    honest = present(credential, owner_dr.wallet, NOTARY_DISCLOSURE, reply["challenge"])
    forged = replace(
        honest,
        holder_did=thief.did,
        holder_binding=sign(_binding_message(reply["challenge"], credential.vc_id),
                            thief.wallet.signing_keypair),
    )
    kind, reply = thief.request(notary.did, "access_request", {
        "presentation": forged.to_json().encode(), "n_blocks": (1).to_bytes(8, "big"),
    })
    return reply["reason"].decode() if kind == "access_denied" else "accepted"


def _expired_vc(world: World) -> str:
    world.tick(100)
    try:
        world.requesters[0].access()
    except AccessDenied as exc:
        return _denial(exc)
    return "accepted"


def _revoked_vc(world: World) -> str:
    dr = world.requesters[0]
    world.owner.revoke(dr.credential().vc_id)
    try:
        dr.access()
    except AccessDenied as exc:
        return _denial(exc)
    return "accepted"


def _eavesdropper(world: World) -> str:
    world.requesters[0].access()
    sk = world.owner.ehr_secret()[0]
    wire = b"".join(world.network.wire_log)
    if sk in wire or SAMPLE_EHR in wire:
        return "leaked"
    return "no-leak"


def _repudiation(world: World) -> str:
    world.requesters[0].access()
    events = {e.event for e in world.ledger.access_events()}
    needed = {"notary_verified", "dc_granted_link", "download_completed"}
    return "logged" if needed <= events else "unlogged"


TAMPER_SCENARIOS = {
    # id: (STRIDE row, expected outcome, runner)
    "spoofed_sender": ("Spoofing", "transport-error", _spoofed_sender),
    "tampered_vc": ("Tampering", "commitment-mismatch", _tampered_vc),
    "tampered_blob": ("Tampering", "authenticity-error", _tampered_blob),
    "tampered_ledger": ("Tampering", "chain-broken", _tampered_ledger),
    "repudiation": ("Repudiation", "logged", _repudiation),
    "eavesdropper": ("Information disclosure", "no-leak", _eavesdropper),
    "replayed_presentation": ("Elevation of privilege", "bad-binding", _replayed_presentation),
    "stolen_vc": ("Elevation of privilege", "bad-binding", _stolen_vc),
    "expired_vc": ("Elevation of privilege", "expired", _expired_vc),
    "revoked_vc": ("Elevation of privilege", "revoked", _revoked_vc),
}


def tamper_scenarios(scenario_id: str, seed: int = 0, world: World | None = None) -> TamperOutcome:
    """Run one tamper scenario on a fresh fixture (or ``world``) and report the rejection."""
    try:
        _, expected, runner = TAMPER_SCENARIOS[scenario_id]
    except KeyError:
        raise ValueError(f"unknown tamper scenario {scenario_id!r}") from None
    world = world or _fixture(seed)
    start = len(world.transcript.entries)
    try:
        observed = runner(world)
    except ProtocolError as exc:
        observed = f"error:{type(exc).__name__}"
    return TamperOutcome(scenario_id, expected, observed, _released_since(world, start)
                         if expected in ("expired", "revoked", "bad-binding",
                                         "commitment-mismatch") else False)
