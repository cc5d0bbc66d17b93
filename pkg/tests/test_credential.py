import hashlib
import json
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrdeleg.actors import DC_DISCLOSURE, NOTARY_DISCLOSURE
from ehrdeleg.credential import (
    CLAIM_NAMES,
    DelegationClaims,
    DelegationCredential,
    Presentation,
    _binding_message,
    check_holder_binding,
    issue,
    present,
    revoke,
    verify_credential,
    verify_presentation,
)
from ehrdeleg.crypto import generate_keypair, sha256, sign
from ehrdeleg.errors import (
    BindingError,
    FormatError,
    ParameterError,
    UnresolvedReferenceError,
)
from ehrdeleg.identity import create_identity
from ehrdeleg.ledger import AuthorizationRecord, Ledger
from ehrdeleg.threshold import ThresholdParams, derive_cipher_key, generate_key_shares


@pytest.fixture
def setup(rng, ledger, registered):
    shares = generate_key_shares(ThresholdParams(2, 2), rng)
    ck = derive_cipher_key(rng.randbytes(32), shares, rng)
    eph = generate_keypair("signing", rng)
    claims = DelegationClaims(
        subject_dr_did=registered["dr"].did,
        notary_dids=(registered["notary"].did,),
        dc_did=registered["dc"].did,
        pseudo_id=sha256(eph.public_key),
        ehr_id=b"e" * 16,
        cipher_key=ck,
        expiry=50,
        authorized_dr_dids=(registered["dr"].did, registered["dr2"].did),
    )
    cred = issue(registered["owner"], claims, ledger, now=0, rng=rng)
    return cred, eph, shares


def test_issue_and_verify(setup, ledger):
    cred, _, _ = setup
    assert verify_credential(cred, ledger, now=0)
    assert set(cred.claims) == set(CLAIM_NAMES)
    assert cred.expiry == 50


def test_commitments_are_salted_hashes(setup):
    cred, _, _ = setup
    for name in CLAIM_NAMES:
        oracle = hashlib.sha256(cred.salts[name] + cred.claims[name]).digest()
        assert cred.commitments[name] == oracle


def test_json_and_raw_roundtrip(setup):
    cred, _, _ = setup
    assert DelegationCredential.from_json(cred.to_json()) == cred
    assert DelegationCredential.decode(cred.encode()) == cred


def test_json_duplicate_keys_rejected(setup):
    cred, _, _ = setup
    text = cred.to_json()
    dup = text[:-1] + ',"issuer_signature":"AA=="}'
    with pytest.raises(FormatError):
        DelegationCredential.from_json(dup)


def test_issue_missing_claim(registered, ledger, setup):
    cred, _, _ = setup
    claims = dict(cred.claims)
    del claims["dc_did"]
    with pytest.raises(ParameterError):
        issue(registered["owner"], claims, ledger, now=0)


def test_issue_past_expiry(registered, ledger, setup):
    cred, _, _ = setup
    with pytest.raises(ParameterError):
        issue(registered["owner"], dict(cred.claims), ledger, now=50)


def test_issue_unresolved_did(registered, ledger, setup, rng):
    cred, _, _ = setup
    stranger, _ = create_identity(rng)
    claims = dict(cred.claims)
    claims["subject_dr_did"] = bytes(stranger.did)
    with pytest.raises(UnresolvedReferenceError):
        issue(registered["owner"], claims, ledger, now=0)


@pytest.mark.parametrize("name", CLAIM_NAMES)
def test_any_claim_change_detected(setup, ledger, name):
    cred, _, _ = setup
    claims = dict(cred.claims)
    value = bytearray(claims[name])
    value[0] ^= 0x01
    claims[name] = bytes(value)
    verdict = verify_credential(replace(cred, claims=claims), ledger, 0)
    assert verdict.reason == "commitment-mismatch"


def test_bad_signature(setup, ledger, registered):
    cred, _, _ = setup
    sig = bytearray(cred.issuer_signature)
    sig[3] ^= 0x01
    assert verify_credential(replace(cred, issuer_signature=bytes(sig)), ledger, 0).reason == "bad-signature"


def test_expiry_boundary(setup, ledger):
    cred, _, _ = setup
    assert verify_credential(cred, ledger, 49)
    assert verify_credential(cred, ledger, 50).reason == "expired"


def _post_record(ledger, eph, cred, registered, shares, rng):
    docs = [registered["notary"].document(), registered["dc"].document()]
    ledger.post_authorization(AuthorizationRecord.create(
        eph, cred.ehr_id, [(docs[0], shares.shares_of(1)), (docs[1], shares.shares_of(2))],
        "xor", [cred.vc_id], rng,
    ))


def test_revocation(setup, ledger, registered, rng):
    cred, eph, shares = setup
    _post_record(ledger, eph, cred, registered, shares, rng)
    revoke(eph, cred.vc_id, ledger)
    assert verify_credential(cred, ledger, 0).reason == "revoked"
    p = present(cred, registered["dr"], NOTARY_DISCLOSURE, b"c")
    assert verify_presentation(p, b"c", ledger, 0).reason == "revoked"


def test_presentation_selective_disclosure(setup, ledger, registered):
    cred, _, _ = setup
    p = present(cred, registered["dr"], DC_DISCLOSURE, b"chal")
    assert set(p.claims) == set(DC_DISCLOSURE)
    assert "masked_key" not in p.claims and "authorized_dr_dids" not in p.claims
    assert verify_presentation(p, b"chal", ledger, 0)
    again = Presentation.from_json(p.to_json())
    assert again == p and verify_presentation(again, b"chal", ledger, 0)


def test_presentation_replay_under_new_challenge(setup, ledger, registered):
    cred, _, _ = setup
    p = present(cred, registered["dr"], NOTARY_DISCLOSURE, b"one")
    assert verify_presentation(p, b"two", ledger, 0).reason == "bad-binding"


def test_non_subject_cannot_present(setup, registered):
    cred, _, _ = setup
    with pytest.raises(BindingError):
        present(cred, registered["dr2"], NOTARY_DISCLOSURE, b"c")


def test_relabelled_holder_rejected(setup, ledger, registered):
    cred, _, _ = setup
    p = present(cred, registered["dr"], NOTARY_DISCLOSURE, b"c")
    thief = registered["dr2"]
    forged = replace(p, holder_did=thief.did,
                     holder_binding=sign(_binding_message(b"c", cred.vc_id), thief.signing_keypair))
    assert check_holder_binding(forged, b"c", ledger)
    assert verify_presentation(forged, b"c", ledger, 0).reason == "bad-binding"


def test_empty_disclosure(setup, ledger, registered):
    cred, _, _ = setup
    p = present(cred, registered["dr"], (), b"c")
    assert check_holder_binding(p, b"c", ledger)
    assert verify_presentation(p, b"c", ledger, 0).reason == "expiry-not-disclosed"


def test_subject_must_be_disclosed(setup, ledger, registered):
    cred, _, _ = setup
    p = present(cred, registered["dr"], {"expiry", "pseudo_id"}, b"c")
    assert verify_presentation(p, b"c", ledger, 0).reason == "bad-binding"


def test_disclosed_claim_tamper(setup, ledger, registered):
    cred, _, _ = setup
    p = present(cred, registered["dr"], NOTARY_DISCLOSURE, b"c")
    claims = dict(p.claims)
    claims["expiry"] = (10**6).to_bytes(8, "big")
    assert verify_presentation(replace(p, claims=claims), b"c", ledger, 0).reason == "commitment-mismatch"


def test_unknown_claim_disclosure(setup, registered):
    cred, _, _ = setup
    with pytest.raises(ParameterError):
        present(cred, registered["dr"], {"favourite_colour"}, b"c")


def test_vc_id_in_signed_metadata(setup):
    cred, _, _ = setup
    assert cred.metadata["vc_id"] == cred.vc_id
    assert b"vc_id" in cred.signed_bytes()


@settings(max_examples=25, deadline=None)
@given(st.sets(st.sampled_from(CLAIM_NAMES)), st.binary(min_size=1, max_size=32))
def test_disclosure_subsets_property(subset, challenge):
    rng = random.Random(7)
    ledger = Ledger()
    owner, _ = create_identity(rng)
    dr, _ = create_identity(rng)
    dc, _ = create_identity(rng)
    for w in (owner, dr, dc):
        ledger.register_did(w)
    shares = generate_key_shares(ThresholdParams(1, 1), rng)
    claims = DelegationClaims(dr.did, (), dc.did, b"p" * 32, b"e" * 16,
                              derive_cipher_key(bytes(32), shares, rng), 9, (dr.did,))
    cred = issue(owner, claims, ledger, 0, rng)
    p = present(cred, dr, subset, challenge)
    verdict = verify_presentation(p, challenge, ledger, 0)
    if "expiry" not in subset:
        assert verdict.reason == "expiry-not-disclosed"
    elif "subject_dr_did" not in subset:
        assert verdict.reason == "bad-binding"
    else:
        assert verdict
    assert json.loads(p.to_json())["claims"].keys() == subset
