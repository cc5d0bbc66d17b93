import hashlib
import json
import struct
import threading

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ehrdeleg.crypto import generate_keypair, sha256, sign
from ehrdeleg.errors import AuthorizationError, NotARecipientError, ValidationError
from ehrdeleg.identity import create_identity
from ehrdeleg.ledger import (
    GENESIS_HASH,
    AccessEvent,
    AuthorizationRecord,
    Ledger,
    LedgerRecord,
    RevocationEntry,
    actor_tag,
    credential_tag,
    fetch_shares_for,
    recipient_tag,
    verify_chain,
)
from ehrdeleg.threshold import ThresholdParams, generate_key_shares


def _canon(fields):
    out = b""
    for name in sorted(fields):
        value = fields[name]
        out += struct.pack(">I", len(name)) + name.encode()
        out += struct.pack(">I", len(value)) + value
    return out


def oracle_record_hash(seq, kind, payload, prev):
    return hashlib.sha256(_canon({
        "seq": seq.to_bytes(8, "big"), "kind": kind.encode(),
        "payload": payload, "prev_hash": prev,
    })).digest()


def _event(i=0):
    return AccessEvent(sha256(b"p%d" % i), b"e" * 16, sha256(b"a"), "notary_verified", i)


def test_record_hash_matches_oracle(ledger):
    for i in range(5):
        ledger.log_event(_event(i))
    prev = GENESIS_HASH
    for r in ledger.records():
        assert r.prev_hash == prev
        assert r.record_hash == oracle_record_hash(r.seq, r.kind, r.payload, prev)
        prev = r.record_hash
    assert verify_chain(ledger)


def test_genesis_is_zero():
    assert Ledger().head_hash == bytes(32)


def test_tamper_breaks_chain(ledger):
    for i in range(3):
        ledger.log_event(_event(i))
    r = ledger._records[1]
    ledger._records[1] = LedgerRecord(r.seq, r.kind, r.payload + b"x", r.prev_hash, r.record_hash)
    assert not verify_chain(ledger)


def test_unknown_kind_rejected(ledger):
    with pytest.raises(ValidationError):
        ledger.append("memo", b"")


def test_did_registration_rules(rng, ledger):
    wallet, _ = create_identity(rng)
    ledger.register_did(wallet)
    with pytest.raises(ValidationError):
        ledger.register_did(wallet)


def test_export_import_bit_exact(registered, ledger):
    for i in range(3):
        ledger.log_event(_event(i))
    text = ledger.export_jsonl()
    line = json.loads(text.splitlines()[0])
    assert set(line) == {"seq", "kind", "payload", "prev_hash", "record_hash"}
    again = Ledger.import_jsonl(text)
    assert again.export_jsonl() == text
    assert again.lookup_did(registered["dr"].did) is not None


def test_import_rejects_broken_chain(ledger):
    for i in range(3):
        ledger.log_event(_event(i))
    lines = ledger.export_jsonl().splitlines()
    with pytest.raises(ValidationError):
        Ledger.import_jsonl("\n".join(lines[1:]))
    rec = json.loads(lines[1])
    rec["record_hash"] = "00" * 32
    lines[1] = json.dumps(rec)
    with pytest.raises(ValidationError):
        Ledger.import_jsonl("\n".join(lines))


def _record(rng, registered, vc_ids=(b"v" * 32,)):
    eph = generate_keypair("signing", rng)
    shares = generate_key_shares(ThresholdParams(2, 2), rng)
    docs = [registered["notary"].document(), registered["dc"].document()]
    record = AuthorizationRecord.create(
        eph, b"e" * 16, [(docs[0], shares.shares_of(1)), (docs[1], shares.shares_of(2))],
        "xor", vc_ids, rng,
    )
    return eph, shares, record


def test_authorization_blinded_shares(rng, registered, ledger):
    eph, shares, record = _record(rng, registered)
    ledger.post_authorization(record)
    got = ledger.find_authorization(record.pseudo_id, b"e" * 16)
    assert fetch_shares_for(registered["notary"], got) == shares.shares_of(1)
    assert fetch_shares_for(registered["dc"], got) == shares.shares_of(2)
    with pytest.raises(NotARecipientError):
        fetch_shares_for(registered["dr"], got)
    assert recipient_tag(registered["dc"].did, record.pseudo_id) in got.blinded_shares
    assert record.pseudo_id == sha256(eph.public_key)


def test_authorization_signature_checked(rng, registered, ledger):
    _, _, record = _record(rng, registered)
    payload = bytearray(record.to_payload())
    payload[-1] ^= 0x01
    with pytest.raises(ValidationError):
        ledger.append("authorization", bytes(payload))


def test_revocation_requires_pseudo_key(rng, registered, ledger):
    vc_id = b"v" * 32
    eph, _, record = _record(rng, registered, [vc_id])
    ledger.post_authorization(record)
    stranger = generate_keypair("signing", rng)
    forged = RevocationEntry(vc_id, record.pseudo_id,
                             sign(RevocationEntry.message(vc_id, record.pseudo_id), stranger))
    with pytest.raises(AuthorizationError):
        ledger.append("revocation", forged.to_payload())
    good = RevocationEntry(vc_id, record.pseudo_id,
                           sign(RevocationEntry.message(vc_id, record.pseudo_id), eph))
    seq = ledger.append("revocation", good.to_payload())
    assert ledger.is_revoked(vc_id)
    assert ledger.append("revocation", good.to_payload()) == seq
    other = b"w" * 32
    unknown = RevocationEntry(other, record.pseudo_id,
                              sign(RevocationEntry.message(other, record.pseudo_id), eph))
    with pytest.raises(AuthorizationError):
        ledger.append("revocation", unknown.to_payload())


def test_tags_are_hashes(registered):
    did = registered["dc"].did
    pid = b"p" * 32
    assert recipient_tag(did, pid) == hashlib.sha256(bytes(did) + pid).digest()
    assert actor_tag(did, pid) == recipient_tag(did, pid)
    assert credential_tag(b"v") == hashlib.sha256(b"vc:v").digest()


def test_access_events_filter(ledger):
    ledger.log_event(_event(0))
    ledger.log_event(_event(1))
    assert len(ledger.access_events()) == 2
    assert [e.timestamp for e in ledger.access_events(sha256(b"p1"))] == [1]


def test_concurrent_appends_linearizable(ledger):
    def worker(k):
        for i in range(25):
            ledger.log_event(_event(k * 100 + i))

    threads = [threading.Thread(target=worker, args=(k,)) for k in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert len(ledger) == 200
    assert [r.seq for r in ledger.records()] == list(range(200))
    assert verify_chain(ledger)


def test_listener_sees_every_append(ledger):
    seen = []
    ledger.subscribe(seen.append)
    ledger.log_event(_event())
    assert [r.seq for r in seen] == [0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 2**16), max_size=12))
def test_append_only_property(stamps):
    ledger = Ledger()
    snapshots = []
    for s in stamps:
        ledger.log_event(_event(s))
        snapshots.append(ledger.records())
    final = ledger.records()
    for snap in snapshots:
        assert final[: len(snap)] == snap
    assert verify_chain(ledger)
