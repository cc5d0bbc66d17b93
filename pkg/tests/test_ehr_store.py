import json

import pytest

from ehrdeleg.crypto import sha256
from ehrdeleg.ehr_store import DEFAULT_LINK_TTL, AccessLink, CustodianStore
from ehrdeleg.errors import ExpiredError, NotFoundError, ParameterError


@pytest.fixture
def store(rng, ledger):
    return CustodianStore(rng, ledger)


def test_upload_assigns_fresh_ids(store, registered):
    ids = {store.upload(b"blob%d" % i, registered["owner"].did) for i in range(50)}
    assert len(ids) == 50
    assert all(len(i) == 16 for i in ids)


def test_empty_upload_rejected(store, registered):
    with pytest.raises(ParameterError):
        store.upload(b"", registered["owner"].did)


def test_link_window(store, registered, ledger):
    ehr_id = store.upload(b"ciphertext", registered["owner"].did)
    link = store.grant_link(ehr_id, registered["dr"].did, ttl=10, now=5, pseudo_id=b"p" * 32)
    assert link.expires_at == 15
    assert link.issued_to_tag == sha256(bytes(registered["dr"].did) + link.token)
    assert store.download(link, 14) == b"ciphertext"
    with pytest.raises(ExpiredError):
        store.download(link, 15)
    events = ledger.access_events(b"p" * 32)
    assert [e.event for e in events] == ["download_completed"]


def test_default_ttl(store, registered):
    ehr_id = store.upload(b"c", registered["owner"].did)
    assert store.grant_link(ehr_id, registered["dr"].did).expires_at == DEFAULT_LINK_TTL


def test_unknown_ehr_and_token(store, registered):
    with pytest.raises(NotFoundError):
        store.grant_link(b"x" * 16, registered["dr"].did)
    with pytest.raises(NotFoundError):
        store.download(AccessLink(b"t" * 32, b"x" * 16, 10, b""), 0)


def test_nonpositive_ttl(store, registered):
    ehr_id = store.upload(b"c", registered["owner"].did)
    with pytest.raises(ParameterError):
        store.grant_link(ehr_id, registered["dr"].did, ttl=0)


def test_export_roundtrip(store, registered, rng):
    ehr_id = store.upload(b"cipher", registered["owner"].did)
    link = store.grant_link(ehr_id, registered["dr"].did, 10, 0)
    data = json.loads(store.export_json())
    again = CustodianStore.from_dict(data, rng)
    assert again.download(link, 1) == b"cipher"
    assert again.storage_locations() == store.storage_locations()


def test_storage_location_is_internal(store, registered):
    ehr_id = store.upload(b"cipher", registered["owner"].did)
    link = store.grant_link(ehr_id, registered["dr"].did, 10, 0)
    (location,) = store.storage_locations()
    assert location not in link.token + link.ehr_id + link.issued_to_tag
    assert location in store.observable_state()


def test_inject_hook_visible_in_state(store):
    store._inject("leak", b"\x99" * 32)
    assert b"\x99" * 32 in store.observable_state()
