import json

import pytest

from ehrdeleg.actors import build_world, flow1_store_ehr, flow2_delegate
from ehrdeleg.adversary import SAMPLE_EHR
from ehrdeleg.audit import (
    COLUMNS,
    ITEMS,
    NO,
    PARTIAL,
    YES,
    audit,
    audit_from_observations,
    dump_observations,
    expected_matrix,
    extract_truth,
    key_knowledge,
    knows,
)
from ehrdeleg.scenario import load_config, run_config
from ehrdeleg.threshold import ThresholdParams


@pytest.fixture(scope="module")
def happy():
    result = run_config(load_config("happy_path_3_2"))
    assert result.ok
    return result.world


def test_expected_matrix_shape():
    matrix = expected_matrix()
    assert list(matrix) == [item for item, _ in ITEMS]
    assert all(list(row) == list(COLUMNS) for row in matrix.values())
    assert matrix["secret_key"]["DR"] == YES
    assert expected_matrix("pre_access")["secret_key"]["DR"] == NO
    with pytest.raises(ValueError):
        expected_matrix("later")


def test_knows_requires_co_occurrence():
    assert knows([b"xxAByyCD"], [(b"AB", b"CD")])
    assert not knows([b"AB", b"CD"], [(b"AB", b"CD")])
    assert knows([b"AB", b"zCD"], [(b"AB", b"CD"), (b"CD",)])


def test_key_knowledge_levels():
    keys = [b"k1k1", b"k2k2"]
    assert key_knowledge([b"..k1k1..k2k2"], keys) == YES
    assert key_knowledge([b"..k1k1.."], keys) == PARTIAL
    assert key_knowledge([b"...."], keys) == NO


def test_happy_path_matrix(happy):
    report = audit(happy)
    assert report.phase == "post_access"
    assert report.conclusive
    assert report.failures() == []
    assert report.all_pass


def test_secret_key_row(happy):
    row = audit(happy).observed["secret_key"]
    assert row == {"DO": YES, "HSP": YES, "DR": YES, "Notary": NO, "DC": NO, "Outsider": NO}


def test_storage_location_only_custodian(happy):
    row = audit(happy).observed["storage_location"]
    assert [c for c, v in row.items() if v == YES] == ["DC"]


def test_share_keys_partial_for_share_holders(happy):
    row = audit(happy).observed["share_keys"]
    assert row["Notary"] == PARTIAL and row["DC"] == PARTIAL and row["DR"] == NO


def test_pre_access_requester_lacks_secret_key():
    world = build_world(2, 2, seed=3)
    flow1_store_ehr(world, SAMPLE_EHR)
    flow2_delegate(world, ThresholdParams(3, 2), 100)
    report = audit(world)
    assert report.phase == "pre_access"
    assert report.observed["secret_key"]["DR"] == NO
    assert report.cells["secret_key"]["DR"]


def test_fresh_world_knows_only_registered_dids():
    world = build_world(2, 2, seed=4)
    observed = audit(world, "pre_access").observed
    assert all(v == YES for v in observed["do_did"].values())
    assert observed["secret_key"] == dict.fromkeys(COLUMNS, NO)
    assert observed["storage_location"] == dict.fromkeys(COLUMNS, NO)


def test_injected_leak_flips_exactly_one_cell():
    world = run_config(load_config("happy_path_3_2")).world
    before = audit(world).observed
    world.custodian.store._inject("leak", extract_truth(world).sk)
    after = audit(world)
    changed = [(i, c) for i in before for c in COLUMNS if before[i][c] != after.observed[i][c]]
    assert changed == [("secret_key", "DC")]
    assert after.failures() == [("secret_key", "DC")]


def test_dump_and_reload(happy):
    data = json.loads(json.dumps(dump_observations(happy)))
    again = audit_from_observations(data)
    assert again.to_dict() == audit(happy).to_dict()


def test_render_and_json(happy):
    report = audit(happy)
    text = report.render()
    assert "all_pass=True" in text and "✓*" in text
    assert json.loads(report.to_json())["all_pass"] is True


def test_toy_world_inconclusive():
    world = run_config(load_config("happy_path_3_2", profile="toy")).world
    assert not audit(world).conclusive


def test_no_private_keys_in_ledger_or_report(happy):
    secrets = [a.wallet.signing_keypair.private_key for a in happy.actors.values()]
    secrets += [a.wallet.encryption_keypair.private_key for a in happy.actors.values()]
    secrets.append(extract_truth(happy).sk)
    ledger_bytes = b"".join(r.payload for r in happy.ledger.records())
    report = audit(happy).to_json().encode()
    for s in secrets:
        assert s not in ledger_bytes
        assert s.hex().encode() not in report
