import random

import pytest

from ehrdeleg.actors import build_world, flow1_store_ehr, flow2_delegate
from ehrdeleg.adversary import SAMPLE_EHR
from ehrdeleg.crypto import PRODUCTION
from ehrdeleg.identity import create_identity
from ehrdeleg.ledger import Ledger
from ehrdeleg.threshold import ThresholdParams


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def ledger():
    return Ledger()


@pytest.fixture
def registered(rng, ledger):
    """Five registered wallets: owner, dr, dr2, notary, dc."""
    wallets = {}
    for name in ("owner", "dr", "dr2", "notary", "dc"):
        wallet, _ = create_identity(rng)
        ledger.register_did(wallet)
        wallets[name] = wallet
    return wallets


def delegated_world(seed=0, profile=PRODUCTION, notaries=2, requesters=2,
                    params=ThresholdParams(3, 2), mode="xor", expiry=100, **kw):
    world = build_world(notaries, requesters, seed=seed, profile=profile, **kw)
    flow1_store_ehr(world, SAMPLE_EHR)
    delegation = flow2_delegate(world, params, expiry, mode)
    return world, delegation


@pytest.fixture
def world():
    return delegated_world()[0]


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS, line

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for number in sorted(RESULTS):
            terminalreporter.write_line(line(number))
