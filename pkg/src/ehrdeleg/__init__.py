"""Pre-delegated, multi-party authorization for encrypted health records.

A data owner splits the key material protecting an encrypted EHR among
notaries and the data custodian under a (t, n) threshold scheme, and
delegates access to requesters through selectively disclosable verifiable
credentials. A hash-chained ledger carries DID registrations, per-delegation
authorization records under fresh pseudonyms, revocations and access events.
"""

from .actors import (
    DataCustodian,
    DataOwner,
    DataRequester,
    HealthServiceProvider,
    Notary,
    ScriptedAvailability,
    World,
    build_world,
    flow1_store_ehr,
    flow2_delegate,
    flow3_access,
)
from .adversary import adversary_collude, collusion_trial, tamper_scenarios
from .audit import AuditReport, audit, expected_matrix
from .credential import (
    DelegationClaims,
    DelegationCredential,
    Presentation,
    issue,
    present,
    revoke,
    verify_credential,
    verify_presentation,
)
from .crypto import PRODUCTION, TOY, generate_keypair, sym_decrypt, sym_encrypt
from .errors import AccessDenied, ProtocolError
from .identity import Did, DidDocument, Wallet, create_identity, resolve
from .ledger import Ledger, verify_chain
from .scenario import ReplayVerdict, load_config, replay, run_config
from .threshold import (
    CipherKey,
    ThresholdParams,
    combine_cascade,
    combine_xor,
    compute_partial,
    derive_cipher_key,
    generate_key_shares,
    secrecy_oracle,
)

__version__ = "0.1.0"

__all__ = [
    "AccessDenied",
    "AuditReport",
    "CipherKey",
    "DataCustodian",
    "DataOwner",
    "DataRequester",
    "DelegationClaims",
    "DelegationCredential",
    "Did",
    "DidDocument",
    "HealthServiceProvider",
    "Ledger",
    "Notary",
    "PRODUCTION",
    "Presentation",
    "ProtocolError",
    "ReplayVerdict",
    "ScriptedAvailability",
    "TOY",
    "ThresholdParams",
    "Wallet",
    "World",
    "adversary_collude",
    "audit",
    "build_world",
    "collusion_trial",
    "combine_cascade",
    "combine_xor",
    "compute_partial",
    "create_identity",
    "derive_cipher_key",
    "expected_matrix",
    "flow1_store_ehr",
    "flow2_delegate",
    "flow3_access",
    "generate_key_shares",
    "generate_keypair",
    "issue",
    "load_config",
    "present",
    "replay",
    "resolve",
    "revoke",
    "run_config",
    "secrecy_oracle",
    "sym_decrypt",
    "sym_encrypt",
    "tamper_scenarios",
    "verify_chain",
    "verify_credential",
    "verify_presentation",
]
