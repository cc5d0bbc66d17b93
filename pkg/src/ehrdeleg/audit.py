"""Who-knows-what audit.

Each actor's observable state is a list of byte artifacts: its own wallet
and local state, every message body it sent or received, and every ledger
payload. A knowledge item is *known* when some artifact contains all the
byte strings of one of the item's witness groups; an association such as
"DO's DID-pseudoID link" therefore needs both values inside the same
artifact, not merely somewhere in the actor's view. The outsider sees
ledger payloads only.

Substring witnesses are only meaningful when secrets are wide: under the
toy profile a one-byte key occurs in nearly every artifact by chance, so
reports from toy worlds are marked ``conclusive = False``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from ._codec import b64d, b64e, canonical_decode
from .credential import DelegationCredential

COLUMNS = ("DO", "HSP", "DR", "Notary", "DC", "Outsider")

YES, NO, PARTIAL = "yes", "no", "partial"
SYMBOLS = {YES: "✓", NO: "✗", PARTIAL: "✓*"}

ITEMS = (
    ("secret_key", "Secret key to encrypt EHR"),
    ("do_did", "DO DID"),
    ("do_pseudo_id", "DO pseudoID"),
    ("did_pseudo_link", "DO's DID-pseudoID link"),
    ("cipher_sk", "cipherSK"),
    ("ehr_id_keys", "ehr-id, encrypted keys"),
    ("who_is_notary", "Who is Notary"),
    ("who_is_dc", "Who is DC"),
    ("authorisation_list", "Who are on DO's authorisation list"),
    ("storage_location", "EHR storage location/link"),
    ("share_keys", "DO's keys to generate cipherSK"),
)

_Y, _N, _P = YES, NO, PARTIAL
# rows in ITEMS order, columns in COLUMNS order
_TABLE = {
    "secret_key":         (_Y, _Y, _N, _N, _N, _N),
    "do_did":             (_Y, _Y, _Y, _Y, _Y, _Y),
    "do_pseudo_id":       (_Y, _Y, _Y, _Y, _Y, _Y),
    "did_pseudo_link":    (_Y, _N, _Y, _Y, _Y, _N),
    "cipher_sk":          (_Y, _N, _Y, _N, _N, _N),
    "ehr_id_keys":        (_Y, _Y, _Y, _Y, _Y, _Y),
    "who_is_notary":      (_Y, _N, _Y, _Y, _Y, _N),
    "who_is_dc":          (_Y, _Y, _Y, _N, _Y, _N),
    "authorisation_list": (_Y, _N, _Y, _Y, _N, _N),
    "storage_location":   (_N, _N, _N, _N, _Y, _N),
    "share_keys":         (_Y, _N, _N, _P, _P, _N),
}


def expected_matrix(phase: str = "post_access") -> dict[str, dict[str, str]]:
    """The expected matrix; the requester learns ``sk`` only by completing an access."""
    matrix = {item: dict(zip(COLUMNS, row)) for item, row in _TABLE.items()}
    if phase == "post_access":
        matrix["secret_key"]["DR"] = YES
    elif phase != "pre_access":
        raise ValueError(f"unknown phase {phase!r}")
    return matrix


@dataclass
class Truth:
    """The concrete byte values behind each knowledge item for one delegation."""

    do_did: bytes
    sk: bytes = b""
    pseudo_id: bytes = b""
    masked_key: bytes = b""
    ehr_id: bytes = b""
    notary_did: bytes = b""
    dc_did: bytes = b""
    authorized_dr_dids: tuple[bytes, ...] = ()
    storage_locations: tuple[bytes, ...] = ()
    share_keys: tuple[bytes, ...] = ()

    def to_dict(self) -> dict:
        return {
            k: ([b64e(x) for x in v] if isinstance(v, tuple) else b64e(v))
            for k, v in self.__dict__.items()
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Truth":
        return cls(**{
            k: (tuple(b64d(x) for x in v) if isinstance(v, list) else b64d(v))
            for k, v in data.items()
        })

    def witnesses(self) -> dict[str, list[tuple[bytes, ...]]]:
        def group(*parts):
            return [parts] if all(parts) else []

        return {
            "secret_key": group(self.sk),
            "do_did": group(self.do_did),
            "do_pseudo_id": group(self.pseudo_id),
            "did_pseudo_link": group(self.do_did, self.pseudo_id),
            "cipher_sk": group(self.masked_key),
            "ehr_id_keys": group(self.ehr_id),
            "who_is_notary": group(self.notary_did, self.pseudo_id),
            "who_is_dc": group(self.dc_did, self.ehr_id),
            "authorisation_list": group(self.pseudo_id, *self.authorized_dr_dids),
            "storage_location": [(loc,) for loc in self.storage_locations if loc],
        }


def knows(artifacts: Sequence[bytes], groups: Iterable[tuple[bytes, ...]]) -> bool:
    return any(
        all(part in artifact for part in group)
        for group in groups
        for artifact in artifacts
    )


def key_knowledge(artifacts: Sequence[bytes], keys: Sequence[bytes]) -> str:
    if not keys:
        return NO
    held = sum(1 for k in keys if any(k in a for a in artifacts))
    if held == len(keys):
        return YES
    return PARTIAL if held else NO


@dataclass
class AuditReport:
    phase: str
    observed: dict[str, dict[str, str]]
    expected: dict[str, dict[str, str]]
    transcript_digest: str
    ledger_head: str
    column_actors: dict[str, str] = field(default_factory=dict)
    conclusive: bool = True

    @property
    def cells(self) -> dict[str, dict[str, bool]]:
        return {
            item: {c: self.observed[item][c] == self.expected[item][c] for c in COLUMNS}
            for item, _ in ITEMS
        }

    @property
    def all_pass(self) -> bool:
        return all(all(row.values()) for row in self.cells.values())

    def failures(self) -> list[tuple[str, str]]:
        return [(item, c) for item, row in self.cells.items() for c, ok in row.items() if not ok]

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "all_pass": self.all_pass,
            "conclusive": self.conclusive,
            "transcript_digest": self.transcript_digest,
            "ledger_head": self.ledger_head,
            "columns": list(COLUMNS),
            "column_actors": self.column_actors,
            "rows": [
                {
                    "item": item,
                    "label": label,
                    "observed": self.observed[item],
                    "expected": self.expected[item],
                    "pass": self.cells[item],
                }
                for item, label in ITEMS
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def render(self) -> str:
        width = max(len(label) for _, label in ITEMS)
        lines = [f"{'':{width}}  " + "  ".join(f"{c:>8}" for c in COLUMNS)]
        for item, label in ITEMS:
            cells = []
            for c in COLUMNS:
                mark = SYMBOLS[self.observed[item][c]]
                if not self.cells[item][c]:
                    mark += "!"
                cells.append(f"{mark:>8}")
            lines.append(f"{label:{width}}  " + "  ".join(cells))
        lines.append(f"phase={self.phase} all_pass={self.all_pass}"
                     + ("" if self.conclusive else " (inconclusive: toy-width secrets)"))
        return "\n".join(lines)


def audit_artifacts(
    columns: Mapping[str, Sequence[bytes]],
    truth: Truth,
    phase: str = "post_access",
    transcript_digest: str = "",
    ledger_head: str = "",
    column_actors: Mapping[str, str] | None = None,
    conclusive: bool = True,
) -> AuditReport:
    witnesses = truth.witnesses()
    observed: dict[str, dict[str, str]] = {item: {} for item, _ in ITEMS}
    for column in COLUMNS:
        artifacts = columns.get(column, ())
        for item, _ in ITEMS:
            if item == "share_keys":
                observed[item][column] = key_knowledge(artifacts, truth.share_keys)
            else:
                observed[item][column] = YES if knows(artifacts, witnesses[item]) else NO
    return AuditReport(
        phase, observed, expected_matrix(phase), transcript_digest, ledger_head,
        dict(column_actors or {}), conclusive,
    )


# ---------------------------------------------------------------------------
# Extraction from a live world
# ---------------------------------------------------------------------------


def extract_truth(world) -> Truth:
    owner = world.owner
    truth = Truth(do_did=bytes(owner.did))
    ehr_id = owner.wallet.secrets.get("ehr/latest")
    if ehr_id is not None:
        truth.sk, truth.ehr_id, dc = owner.ehr_secret(ehr_id)
        truth.dc_did = bytes(dc)
    truth.storage_locations = tuple(world.custodian.store.storage_locations()) \
        if world.by_role("DC") else ()
    issued = owner.issued_credentials()
    if issued:
        credential: DelegationCredential = issued[-1]
        truth.pseudo_id = credential.pseudo_id
        truth.masked_key = credential.cipher_key.masked_key
        truth.authorized_dr_dids = tuple(bytes(d) for d in credential.authorized_dr_dids)
        truth.dc_did = bytes(credential.dc_did)
        notary = _column_notary(world)
        truth.notary_did = bytes(notary.did) if notary else b""
        keys_blob = owner.wallet.secrets.get(f"pseudo/{credential.pseudo_id.hex()}/keys", b"")
        truth.share_keys = tuple(canonical_decode(keys_blob).values()) if keys_blob else ()
    return truth


def _column_notary(world):
    notaries = world.notaries
    for n in notaries:
        if n.fetched:
            return n
    return notaries[0] if notaries else None


def _column_requester(world):
    requesters = world.requesters
    for r in requesters:
        if r.recovered:
            return r
    return requesters[0] if requesters else None


def column_actors(world) -> dict:
    picks = {
        "DO": world.by_role("DO")[:1],
        "HSP": world.by_role("HSP")[:1],
        "DR": [a for a in [_column_requester(world)] if a],
        "Notary": [a for a in [_column_notary(world)] if a],
        "DC": world.by_role("DC")[:1],
    }
    return {c: actors[0] for c, actors in picks.items() if actors}


def collect_columns(world) -> dict[str, list[bytes]]:
    ledger_view = [r.payload for r in world.ledger.records()]
    columns = {c: [*a.artifacts(), *ledger_view] for c, a in column_actors(world).items()}
    columns["Outsider"] = ledger_view
    return columns


def audit(world, phase: str | None = None) -> AuditReport:
    """Audit a live world against the expected matrix.

    ``phase`` defaults to ``post_access`` once the audited requester has
    recovered the EHR, else ``pre_access``.
    """
    picks = column_actors(world)
    if phase is None:
        dr = picks.get("DR")
        phase = "post_access" if dr is not None and dr.recovered else "pre_access"
    return audit_artifacts(
        collect_columns(world),
        extract_truth(world),
        phase,
        world.transcript.digest(),
        world.ledger.head_hash.hex(),
        {c: a.name for c, a in picks.items()},
        _conclusive(world),
    )


def _conclusive(world) -> bool:
    return world.profile.key_width >= 16


def dump_observations(world) -> dict:
    return {
        "columns": {c: [b64e(x) for x in arts] for c, arts in collect_columns(world).items()},
        "column_actors": {c: a.name for c, a in column_actors(world).items()},
        "truth": extract_truth(world).to_dict(),
        "transcript_digest": world.transcript.digest(),
        "ledger_head": world.ledger.head_hash.hex(),
        "phase": audit(world).phase,
        "conclusive": _conclusive(world),
    }


def audit_from_observations(data: dict) -> AuditReport:
    columns = {c: [b64d(x) for x in arts] for c, arts in data["columns"].items()}
    return audit_artifacts(
        columns,
        Truth.from_dict(data["truth"]),
        data["phase"],
        data["transcript_digest"],
        data["ledger_head"],
        data["column_actors"],
        data.get("conclusive", True),
    )
