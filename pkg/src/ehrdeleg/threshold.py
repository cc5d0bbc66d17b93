"""(t, n)-threshold sharing of a block-cipher key set.

The EHR secret key ``sk`` is masked with a pad built from a fresh nonce
``r`` and a set of block-cipher keys. One key exists per (n - t + 1)-subset
``B`` of the parties and is given to every member of ``B``; any t parties
then jointly hold every key, while t - 1 parties always miss the key
indexed by (a subset of) their complement.

Two pad constructions are supported:

* ``xor``: ``pad = XOR_B E_{k_B}(r)``; parties contribute ``E_{k_B}(r)``
  independently and the requester XORs the labelled results.
* ``cascade``: ``pad = E_{k_Bm}(... E_{k_B1}(r))`` over labels in
  lexicographic order; each link is applied by some holder of that key.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import combinations
from typing import Callable, Iterable, Literal, Mapping, Sequence

import numpy as np

from ._codec import canonical_decode, canonical_encode, pack_list, unpack_list
from .crypto import (
    PRODUCTION,
    TOY,
    BlockCipherKey,
    CipherProfile,
    Rng,
    block_encrypt,
    get_profile,
    random_block_key,
    system_rng,
    xor_bytes,
)
from .errors import (
    FormatError,
    InconsistencyError,
    InsufficientPartiesError,
    ModeError,
    ParameterError,
    ProfileError,
)

Mode = Literal["xor", "cascade"]
KeyIndex = tuple[int, ...]
MODES = ("xor", "cascade")
MAX_PARTIES = 16


def encode_label(label: KeyIndex) -> str:
    return ",".join(str(i) for i in label)


def decode_label(text: str) -> KeyIndex:
    try:
        label = tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise FormatError(f"bad key label {text!r}") from exc
    if encode_label(label) != text or list(label) != sorted(set(label)):
        raise FormatError(f"non-canonical key label {text!r}")
    return label


@dataclass(frozen=True)
class ThresholdParams:
    n: int
    t: int

    def __post_init__(self):
        if not (1 <= self.t <= self.n):
            raise ParameterError(f"need 1 <= t <= n, got t={self.t}, n={self.n}")
        if self.n > MAX_PARTIES:
            raise ParameterError(f"n={self.n} exceeds the supported maximum {MAX_PARTIES}")

    @property
    def parties(self) -> tuple[int, ...]:
        return tuple(range(1, self.n + 1))

    def key_index_sets(self) -> list[KeyIndex]:
        """All (n - t + 1)-subsets of the parties, lexicographic."""
        return _key_index_sets(self.n, self.t)


@lru_cache(maxsize=None)
def _key_index_sets(n: int, t: int) -> list[KeyIndex]:
    return list(combinations(range(1, n + 1), n - t + 1))


class AccessStructure:
    """Monotone threshold access structure over parties ``1..n``."""

    def __init__(self, params: ThresholdParams):
        self.params = params
        self.participants = params.parties

    def is_authorized(self, subset: Iterable[int]) -> bool:
        members = set(subset)
        unknown = members - set(self.participants)
        if unknown:
            raise ParameterError(f"unknown parties {sorted(unknown)}")
        return len(members) >= self.params.t

    def authorized_sets(self):
        for size in range(self.params.t, self.params.n + 1):
            yield from combinations(self.participants, size)

    def minimal_authorized_sets(self) -> list[tuple[int, ...]]:
        return [
            s for s in self.authorized_sets()
            if all(not self.is_authorized(set(s) - {a}) for a in s)
        ]

    def maximal_unauthorized_sets(self) -> list[tuple[int, ...]]:
        out = []
        for size in range(0, self.params.t):
            for s in combinations(self.participants, size):
                rest = set(self.participants) - set(s)
                if all(self.is_authorized(set(s) | {a}) for a in rest):
                    out.append(s)
        return out


@dataclass(frozen=True)
class PartyShares:
    """The labelled keys one party holds."""

    party_index: int
    keys: Mapping[KeyIndex, BlockCipherKey]
    profile: CipherProfile = PRODUCTION

    @property
    def labels(self) -> list[KeyIndex]:
        return sorted(self.keys)

    def encode(self) -> bytes:
        return canonical_encode({
            "party_index": str(self.party_index).encode(),
            "profile": self.profile.name.encode(),
            "keys": canonical_encode(
                {encode_label(b): k.key_bytes for b, k in self.keys.items()}
            ),
        })

    @classmethod
    def decode(cls, data: bytes) -> "PartyShares":
        fields = canonical_decode(data)
        try:
            profile = get_profile(fields["profile"].decode())
            keys = {
                decode_label(name): BlockCipherKey(value)
                for name, value in canonical_decode(fields["keys"]).items()
            }
            return cls(int(fields["party_index"]), keys, profile)
        except (KeyError, ValueError, ParameterError) as exc:
            raise FormatError(f"malformed party shares: {exc}") from exc


@dataclass(frozen=True)
class KeyShareSet:
    params: ThresholdParams
    keys: Mapping[KeyIndex, BlockCipherKey]
    profile: CipherProfile = PRODUCTION

    @property
    def key_index_sets(self) -> list[KeyIndex]:
        return self.params.key_index_sets()

    @property
    def holdings(self) -> dict[int, list[KeyIndex]]:
        return {
            i: [b for b in self.key_index_sets if i in b] for i in self.params.parties
        }

    def shares_of(self, party_index: int) -> PartyShares:
        if party_index not in self.params.parties:
            raise ParameterError(f"unknown party index {party_index}")
        held = {b: self.keys[b] for b in self.key_index_sets if party_index in b}
        return PartyShares(party_index, held, self.profile)


def generate_key_shares(
    params: ThresholdParams, rng: Rng | None = None, profile: CipherProfile = PRODUCTION
) -> KeyShareSet:
    rng = rng or system_rng()
    keys = {b: random_block_key(profile, rng) for b in params.key_index_sets()}
    return KeyShareSet(params, keys, profile)


@dataclass(frozen=True)
class CipherKey:
    """Nonce plus the masked secret key (the ``cipherKey``/``cipherSK``)."""

    nonce_r: bytes
    masked_key: bytes
    params: ThresholdParams
    mode: Mode = "xor"
    profile: CipherProfile = PRODUCTION

    @property
    def n_blocks(self) -> int:
        return len(self.masked_key) // self.profile.block_width

    def encode_params(self) -> bytes:
        return canonical_encode({
            "n": str(self.params.n).encode(),
            "t": str(self.params.t).encode(),
            "mode": self.mode.encode(),
            "profile": self.profile.name.encode(),
        })

    @staticmethod
    def decode_params(data: bytes) -> tuple[ThresholdParams, Mode, CipherProfile]:
        fields = canonical_decode(data)
        try:
            mode = fields["mode"].decode()
            if mode not in MODES:
                raise FormatError(f"unknown mode {mode!r}")
            params = ThresholdParams(int(fields["n"]), int(fields["t"]))
            return params, mode, get_profile(fields["profile"].decode())
        except (KeyError, ValueError) as exc:
            raise FormatError(f"malformed cipher params: {exc}") from exc


@dataclass(frozen=True)
class PartialContribution:
    party_index: int
    entries: tuple[tuple[KeyIndex, bytes], ...]

    def encode(self) -> bytes:
        return canonical_encode({
            "party_index": str(self.party_index).encode(),
            "entries": canonical_encode({encode_label(b): c for b, c in self.entries}),
        })

    @classmethod
    def decode(cls, data: bytes) -> "PartialContribution":
        fields = canonical_decode(data)
        try:
            entries = canonical_decode(fields["entries"])
            return cls(
                int(fields["party_index"]),
                tuple((decode_label(k), v) for k, v in entries.items()),
            )
        except (KeyError, ValueError) as exc:
            raise FormatError(f"malformed partial contribution: {exc}") from exc


def block_input(nonce_r: bytes, block_no: int) -> bytes:
    """Nonce for block ``block_no``: the counter is XORed into the last byte."""
    if not 0 <= block_no < 256:
        raise ParameterError("at most 256 blocks per secret key")
    return nonce_r[:-1] + bytes([nonce_r[-1] ^ block_no])


def _encrypt_blocks(nonce_r: bytes, key: BlockCipherKey, n_blocks: int, profile) -> bytes:
    return b"".join(
        block_encrypt(block_input(nonce_r, j), key, profile) for j in range(n_blocks)
    )


def _cascade_pad(nonce_r, n_blocks, order, step) -> bytes:
    out = []
    for j in range(n_blocks):
        chain = block_input(nonce_r, j)
        for label in order:
            chain = step(label, chain)
        out.append(chain)
    return b"".join(out)


def derive_cipher_key(
    sk: bytes,
    shares: KeyShareSet,
    rng: Rng | None = None,
    mode: Mode = "xor",
    nonce_r: bytes | None = None,
) -> CipherKey:
    """Mask ``sk`` with the pad derived from a fresh nonce and every key in ``shares``."""
    profile = shares.profile
    if not shares.keys:
        raise ParameterError("empty key share set")
    if mode not in MODES:
        raise ModeError(f"unknown mode {mode!r}")
    if not sk or len(sk) % profile.block_width:
        raise ParameterError(
            f"sk width {len(sk)} is not a multiple of block width {profile.block_width}"
        )
    if nonce_r is None:
        nonce_r = (rng or system_rng()).randbytes(profile.block_width)
    if len(nonce_r) != profile.block_width:
        raise FormatError("nonce width must equal block width")
    n_blocks = len(sk) // profile.block_width
    order = shares.key_index_sets
    if mode == "xor":
        pad = bytes(len(sk))
        for label in order:
            pad = xor_bytes(pad, _encrypt_blocks(nonce_r, shares.keys[label], n_blocks, profile))
    else:
        pad = _cascade_pad(
            nonce_r, n_blocks, order,
            lambda label, block: block_encrypt(block, shares.keys[label], profile),
        )
    return CipherKey(nonce_r, xor_bytes(sk, pad), shares.params, mode, profile)


def compute_partial(
    shares: PartyShares, nonce_r: bytes, n_blocks: int = 1
) -> PartialContribution:
    if not shares.keys:
        raise ParameterError(f"party {shares.party_index} holds no keys")
    entries = tuple(
        (label, _encrypt_blocks(nonce_r, shares.keys[label], n_blocks, shares.profile))
        for label in sorted(shares.keys)
    )
    return PartialContribution(shares.party_index, entries)


def combine_xor(cipher_key: CipherKey, contributions: Sequence[PartialContribution]) -> bytes:
    """Unmask ``sk`` from labelled contributions, counting each key exactly once."""
    if cipher_key.mode != "xor":
        raise ModeError(f"cipher key was derived in {cipher_key.mode} mode, not xor")
    if not contributions:
        raise InsufficientPartiesError(cipher_key.params.key_index_sets())
    by_label: dict[KeyIndex, bytes] = {}
    for contribution in contributions:
        for label, value in contribution.entries:
            seen = by_label.get(label)
            if seen is not None and seen != value:
                raise InconsistencyError(
                    f"conflicting contributions for key {{{encode_label(label)}}}"
                )
            by_label[label] = value
    expected = cipher_key.params.key_index_sets()
    missing = [b for b in expected if b not in by_label]
    if missing:
        raise InsufficientPartiesError(missing)
    stray = set(by_label) - set(expected)
    if stray:
        raise InconsistencyError(f"contributions for unknown keys {sorted(stray)}")
    pad = bytes(len(cipher_key.masked_key))
    for label in expected:
        if len(by_label[label]) != len(pad):
            raise InconsistencyError(f"contribution width mismatch for {label}")
        pad = xor_bytes(pad, by_label[label])
    return xor_bytes(cipher_key.masked_key, pad)


StepFn = Callable[[KeyIndex, bytes], bytes]


def combine_cascade(
    cipher_key: CipherKey, step_fn: StepFn, order: Sequence[KeyIndex] | None = None
) -> bytes:
    """Replay the cascade chain through ``step_fn`` and unmask ``sk``.

    ``step_fn(label, block)`` must return ``E_{k_label}(block)`` computed by
    some cooperating holder. ``order`` exists only to exercise the chain's
    order sensitivity; the protocol always uses lexicographic order.
    """
    if cipher_key.mode != "cascade":
        raise ModeError(f"cipher key was derived in {cipher_key.mode} mode, not cascade")
    if order is None:
        order = cipher_key.params.key_index_sets()
    available = getattr(step_fn, "labels", None)
    if available is not None:
        missing = [b for b in order if b not in available]
        if missing:
            raise InsufficientPartiesError(missing)
    pad = _cascade_pad(cipher_key.nonce_r, cipher_key.n_blocks, order, step_fn)
    return xor_bytes(cipher_key.masked_key, pad)


class CascadeStep:
    """A step function backed by locally available party shares.

    Each link is applied by the lowest-indexed party holding the key; the
    ``trace`` records ``(label, party_index)`` for every application.
    """

    def __init__(self, parties: Iterable[PartyShares]):
        self._holders: dict[KeyIndex, PartyShares] = {}
        for party in sorted(parties, key=lambda p: p.party_index):
            for label in party.keys:
                self._holders.setdefault(label, party)
        self.labels = frozenset(self._holders)
        self.trace: list[tuple[KeyIndex, int]] = []

    def __call__(self, label: KeyIndex, block: bytes) -> bytes:
        party = self._holders.get(label)
        if party is None:
            raise InsufficientPartiesError([label])
        self.trace.append((label, party.party_index))
        return block_encrypt(block, party.keys[label], party.profile)


# ---------------------------------------------------------------------------
# Exhaustive secrecy oracle (toy profile)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SecrecyVerdict:
    verdict: Literal["reconstructs", "hidden", "partial"]
    sk: int
    candidates: tuple[int, ...]
    missing: tuple[KeyIndex, ...] = field(default=())

    @property
    def consistent_values(self) -> int:
        return sum(1 for c in self.candidates if c)


@lru_cache(maxsize=1)
def _toy_table() -> np.ndarray:
    """``table[x, k] = block_encrypt(x, k)`` under the toy profile."""
    table = np.empty((256, 256), dtype=np.int64)
    for x in range(256):
        for k in range(256):
            table[x, k] = block_encrypt(bytes([x]), BlockCipherKey(bytes([k])), TOY)[0]
    return table


@lru_cache(maxsize=1)
def _toy_inverse() -> np.ndarray:
    """``inverse[y, k] = x`` with ``table[x, k] = y``; each column is a permutation."""
    table = _toy_table()
    inverse = np.empty_like(table)
    cols = np.arange(256)
    for x in range(256):
        inverse[table[x], cols] = x
    return inverse


def _normalize(counts: np.ndarray) -> np.ndarray:
    g = int(np.gcd.reduce(counts[counts > 0])) if counts.any() else 1
    return counts // g


def secrecy_oracle(
    params: ThresholdParams,
    coalition: Iterable[int],
    rng: Rng | None = None,
    *,
    mode: Mode = "xor",
    profile: CipherProfile = TOY,
    instance: tuple[int, Mapping[KeyIndex, int], int] | None = None,
    knows_cipher_key: bool = True,
) -> SecrecyVerdict:
    """Decide by enumeration whether ``coalition`` determines ``sk``.

    A random toy instance (sk, keys, r) is drawn unless ``instance`` is
    given. The coalition sees the cipher key (unless ``knows_cipher_key``
    is false) and the keys its members hold. Every assignment of the
    missing keys is enumerated, counting how many assignments yield each
    candidate ``sk``: a single candidate means the coalition reconstructs;
    equal counts over all 256 values mean ``sk`` is uniformly hidden.
    """
    profile = get_profile(profile)
    if profile.name != "toy":
        raise ProfileError("secrecy_oracle requires the toy profile")
    if mode not in MODES:
        raise ModeError(f"unknown mode {mode!r}")
    members = set(coalition)
    unknown = members - set(params.parties)
    if unknown:
        raise ParameterError(f"unknown parties {sorted(unknown)}")
    labels = params.key_index_sets()
    if instance is None:
        rng = rng or system_rng()
        sk = rng.randbytes(1)[0]
        keys = {b: rng.randbytes(1)[0] for b in labels}
        r = rng.randbytes(1)[0]
    else:
        sk, keys, r = instance
    shares = KeyShareSet(params, {b: BlockCipherKey(bytes([keys[b]])) for b in labels}, TOY)
    ck = derive_cipher_key(bytes([sk]), shares, mode=mode, nonce_r=bytes([r]))
    masked = ck.masked_key[0]

    table, inverse = _toy_table(), _toy_inverse()
    idx = np.arange(256)
    known = {b for b in labels if members & set(b)}
    missing = tuple(b for b in labels if b not in known)
    # counts[v] = number of missing-key assignments giving pad (xor) or chain (cascade) v
    counts = np.zeros(256, dtype=np.int64)
    counts[0 if mode == "xor" else r] = 1
    for label in labels:
        ks = np.array([keys[label]]) if label in known else idx
        # new[v] = sum over candidate keys k of counts[preimage of v under k]
        if mode == "xor":
            new = counts[idx[:, None] ^ table[r, ks][None, :]].sum(axis=1)
        else:
            new = counts[inverse[:, ks]].sum(axis=1)
        counts = _normalize(new)
    sk_counts = np.zeros(256, dtype=np.int64)
    if knows_cipher_key:
        sk_counts[idx ^ masked] = counts
    else:
        for m in range(256):
            sk_counts[idx ^ m] += counts
        sk_counts = _normalize(sk_counts)

    nonzero = np.flatnonzero(sk_counts)
    if len(nonzero) == 1:
        verdict = "reconstructs"
        assert int(nonzero[0]) == sk
    elif len(nonzero) == 256 and (sk_counts == sk_counts[0]).all():
        verdict = "hidden"
    else:
        verdict = "partial"
    return SecrecyVerdict(verdict, sk, tuple(int(c) for c in sk_counts), missing)


def coverage_missing(params: ThresholdParams, coalition: Iterable[int]) -> list[KeyIndex]:
    """Key labels no member of ``coalition`` holds."""
    members = set(coalition)
    return [b for b in params.key_index_sets() if not members & set(b)]


def binomial_key_count(params: ThresholdParams) -> int:
    return math.comb(params.n, params.n - params.t + 1)
