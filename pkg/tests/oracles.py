"""Independent reference computations used to freeze expected values.

Nothing here imports the threshold module; each oracle recomputes its
answer from first principles with plain integer arithmetic.
"""

from collections import Counter
from itertools import combinations, product


def toy_block(x: int, k: int) -> int:
    return x ^ k


def covering_labels(n: int, t: int) -> list[tuple[int, ...]]:
    """All (n-t+1)-subsets of 1..n by bitmask scan, sorted lexicographically."""
    size = n - t + 1
    out = []
    for mask in range(1 << n):
        members = tuple(i + 1 for i in range(n) if mask >> i & 1)
        if len(members) == size:
            out.append(members)
    return sorted(out)


def union_covers(n: int, t: int, coalition) -> bool:
    held = {b for b in covering_labels(n, t) if set(b) & set(coalition)}
    return len(held) == len(covering_labels(n, t))


def toy_pad_xor(keys: dict, r: int) -> int:
    pad = 0
    for label in sorted(keys):
        pad ^= toy_block(r, keys[label])
    return pad


def toy_pad_cascade(keys: dict, r: int) -> int:
    chain = r
    for label in sorted(keys):
        chain = toy_block(chain, keys[label])
    return chain


def brute_force_candidates(n, t, coalition, sk, keys, r, mode="xor") -> Counter:
    """Count, over every assignment of the coalition's missing keys, each consistent sk."""
    labels = covering_labels(n, t)
    pad_fn = toy_pad_xor if mode == "xor" else toy_pad_cascade
    masked = sk ^ pad_fn(keys, r)
    missing = [b for b in labels if not set(b) & set(coalition)]
    counts: Counter = Counter()
    for guess in product(range(256), repeat=len(missing)):
        trial = dict(keys)
        trial.update(zip(missing, guess))
        counts[masked ^ pad_fn(trial, r)] += 1
    return counts


def coalitions(n: int):
    for size in range(n + 1):
        yield from combinations(range(1, n + 1), size)
