"""FNV-1a-64 hashing and the xorshift64* generator.

Both are specified bit-exactly so that independent implementations of the
generator and of a bot agree on every domain they derive.
"""

from typing import Union

FNV_OFFSET_BASIS = 14695981039346656037
FNV_PRIME = 1099511628211
XORSHIFT_MULTIPLIER = 2685821657736338717
MASK64 = (1 << 64) - 1


def fnv1a64(data: Union[bytes, str]) -> int:
    if isinstance(data, str):
        data = data.encode("utf-8")
    h = FNV_OFFSET_BASIS
    for byte in data:
        h ^= byte
        h = (h * FNV_PRIME) & MASK64
    return h


class XorShift64Star:
    """xorshift64* stream. A zero seed is replaced by the FNV offset basis."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        seed &= MASK64
        self.state = seed if seed != 0 else FNV_OFFSET_BASIS

    def next(self) -> int:
        x = self.state
        x ^= x >> 12
        x ^= (x << 25) & MASK64
        x ^= x >> 27
        self.state = x
        return (x * XORSHIFT_MULTIPLIER) & MASK64

    def below(self, n: int) -> int:
        if n <= 0:
            raise ValueError(f"bound must be positive, got {n}")
        return self.next() % n

    def uniform_int(self, lo: int, hi: int) -> int:
        """Integer in [lo, hi], both ends inclusive."""
        if hi < lo:
            raise ValueError(f"empty range [{lo}, {hi}]")
        return lo + self.next() % (hi - lo + 1)


def derive_seed(master_seed: int, node_name: str, purpose: str) -> int:
    return fnv1a64(f"{master_seed}|{node_name}|{purpose}")


def derive_stream(master_seed: int, node_name: str, purpose: str) -> XorShift64Star:
    """Independent stream for one (node, purpose) pair.

    Adding a node never perturbs the streams of the others.
    """
    return XorShift64Star(derive_seed(master_seed, node_name, purpose))
