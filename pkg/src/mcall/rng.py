"""Deterministic splitmix64 generators.

Each caller owns one 64-bit seed from which it derives independent named
streams (split assignment, feedback sampling, gating, training shuffles).
Streams advance independently, so consuming one never perturbs another;
stream states are plain integers and round-trip through persistence.
"""

from __future__ import annotations

MASK64 = (1 << 64) - 1

_GAMMA = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def mix64(*parts: int) -> int:
    """Fold integers into one well-scrambled 64-bit value."""
    acc = 0
    for p in parts:
        acc = (acc + (p & MASK64) + _GAMMA) & MASK64
        acc = ((acc ^ (acc >> 30)) * _MIX1) & MASK64
        acc = ((acc ^ (acc >> 27)) * _MIX2) & MASK64
        acc ^= acc >> 31
    return acc


def mix_str(seed: int, text: str) -> int:
    """Derive a child seed from a parent seed and a label."""
    acc = seed & MASK64
    for ch in text.encode("utf-8"):
        acc = mix64(acc, ch)
    return acc


class SplitMix64:
    """Minimal splitmix64 stream; state is a single u64."""

    __slots__ = ("state",)

    def __init__(self, seed: int):
        self.state = seed & MASK64

    def next_u64(self) -> int:
        self.state = (self.state + _GAMMA) & MASK64
        z = self.state
        z = ((z ^ (z >> 30)) * _MIX1) & MASK64
        z = ((z ^ (z >> 27)) * _MIX2) & MASK64
        return z ^ (z >> 31)

    def next_float(self) -> float:
        """Uniform in [0, 1) with 53 bits of precision."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def next_below(self, n: int) -> int:
        """Uniform integer in [0, n); unbiased via rejection."""
        if n <= 0:
            raise ValueError("n must be positive")
        limit = (MASK64 + 1) - ((MASK64 + 1) % n)
        while True:
            v = self.next_u64()
            if v < limit:
                return v % n

    def shuffle(self, items: list) -> None:
        """In-place Fisher-Yates shuffle."""
        for i in range(len(items) - 1, 0, -1):
            j = self.next_below(i + 1)
            items[i], items[j] = items[j], items[i]

    def sample_indices(self, n: int, k: int) -> list[int]:
        """k distinct indices out of range(n), in draw order."""
        if k >= n:
            return list(range(n))
        pool = list(range(n))
        self.shuffle(pool)
        return pool[:k]


# Named per-caller streams. Fixed indices keep derivation stable across runs.
STREAM_SPLIT = "split"
STREAM_FEEDBACK = "feedback"
STREAM_GATE = "gate"


class StreamSet:
    """A family of independent splitmix64 streams derived from one seed."""

    def __init__(self, seed: int, names: tuple[str, ...] = (STREAM_SPLIT, STREAM_FEEDBACK, STREAM_GATE)):
        self.seed = seed & MASK64
        self.streams = {name: SplitMix64(mix_str(self.seed, name)) for name in names}

    def __getitem__(self, name: str) -> SplitMix64:
        return self.streams[name]

    def state_dict(self) -> dict[str, int]:
        return {name: s.state for name, s in self.streams.items()}

    def restore(self, states: dict[str, int]) -> None:
        for name, state in states.items():
            if name in self.streams:
                self.streams[name].state = state & MASK64
