"""Integer-backed coalitions (player subsets) with a fixed player capacity."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Iterator


@dataclass(frozen=True)
class Coalition:
    """Subset of the players 0..n-1, stored as a bit mask."""

    bits: int
    n: int

    def __post_init__(self) -> None:
        if self.n <= 0:
            raise ValueError(f"player count must be positive, got {self.n}")
        if self.bits < 0:
            raise ValueError("coalition bits must be non-negative")
        if self.bits >> self.n:
            raise ValueError(
                f"coalition has a member >= n ({self.n}): bits={self.bits:#x}"
            )

    @classmethod
    def empty(cls, n: int) -> "Coalition":
        return cls(0, n)

    @classmethod
    def full(cls, n: int) -> "Coalition":
        return cls((1 << n) - 1, n)

    @classmethod
    def of(cls, players: Iterable[int], n: int) -> "Coalition":
        """Coalition containing exactly the given players."""
        bits = 0
        for p in players:
            if not 0 <= p < n:
                raise ValueError(f"player {p} out of range [0, {n})")
            bits |= 1 << p
        return cls(bits, n)

    def cardinality(self) -> int:
        return self.bits.bit_count()

    def contains(self, player: int) -> bool:
        return bool((self.bits >> player) & 1)

    def with_player(self, player: int) -> "Coalition":
        if not 0 <= player < self.n:
            raise ValueError(f"player {player} out of range [0, {self.n})")
        return Coalition(self.bits | (1 << player), self.n)

    def without_player(self, player: int) -> "Coalition":
        return Coalition(self.bits & ~(1 << player), self.n)

    def union(self, other: "Coalition") -> "Coalition":
        self._check_same_n(other)
        return Coalition(self.bits | other.bits, self.n)

    def intersection(self, other: "Coalition") -> "Coalition":
        self._check_same_n(other)
        return Coalition(self.bits & other.bits, self.n)

    def complement(self) -> "Coalition":
        return Coalition(~self.bits & ((1 << self.n) - 1), self.n)

    def issubset(self, other: "Coalition") -> bool:
        self._check_same_n(other)
        return self.bits & ~other.bits == 0

    def members(self) -> Iterator[int]:
        bits = self.bits
        player = 0
        while bits:
            if bits & 1:
                yield player
            bits >>= 1
            player += 1

    def _check_same_n(self, other: "Coalition") -> None:
        if self.n != other.n:
            raise ValueError(f"player counts differ: {self.n} != {other.n}")

    def __len__(self) -> int:
        return self.cardinality()

    def __contains__(self, player: int) -> bool:
        return self.contains(player)

    def __iter__(self) -> Iterator[int]:
        return self.members()

    def __repr__(self) -> str:
        return f"Coalition({{{', '.join(map(str, self.members()))}}}, n={self.n})"
