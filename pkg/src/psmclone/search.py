"""Between-executable and within-executable search spaces, plus clone classes."""
from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

from .errors import DuplicateId, TooFew, UnknownId
from .trace import ExecutableSchema, IOPair, io_pairs


@dataclass(frozen=True, order=True)
class CandidatePair:
    a: str
    b: str

    def __post_init__(self):
        if self.a == self.b:
            raise ValueError(f"a candidate pair needs two executables, got {self.a!r} twice")
        if self.a > self.b:
            first, second = self.b, self.a
            object.__setattr__(self, "a", first)
            object.__setattr__(self, "b", second)


@dataclass(frozen=True)
class Link:
    pair_a: IOPair
    pair_b: IOPair


def build_bes(executables: Sequence[ExecutableSchema]) -> list[CandidatePair]:
    """All unordered pairs of executables, ordered lexicographically by id."""
    ids = [ex.id for ex in executables]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise DuplicateId(f"executable ids occur more than once: {dupes}")
    return [CandidatePair(a, b) for a, b in combinations(sorted(ids), 2)]


def bes_size(n: int) -> int:
    """|Ex|! / (2 (|Ex|-2)!) without the factorials."""
    if n < 2:
        raise TooFew(f"need at least two executables, got {n}")
    return n * (n - 1) // 2


def build_wes(a: ExecutableSchema, b: ExecutableSchema) -> list[Link]:
    return [Link(pa, pb) for pa in io_pairs(a) for pb in io_pairs(b)]


def total_space(executables: Sequence[ExecutableSchema]) -> int:
    n_io = {ex.id: len(io_pairs(ex)) for ex in executables}
    return sum(n_io[c.a] * n_io[c.b] for c in build_bes(executables))


class CloneClasses:
    """Disjoint-set forest over executable ids (union by size, path compression)."""

    def __init__(self, ids: Iterable[str] = ()):
        self._parent: dict[str, str] = {}
        self._size: dict[str, int] = {}
        for i in ids:
            self.add(i)

    def add(self, i: str) -> None:
        if i not in self._parent:
            self._parent[i] = i
            self._size[i] = 1

    def __contains__(self, i: str) -> bool:
        return i in self._parent

    def find(self, i: str) -> str:
        if i not in self._parent:
            raise UnknownId(f"unknown executable id {i!r}")
        root = i
        while self._parent[root] != root:
            root = self._parent[root]
        while self._parent[i] != root:
            self._parent[i], i = root, self._parent[i]
        return root

    def union(self, a: str, b: str) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self._size[ra] < self._size[rb]:
            ra, rb = rb, ra
        self._parent[rb] = ra
        self._size[ra] += self._size[rb]

    def same_class(self, a: str, b: str) -> bool:
        return self.find(a) == self.find(b)

    def classes(self) -> list[list[str]]:
        """Classes as sorted id lists, ordered by their smallest member."""
        groups: dict[str, list[str]] = {}
        for i in self._parent:
            groups.setdefault(self.find(i), []).append(i)
        return sorted((sorted(g) for g in groups.values()), key=lambda g: g[0])
