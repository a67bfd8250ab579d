"""Permutation and subset combinatorics for ordered-coalition games.

Conventions used throughout the package:

- Features (players) are labelled 1..n.
- A full permutation is stored in one-line notation: ``order[k-1]`` is the
  feature occupying position ``k``.  Equivalently, feature ``i`` lands at
  position ``inverse(i)``.
- A *partial ordering* over a subset ``S`` of the features is a plain tuple
  of distinct labels, read left to right as earlier to later.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Iterator, Sequence

import numpy as np


class SizeLimitError(ValueError):
    """Raised when a brute-force enumeration would exceed its size guard."""


@dataclass(frozen=True)
class Permutation:
    """A bijection on {1..n} in one-line notation.

    ``mapping[k-1]`` holds the feature at position ``k`` (1-based).
    """

    mapping: tuple[int, ...]

    def __post_init__(self):
        n = len(self.mapping)
        if n == 0:
            raise ValueError("permutation must have at least one element")
        if sorted(self.mapping) != list(range(1, n + 1)):
            raise ValueError(f"not a bijection on 1..{n}: {self.mapping}")

    @property
    def n(self) -> int:
        return len(self.mapping)

    def __call__(self, k: int) -> int:
        """Feature at position ``k``."""
        return self.mapping[k - 1]

    @cached_property
    def _inverse_mapping(self) -> tuple[int, ...]:
        inv = [0] * self.n
        for pos, feat in enumerate(self.mapping, start=1):
            inv[feat - 1] = pos
        return tuple(inv)

    def position_of(self, i: int) -> int:
        """Position where feature ``i`` lands (the inverse map)."""
        return self._inverse_mapping[i - 1]

    def inverse(self) -> "Permutation":
        return Permutation(self._inverse_mapping)

    def __iter__(self) -> Iterator[int]:
        return iter(self.mapping)


def identity(n: int) -> Permutation:
    if n < 1:
        raise ValueError("n must be >= 1")
    return Permutation(tuple(range(1, n + 1)))


def inverse(p: Permutation) -> Permutation:
    return p.inverse()


def inversions(p: Permutation) -> int:
    """Count pairs (k < k') with p(k) > p(k')."""
    m = p.mapping
    return sum(1 for a, b in itertools.combinations(m, 2) if a > b)


def insert_at(ordering: Sequence[int], i: int, pos: int) -> tuple[int, ...]:
    """Insert label ``i`` at 1-based position ``pos`` of a partial ordering."""
    t = tuple(ordering)
    if i in t:
        raise ValueError(f"label {i} already present in {t}")
    if not 1 <= pos <= len(t) + 1:
        raise ValueError(f"position {pos} out of range for ordering of length {len(t)}")
    return t[: pos - 1] + (i,) + t[pos - 1 :]


def remove(ordering: Sequence[int], i: int) -> tuple[int, ...]:
    """Delete label ``i`` from a partial ordering, preserving relative order."""
    t = tuple(ordering)
    if i not in t:
        raise ValueError(f"label {i} not present in {t}")
    return tuple(x for x in t if x != i)


def disagreements(partial: Sequence[int], sigma: Permutation | Sequence[int]) -> int:
    """Pairs of labels ordered oppositely in ``partial`` vs ``sigma``."""
    full = tuple(sigma) if not isinstance(sigma, Permutation) else sigma.mapping
    pos = {feat: k for k, feat in enumerate(full)}
    missing = [x for x in partial if x not in pos]
    if missing:
        raise ValueError(f"labels {missing} absent from the full permutation")
    count = 0
    for a, b in itertools.combinations(partial, 2):
        if pos[a] > pos[b]:
            count += 1
    return count


def consistent_extensions(partial: Sequence[int], n: int) -> Iterator[Permutation]:
    """All permutations of 1..n whose restriction to S equals ``partial``.

    Yields exactly n!/|S|! permutations, lazily.
    """
    members = set(partial)
    if not members <= set(range(1, n + 1)):
        raise ValueError(f"ordering {partial} not within 1..{n}")
    rest = [x for x in range(1, n + 1) if x not in members]
    k = len(partial)
    # Choose the positions occupied by S (keeping partial's order there),
    # then permute the remaining labels over the remaining positions.
    for s_positions in itertools.combinations(range(n), k):
        s_pos_set = set(s_positions)
        other_positions = [p for p in range(n) if p not in s_pos_set]
        for arrangement in itertools.permutations(rest):
            out = [0] * n
            for p, label in zip(s_positions, partial):
                out[p] = label
            for p, label in zip(other_positions, arrangement):
                out[p] = label
            yield Permutation(tuple(out))


def predecessor_set(sigma: Permutation, i: int) -> frozenset[int]:
    """Features placed strictly before feature ``i``."""
    pos = sigma.position_of(i)  # raises IndexError only if i out of range
    if not 1 <= i <= sigma.n:
        raise ValueError(f"feature {i} not in permutation of size {sigma.n}")
    return frozenset(sigma.mapping[: pos - 1])


def all_subsets(n: int, include_empty: bool = True, include_full: bool = True) -> Iterator[frozenset[int]]:
    universe = range(1, n + 1)
    for k in range(0, n + 1):
        if k == 0 and not include_empty:
            continue
        if k == n and not include_full:
            continue
        for combo in itertools.combinations(universe, k):
            yield frozenset(combo)


def all_orderings(subset: Iterable[int]) -> Iterator[tuple[int, ...]]:
    """Every ordering (partial permutation) of a subset."""
    return itertools.permutations(sorted(subset))


def all_permutations(n: int) -> Iterator[Permutation]:
    for t in itertools.permutations(range(1, n + 1)):
        yield Permutation(t)


def count_positions(n: int, i: int, pos: int) -> int:
    """Within-subset placement count: over all S containing ``i``, the number
    of orderings of S that place ``i`` at position ``pos``.

    Brute force; guarded to small n.
    """
    if n > 7:
        raise SizeLimitError(f"count_positions enumerates all subsets/orderings; n={n} > 7")
    if not (1 <= i <= n and 1 <= pos <= n):
        raise ValueError("i and pos must lie in 1..n")
    total = 0
    for s in all_subsets(n):
        if i not in s:
            continue
        for ordering in all_orderings(s):
            if pos <= len(ordering) and ordering[pos - 1] == i:
                total += 1
    return total


class SeededSampler:
    """Deterministic random source; identical seed + call sequence gives
    identical outputs.  Single-owner: do not share one instance across
    concurrent workers; use :meth:`spawn` for parallel streams.
    """

    def __init__(self, seed: int, _bitgen: np.random.SeedSequence | None = None):
        self.seed = seed
        self._seq = _bitgen if _bitgen is not None else np.random.SeedSequence(seed)
        self._rng = np.random.Generator(np.random.PCG64(self._seq))

    def spawn(self) -> "SeededSampler":
        """Child sampler with a derived, independent stream."""
        (child,) = self._seq.spawn(1)
        return SeededSampler(self.seed, child)

    def permutation(self, n: int) -> Permutation:
        if n < 1:
            raise ValueError("n must be >= 1")
        order = list(range(1, n + 1))
        # Fisher-Yates
        for k in range(n - 1, 0, -1):
            j = int(self._rng.integers(0, k + 1))
            order[k], order[j] = order[j], order[k]
        return Permutation(tuple(order))

    def subset(self, n: int, exclude_empty: bool = False, exclude_full: bool = False) -> frozenset[int]:
        """Uniform draw from the power set of 1..n, optionally excluding the
        trivial coalitions (rejection sampling)."""
        while True:
            mask = self._rng.integers(0, 2, size=n)
            s = frozenset(k + 1 for k in range(n) if mask[k])
            if exclude_empty and not s:
                continue
            if exclude_full and len(s) == n:
                continue
            return s

    def integers(self, low: int, high: int) -> int:
        return int(self._rng.integers(low, high))

    def uniform(self, size: int | None = None):
        return self._rng.uniform(size=size)

    def choice(self, seq: Sequence):
        return seq[int(self._rng.integers(0, len(seq)))]


def subset_count_identity(n: int, subset_size: int) -> int:
    """n!/|S|!, the number of consistent extensions of any ordering of size s."""
    return math.factorial(n) // math.factorial(subset_size)
