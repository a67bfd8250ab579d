"""Brute-force reference computations for small games.

Everything here enumerates subsets and/or permutations outright and is
guarded to small n; it exists as the oracle layer that the fixed-sample
estimators are validated against, never as a production path.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .games import OrderedGame
from .perms import (
    Permutation,
    SizeLimitError,
    all_orderings,
    all_permutations,
    all_subsets,
    consistent_extensions,
    insert_at,
)

FACTORIAL_GUARD = 6  # enumerations touching n! (or sums of |S|!)
POWERSET_GUARD = 12  # enumerations touching only 2^n


@dataclass
class AttributionMatrix:
    """Per-feature, per-position attribution.

    ``values[i-1, c]`` is the importance of feature ``i`` conditioned on
    landing at ``positions[c]``.  ``positions`` is 1..n in the ungrouped case
    and the sorted group indices otherwise.  Sampled matrices may contain NaN
    for never-visited cells.
    """

    values: np.ndarray
    positions: tuple[int, ...]

    @property
    def n(self) -> int:
        return self.values.shape[0]

    def row(self, i: int) -> np.ndarray:
        return self.values[i - 1]


@dataclass
class AttributionResult:
    vi: np.ndarray
    pi: np.ndarray
    gamma: AttributionMatrix | None = None
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "vi": [float(x) for x in self.vi],
            "pi": [float(x) for x in self.pi],
            "meta": self.meta,
        }
        if self.gamma is not None:
            out["gamma"] = [
                [None if np.isnan(x) else float(x) for x in row]
                for row in self.gamma.values
            ]
            out["gamma_positions"] = list(self.gamma.positions)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "AttributionResult":
        gamma = None
        if "gamma" in d:
            vals = np.array(
                [[np.nan if x is None else float(x) for x in row] for row in d["gamma"]]
            )
            gamma = AttributionMatrix(vals, tuple(d.get("gamma_positions", range(1, vals.shape[1] + 1))))
        return cls(
            vi=np.array(d["vi"], dtype=float),
            pi=np.array(d["pi"], dtype=float),
            gamma=gamma,
            meta=d.get("meta", {}),
        )


def value_importance(matrix: AttributionMatrix) -> np.ndarray:
    """Row means (NaN cells skipped for sampled matrices)."""
    return np.nanmean(matrix.values, axis=1)


def position_importance(matrix: AttributionMatrix) -> np.ndarray:
    """Per-row least-squares slope of the attribution against centered
    position, in closed form."""
    if len(matrix.positions) < 2:
        raise ValueError("position importance needs at least 2 positions")
    pos = np.asarray(matrix.positions, dtype=float)
    out = np.empty(matrix.n)
    for r in range(matrix.n):
        row = matrix.values[r]
        ok = ~np.isnan(row)
        if ok.sum() < 2:
            out[r] = np.nan
            continue
        p = pos[ok]
        g = row[ok]
        pc = p - p.mean()
        out[r] = float(pc @ (g - g.mean()) / (pc @ pc))
    return out


def _check_factorial_guard(n: int, what: str) -> None:
    if n > FACTORIAL_GUARD:
        raise SizeLimitError(
            f"{what} enumerates permutations and is limited to n <= {FACTORIAL_GUARD}; got n={n}"
        )


def shapley_exact(nu: Callable[[frozenset], float], n: int) -> np.ndarray:
    """Classical Shapley values by full power-set enumeration."""
    if n > POWERSET_GUARD:
        raise SizeLimitError(f"shapley_exact is limited to n <= {POWERSET_GUARD}; got n={n}")
    cache = {s: float(nu(s)) for s in all_subsets(n)}
    fact = [math.factorial(k) for k in range(n + 1)]
    phi = np.zeros(n)
    for i in range(1, n + 1):
        terms = []
        for s in all_subsets(n):
            if i in s:
                continue
            w = fact[len(s)] * fact[n - len(s) - 1] / fact[n]
            terms.append(w * (cache[s | {i}] - cache[s]))
        phi[i - 1] = math.fsum(terms)
    return phi


def sb_exact(omega_hat: Callable[[tuple[int, ...]], float], n: int) -> np.ndarray:
    """Shapley extension over ordered coalitions: for each feature, average
    the gain from inserting it at every slot of every ordering of every
    coalition not containing it."""
    _check_factorial_guard(n, "sb_exact")
    fact = [math.factorial(k) for k in range(n + 1)]
    memo: dict[tuple[int, ...], float] = {}

    def oh(pi: tuple[int, ...]) -> float:
        if pi not in memo:
            memo[pi] = float(omega_hat(pi))
        return memo[pi]

    phi = np.zeros(n)
    for i in range(1, n + 1):
        others = [x for x in range(1, n + 1) if x != i]
        terms = []
        for s in all_subsets(n - 1):
            sub = [others[k - 1] for k in s]  # subset of N \ {i}
            size = len(sub)
            w = fact[n - size - 1] / (fact[n] * (size + 1))
            for pi in all_orderings(sub):
                base = oh(pi)
                for slot in range(1, size + 2):
                    terms.append(w * (oh(insert_at(pi, i, slot)) - base))
        phi[i - 1] = math.fsum(terms)
    return phi


def ordering_game_from(game: OrderedGame) -> Callable[[tuple[int, ...]], float]:
    """Lift an ordered game to a function on partial orderings by averaging
    the payoff over every full permutation consistent with the ordering."""
    _check_factorial_guard(game.n, "ordering_game_from")
    memo: dict[tuple[int, ...], float] = {}

    def omega_hat(pi: tuple[int, ...]) -> float:
        key = tuple(pi)
        if key not in memo:
            members = frozenset(key)
            vals = [
                game.evaluate(members, sigma)
                for sigma in consistent_extensions(key, game.n)
            ]
            memo[key] = math.fsum(vals) / len(vals)
        return memo[key]

    return omega_hat


def averaged_game(game: OrderedGame) -> Callable[[frozenset], float]:
    """Set game obtained by averaging the ordered payoff over every full
    permutation."""
    _check_factorial_guard(game.n, "averaged_game")
    perms = list(all_permutations(game.n))
    memo: dict[frozenset, float] = {}

    def nu_bar(s: frozenset) -> float:
        key = frozenset(s)
        if key not in memo:
            memo[key] = math.fsum(game.evaluate(key, sigma) for sigma in perms) / len(perms)
        return memo[key]

    return nu_bar


def exact_matrix(game: OrderedGame, groups: Sequence[int] | None = None) -> AttributionMatrix:
    """Full enumeration of the per-feature, per-position attribution matrix.

    ``groups``, when given, maps each raw position (1..n) to a group index;
    conditioning is then on the landing group and the matrix has one column
    per distinct group index.
    """
    n = game.n
    _check_factorial_guard(n, "exact_matrix")
    if groups is not None:
        if len(groups) != n:
            raise ValueError("group map must cover every position")
        if any(groups[k] > groups[k + 1] for k in range(n - 1)):
            raise ValueError("group map must be monotone non-decreasing")
        positions = tuple(sorted(set(groups)))
        group_of = {pos: g for pos, g in zip(range(1, n + 1), groups)}
    else:
        positions = tuple(range(1, n + 1))
        group_of = {pos: pos for pos in range(1, n + 1)}
    col = {g: c for c, g in enumerate(positions)}

    fact = [math.factorial(k) for k in range(n + 1)]
    weight = [0.0] * (n + 1)
    for s in range(1, n + 1):
        weight[s] = fact[s - 1] * fact[n - s] / (fact[n - 1] * fact[n])

    subsets = list(all_subsets(n))
    terms: list[list[list[float]]] = [
        [[] for _ in positions] for _ in range(n)
    ]
    for sigma in all_permutations(n):
        table = {s: game.evaluate(s, sigma) for s in subsets}
        for s in subsets:
            if not s:
                continue
            w = weight[len(s)]
            v_with = table[s]
            for i in s:
                delta = v_with - table[s - {i}]
                c = col[group_of[sigma.position_of(i)]]
                terms[i - 1][c].append(w * delta)
    values = np.array(
        [[math.fsum(cell) for cell in row] for row in terms]
    )
    return AttributionMatrix(values=values, positions=positions)


def exact_attribution(game: OrderedGame, groups: Sequence[int] | None = None) -> AttributionResult:
    m = exact_matrix(game, groups=groups)
    from .perms import identity

    return AttributionResult(
        vi=value_importance(m),
        pi=position_importance(m),
        gamma=m,
        meta={
            "estimator": "exact",
            "n": game.n,
            "game": game.descriptor,
            "baseline": float(game.evaluate(frozenset(), identity(game.n))),
        },
    )
