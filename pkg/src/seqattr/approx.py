"""Fixed-sample estimators: permutation sampling and weighted least squares.

Both estimators are deterministic given (game, config, seed) and are
validated against the brute-force layer in :mod:`seqattr.exact`.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .exact import AttributionMatrix, AttributionResult, position_importance, value_importance
from .games import OrderedGame
from .perms import (
    Permutation,
    SeededSampler,
    all_permutations,
    all_subsets,
    identity,
    predecessor_set,
)


class RankDeficiencyError(np.linalg.LinAlgError):
    """Weighted design lost column rank and no ridge fallback was enabled."""

    def __init__(self, columns: Sequence[int]):
        self.columns = tuple(columns)
        super().__init__(
            f"weighted design is rank deficient; dependent columns (1-based): {self.columns}"
        )


@dataclass
class SamplingConfig:
    K: int = 64
    L: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.K < 1 or self.L < 1:
            raise ValueError("K and L must be >= 1")


@dataclass
class LeastSquaresConfig:
    K: int = 256
    L: int = 8
    seed: int = 0
    eliminated_feature: int = 1
    ridge: float = 0.0

    def validate(self, n: int) -> None:
        if self.K < n:
            raise ValueError(f"K={self.K} < n={n}: coalition system underdetermined")
        if self.K * self.L < n:
            raise ValueError("K*L must be >= n for the position system")
        if not 1 <= self.eliminated_feature <= n:
            raise ValueError("eliminated_feature out of range")
        if self.ridge < 0:
            raise ValueError("ridge must be non-negative")


@dataclass
class WeightedLinearSystem:
    design: np.ndarray  # m x p
    weights: np.ndarray  # length m, non-negative
    targets: np.ndarray  # length m

    def __post_init__(self):
        m, _ = self.design.shape
        if len(self.weights) != m or len(self.targets) != m:
            raise ValueError("system dimensions disagree")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("weights must be finite and non-negative")


def mu_weight(n: int, s: int) -> float:
    """Coalition-size weight for the least-squares objective:
    (n-1) / (C(n,s) * s * (n-s)).  Undefined (infinite) at s in {0, n}."""
    if not 1 <= s <= n - 1:
        raise ValueError(f"subset size {s} outside 1..{n - 1}")
    return (n - 1) / (math.comb(n, s) * s * (n - s))


def solve_weighted(system: WeightedLinearSystem, ridge: float = 0.0) -> np.ndarray:
    """Minimize sum_k w_k (design_k . x - target_k)^2 via the normal
    equations.  Rank deficiency raises unless a ridge is supplied."""
    sw = np.sqrt(system.weights)
    a = system.design * sw[:, None]
    b = system.targets * sw
    p = a.shape[1]
    rank = np.linalg.matrix_rank(a)
    if rank < p:
        if ridge > 0.0:
            ata = a.T @ a + ridge * np.eye(p)
            return np.linalg.solve(ata, a.T @ b)
        # identify dependent columns from a pivoted QR
        _, _, piv = scipy.linalg.qr(a, mode="economic", pivoting=True)
        deficient = sorted(int(c) + 1 for c in piv[rank:])
        raise RankDeficiencyError(deficient)
    x, *_ = np.linalg.lstsq(a, b, rcond=None)
    return x


# --- permutation sampling -------------------------------------------------


def sampling_estimate(
    game: OrderedGame, cfg: SamplingConfig, groups: Sequence[int] | None = None
) -> AttributionResult:
    """Monte-Carlo estimate of the full attribution matrix.

    For each feature, L outer permutations fix the landing position and the
    evaluated ordering; K inner permutations draw the coalition as the
    feature's predecessor set (plus the feature itself).  Each matrix cell is
    the mean of the marginal contributions that actually landed in it;
    never-visited cells stay NaN.  ``groups`` switches the conditioning from
    raw landing position to landing group.
    """
    n = game.n
    if groups is not None:
        if len(groups) != n:
            raise ValueError("group map must cover every position")
        positions = tuple(sorted(set(groups)))
        group_of = {pos: g for pos, g in zip(range(1, n + 1), groups)}
    else:
        positions = tuple(range(1, n + 1))
        group_of = {pos: pos for pos in range(1, n + 1)}
    col = {g: c for c, g in enumerate(positions)}
    sampler = SeededSampler(cfg.seed)
    sums = np.zeros((n, len(positions)))
    counts = np.zeros((n, len(positions)), dtype=int)
    cache: dict[tuple[frozenset, tuple[int, ...]], float] = {}

    def ev(s: frozenset, sigma: Permutation) -> float:
        key = (s, sigma.mapping)
        if key not in cache:
            cache[key] = game.evaluate(s, sigma)
        return cache[key]

    for i in range(1, n + 1):
        for _ in range(cfg.L):
            outer = sampler.permutation(n)
            cell = col[group_of[outer.position_of(i)]]
            for _ in range(cfg.K):
                inner = sampler.permutation(n)
                s = predecessor_set(inner, i) | {i}
                delta = ev(s, outer) - ev(s - {i}, outer)
                sums[i - 1, cell] += delta
                counts[i - 1, cell] += 1

    with np.errstate(invalid="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    matrix = AttributionMatrix(values=values, positions=positions)
    return AttributionResult(
        vi=value_importance(matrix),
        pi=position_importance(matrix),
        gamma=matrix,
        meta={
            "estimator": "sampling",
            "K": cfg.K,
            "L": cfg.L,
            "seed": cfg.seed,
            "n": n,
            "game": game.descriptor,
            "model_calls": len(cache),
            "baseline": ev(frozenset(), identity(n)),
        },
    )


# --- weighted least squares ----------------------------------------------


def build_alpha_system(
    game: OrderedGame,
    subsets: Sequence[frozenset],
    perms: Sequence[Permutation],
    baseline: float,
) -> WeightedLinearSystem:
    """Coalition-indicator system.  Row k covers subset S_k; its target is
    the payoff averaged over that subset's permutations, baseline-subtracted.
    ``perms`` has one permutation per (subset, repeat) pair, laid out so that
    row m of the position system uses subset m mod K."""
    n = game.n
    k_count = len(subsets)
    reps = len(perms) // k_count
    design = np.zeros((k_count, n))
    weights = np.empty(k_count)
    targets = np.empty(k_count)
    for k, s in enumerate(subsets):
        for j in s:
            design[k, j - 1] = 1.0
        weights[k] = mu_weight(n, len(s))
        vals = [game.evaluate(s, perms[l * k_count + k]) for l in range(reps)]
        targets[k] = math.fsum(vals) / reps - baseline
    return WeightedLinearSystem(design=design, weights=weights, targets=targets)


def build_beta_system(
    game: OrderedGame,
    subsets: Sequence[frozenset],
    perms: Sequence[Permutation],
    alpha: np.ndarray,
    baseline: float,
) -> WeightedLinearSystem:
    """Centered-position system.  Row m pairs subset (m mod K) with
    permutation m; regressors are the centered landing positions of the
    subset's members, and targets are the payoff residuals left after the
    coalition effects."""
    n = game.n
    k_count = len(subsets)
    m_count = len(perms)
    ell_bar = (n + 1) / 2.0
    design = np.zeros((m_count, n))
    weights = np.empty(m_count)
    targets = np.empty(m_count)
    for m, sigma in enumerate(perms):
        s = subsets[m % k_count]
        for j in s:
            design[m, j - 1] = sigma.position_of(j) - ell_bar
        weights[m] = mu_weight(n, len(s))
        explained = math.fsum(alpha[j - 1] for j in s)
        targets[m] = game.evaluate(s, sigma) - baseline - explained
    return WeightedLinearSystem(design=design, weights=weights, targets=targets)


def _solve_constrained_alpha(
    system: WeightedLinearSystem,
    constraint_total: float,
    eliminated: int,
    ridge: float,
) -> np.ndarray:
    """Solve the coalition system subject to sum(alpha) == constraint_total
    by substituting out one feature, then recovering it."""
    n = system.design.shape[1]
    j = eliminated - 1
    keep = [c for c in range(n) if c != j]
    reduced = system.design[:, keep] - system.design[:, [j]]
    targets = system.targets - system.design[:, j] * constraint_total
    sol = solve_weighted(
        WeightedLinearSystem(design=reduced, weights=system.weights, targets=targets),
        ridge=ridge,
    )
    alpha = np.empty(n)
    alpha[keep] = sol
    alpha[j] = constraint_total - sol.sum()
    return alpha


def _estimate_from_draws(
    game: OrderedGame,
    subsets: Sequence[frozenset],
    perms: Sequence[Permutation],
    grand_perms: Sequence[Permutation],
    eliminated: int,
    ridge: float,
    meta: dict,
) -> AttributionResult:
    n = game.n
    baseline = game.evaluate(frozenset(), identity(n))
    full = frozenset(range(1, n + 1))
    grand_mean = math.fsum(game.evaluate(full, sigma) for sigma in grand_perms) / len(grand_perms)
    constraint_total = grand_mean - baseline

    a_sys = build_alpha_system(game, subsets, perms, baseline)
    alpha = _solve_constrained_alpha(a_sys, constraint_total, eliminated, ridge)
    b_sys = build_beta_system(game, subsets, perms, alpha, baseline)
    beta = solve_weighted(b_sys, ridge=ridge)

    meta = dict(meta)
    meta.update({"n": n, "game": game.descriptor, "baseline": baseline,
                 "constraint_total": constraint_total})
    return AttributionResult(vi=alpha, pi=beta, gamma=None, meta=meta)


def least_squares_estimate(game: OrderedGame, cfg: LeastSquaresConfig) -> AttributionResult:
    """Fixed-sample weighted-least-squares estimate of the value and
    position importances (no matrix)."""
    n = game.n
    cfg.validate(n)
    sampler = SeededSampler(cfg.seed)
    subsets = [sampler.subset(n, exclude_empty=True, exclude_full=True) for _ in range(cfg.K)]
    perms = [sampler.permutation(n) for _ in range(cfg.K * cfg.L)]
    grand_perms = perms[: cfg.L]
    return _estimate_from_draws(
        game,
        subsets,
        perms,
        grand_perms,
        cfg.eliminated_feature,
        cfg.ridge,
        meta={"estimator": "least-squares", "K": cfg.K, "L": cfg.L, "seed": cfg.seed},
    )


def least_squares_exact_limit(
    game: OrderedGame, eliminated_feature: int = 1, ridge: float = 0.0
) -> AttributionResult:
    """Exhaustive-sample limit: every proper non-empty coalition paired with
    every full permutation.  Small n only; used as a theorem-level check."""
    n = game.n
    if n > 5:
        raise ValueError("exhaustive limit enumerates 2^n * n! rows; n <= 5 only")
    subsets = list(all_subsets(n, include_empty=False, include_full=False))
    sigmas = list(all_permutations(n))
    k_count = len(subsets)
    # one full sweep of permutations per subset, row-major per repeat
    perms = [sigma for sigma in sigmas for _ in range(k_count)]
    # reorder so row l*K + k pairs subset k with sigma l
    perms = [sigmas[m // k_count] for m in range(k_count * len(sigmas))]
    return _estimate_from_draws(
        game,
        subsets,
        perms,
        sigmas,
        eliminated_feature,
        ridge,
        meta={"estimator": "least-squares", "K": k_count, "L": len(sigmas), "seed": None,
              "exhaustive": True},
    )
