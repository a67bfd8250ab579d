"""Faithfulness metrics for positional attributions.

Three curve families: reorder-by-position-importance curves, permutation-
aware inclusion/exclusion AUC (post-hoc accuracy), and insertion/deletion
AUC (mean predicted-class probability).  The model is read as a binary
probability: the scalar output is P(class 1), its complement P(class 0),
and the predicted class is whichever is more likely on the original input.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gateway import ModelEndpoint, SequenceSample, evaluate_batch
from .perms import SeededSampler

DEFAULT_K_GRID = tuple(round(0.1 * k, 1) for k in range(11))


@dataclass
class EvalCurve:
    fractions: tuple[float, ...]
    scores: tuple[float, ...]
    auc: float

    def __post_init__(self):
        if len(self.fractions) != len(self.scores):
            raise ValueError("fractions and scores disagree in length")
        if any(a >= b for a, b in zip(self.fractions, self.fractions[1:])):
            raise ValueError("fractions must be strictly increasing")

    @classmethod
    def from_points(cls, fractions: Sequence[float], scores: Sequence[float]) -> "EvalCurve":
        fr = tuple(float(f) for f in fractions)
        sc = tuple(float(s) for s in scores)
        return cls(fr, sc, trapezoid_auc(fr, sc))

    def to_dict(self) -> dict:
        return {"fractions": list(self.fractions), "scores": list(self.scores), "auc": self.auc}

    def write_csv(self, path: str) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["fraction", "score"])
            for f, s in zip(self.fractions, self.scores):
                w.writerow([f, s])

    def write_json(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)


def trapezoid_auc(fractions: Sequence[float], scores: Sequence[float]) -> float:
    return float(np.trapezoid(np.asarray(scores), np.asarray(fractions)))


@dataclass
class MetricConfig:
    k_grid: tuple[float, ...] = DEFAULT_K_GRID
    permutations_per_k: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.permutations_per_k < 1:
            raise ValueError("permutations_per_k must be >= 1")
        if any(not 0.0 <= k <= 1.0 for k in self.k_grid):
            raise ValueError("k grid entries must lie in [0, 1]")


def predicted_class(endpoint: ModelEndpoint, tokens: Sequence) -> tuple[int, float]:
    """(predicted class, its probability) on the unperturbed input."""
    p1 = evaluate_batch(endpoint, [tokens], class_index=1)[0]
    return (1, p1) if p1 >= 0.5 else (0, 1.0 - p1)


def _class_prob(p1: float, cls: int) -> float:
    return p1 if cls == 1 else 1.0 - p1


def _select_top(attributions: np.ndarray, count: int, by_magnitude: bool) -> list[int]:
    """0-based indices of the `count` strongest features.  Zero-attribution
    features are never selected; ties break toward the earlier index."""
    keys = np.abs(attributions) if by_magnitude else attributions
    order = sorted(
        (k for k in range(len(attributions)) if attributions[k] != 0.0),
        key=lambda k: (-keys[k], k),
    )
    return order[:count]


def reorder_by_attribution(tokens: Sequence, attributions: Sequence[float], count: int) -> list:
    """Move the `count` largest-magnitude features: negative attributions to
    the front (most negative first), positive to the back (most positive
    last); everything else keeps its relative order in between."""
    attr = np.asarray(attributions, dtype=float)
    selected = set(_select_top(attr, count, by_magnitude=True))
    front = sorted((k for k in selected if attr[k] < 0), key=lambda k: (attr[k], k))
    back = sorted((k for k in selected if attr[k] >= 0), key=lambda k: (attr[k], k))
    middle = [k for k in range(len(tokens)) if k not in selected]
    return [tokens[k] for k in front + middle + back]


def pi_permutation_curve(
    endpoint: ModelEndpoint,
    sample: SequenceSample,
    attributions: Sequence[float],
    cfg: MetricConfig,
) -> EvalCurve:
    """Reorder the top-k% features by their position attributions and track
    the predicted-class probability.  Faithful position attributions should
    push the probability up (features moved where they help the prediction
    most)."""
    n = sample.n
    if len(attributions) != n:
        raise ValueError("attributions length must equal sample length")
    cls, _ = predicted_class(endpoint, sample.tokens)
    sequences = [
        reorder_by_attribution(sample.tokens, attributions, round(k * n))
        for k in cfg.k_grid
    ]
    probs = evaluate_batch(endpoint, sequences, class_index=1)
    scores = [_class_prob(p, cls) for p in probs]
    return EvalCurve.from_points(cfg.k_grid, scores)


def _masked_tokens(sample: SequenceSample, keep: set[int]) -> list:
    baseline = sample.baseline_policy.baseline_token
    return [t if k in keep else baseline for k, t in enumerate(sample.tokens)]


def _retention_sets(
    sample: SequenceSample, attributions: np.ndarray, k: float, mode: str
) -> set[int]:
    """0-based indices kept unmasked at fraction k."""
    n = sample.n
    count = round(k * n)
    selected = set(_select_top(attributions, count, by_magnitude=False))
    if mode in ("inclusion", "insertion"):
        return selected
    if mode in ("exclusion", "deletion"):
        return set(range(n)) - selected
    raise ValueError(f"unknown mode {mode!r}")


def _perturbation_scores(
    endpoint: ModelEndpoint,
    samples: Sequence[SequenceSample],
    attributions: Sequence[Sequence[float]],
    mode: str,
    cfg: MetricConfig,
    score: str,
    permute: bool,
) -> EvalCurve:
    if len(samples) != len(attributions):
        raise ValueError("one attribution vector per sample required")
    sampler = SeededSampler(cfg.seed)
    original_cls = [predicted_class(endpoint, s.tokens)[0] for s in samples]

    scores = []
    for k in cfg.k_grid:
        masked = [
            _masked_tokens(s, _retention_sets(s, np.asarray(a, dtype=float), k, mode))
            for s, a in zip(samples, attributions)
        ]
        per_perm = []
        for _ in range(cfg.permutations_per_k):
            batch = []
            for toks in masked:
                if permute:
                    sigma = sampler.permutation(len(toks))
                    toks = [toks[sigma(pos) - 1] for pos in range(1, len(toks) + 1)]
                batch.append(toks)
            # all samples share a length in practice, but do not assume it
            probs = []
            for toks in batch:
                probs.append(evaluate_batch(endpoint, [toks], class_index=1)[0])
            if score == "accuracy":
                agree = [
                    1.0 if (1 if p >= 0.5 else 0) == c else 0.0
                    for p, c in zip(probs, original_cls)
                ]
                per_perm.append(float(np.mean(agree)))
            else:
                per_perm.append(float(np.mean([_class_prob(p, c) for p, c in zip(probs, original_cls)])))
        scores.append(float(np.mean(per_perm)))
    return EvalCurve.from_points(cfg.k_grid, scores)


def inclusion_exclusion_auc(
    endpoint: ModelEndpoint,
    samples: Sequence[SequenceSample],
    attributions: Sequence[Sequence[float]],
    mode: str,
    cfg: MetricConfig,
    permute: bool = True,
) -> EvalCurve:
    """Post-hoc accuracy as top-attribution features are retained
    (inclusion) or masked (exclusion), with a random reordering step at each
    fraction; ``permute=False`` keeps the identity order (sanity cases)."""
    if mode not in ("inclusion", "exclusion"):
        raise ValueError(f"mode must be inclusion or exclusion, got {mode!r}")
    return _perturbation_scores(endpoint, samples, attributions, mode, cfg, "accuracy", permute)


def insertion_deletion_auc(
    endpoint: ModelEndpoint,
    samples: Sequence[SequenceSample],
    attributions: Sequence[Sequence[float]],
    mode: str,
    cfg: MetricConfig,
    permute: bool = True,
) -> EvalCurve:
    """Mean predicted-class probability as features are progressively added
    (insertion) or removed (deletion)."""
    if mode not in ("insertion", "deletion"):
        raise ValueError(f"mode must be insertion or deletion, got {mode!r}")
    return _perturbation_scores(endpoint, samples, attributions, mode, cfg, "probability", permute)


def retention_complement_check(sample: SequenceSample, attributions, k: float) -> bool:
    """Structural duality: inclusion at k and exclusion at k mask
    complementary index sets of the same selection."""
    a = np.asarray(attributions, dtype=float)
    inc = _retention_sets(sample, a, k, "inclusion")
    exc = _retention_sets(sample, a, k, "exclusion")
    return inc | exc == set(range(sample.n)) and not inc & exc
