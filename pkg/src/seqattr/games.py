"""Ordered games: a payoff over (coalition, full-sequence permutation) pairs.

Ships two built-in analytic games: a small drawn-items game whose payoff
depends only on item order, and a synthetic token model with per-token
value and position effects.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .perms import Permutation, SeededSampler

Coalition = frozenset


@dataclass
class OrderedGame:
    """Characteristic function over (subset of features, permutation of all
    positions).  ``evaluate(S, sigma)`` must be deterministic and defined for
    the empty coalition (the baseline payoff)."""

    n: int
    evaluate: Callable[[frozenset, Permutation], float]
    descriptor: str = "game"

    def set_game(self, sigma: Permutation | None = None) -> Callable[[frozenset], float]:
        """Classical set-function restriction with the permutation fixed
        (identity by default)."""
        from .perms import identity

        fixed = sigma if sigma is not None else identity(self.n)
        return lambda s: self.evaluate(frozenset(s), fixed)


# --- Drawn-items toy game ------------------------------------------------

HAT = "Hat"
BAG = "Bag"
L_GLOVE = "L-Glove"
R_GLOVE = "R-Glove"
TOY_ALPHABET = (HAT, BAG, L_GLOVE, R_GLOVE)

HAT_VALUE = 3.0
GLOVE_PAIR_VALUE = 2.0


def toy_game_payoff(items: Sequence[str]) -> float:
    """Score a drawn sequence: each Hat after at least one Bag is worth 3;
    each complete L/R glove pair with both gloves after a Bag is worth 2.
    Bags and unpaired gloves are worth nothing."""
    for it in items:
        if it not in TOY_ALPHABET:
            raise ValueError(f"unknown item {it!r}")
    first_bag = None
    for k, it in enumerate(items):
        if it == BAG:
            first_bag = k
            break
    if first_bag is None:
        return 0.0
    kept = items[first_bag + 1 :]
    hats = sum(1 for it in kept if it == HAT)
    left = sum(1 for it in kept if it == L_GLOVE)
    right = sum(1 for it in kept if it == R_GLOVE)
    return HAT_VALUE * hats + GLOVE_PAIR_VALUE * min(left, right)


def toy_ordered_game(items: Sequence[str]) -> OrderedGame:
    """Game on a fixed item sequence: a coalition keeps its items, the
    permutation reorders all positions, and out-of-coalition items are absent
    (deleted, not masked)."""
    if len(items) == 0:
        raise ValueError("item sequence must be non-empty")
    items = tuple(items)
    n = len(items)

    def evaluate(s: frozenset, sigma: Permutation) -> float:
        drawn = [items[f - 1] for f in sigma.mapping if f in s]
        return toy_game_payoff(drawn)

    return OrderedGame(n=n, evaluate=evaluate, descriptor=f"toy[{','.join(items)}]")


FIG3_SAMPLE = (HAT, HAT, HAT, BAG, R_GLOVE, R_GLOVE)


# --- Synthetic token model -----------------------------------------------

SYNTH_ALPHABET = ("A", "B", "C", "D", "Abar", "Bbar", "Cbar")
MASK_TOKEN = "[MASK]"

# Per-token (base value, positional slope).  Positional tokens A/B push the
# output up when placed later, Abar/Bbar push it down; C, D and Cbar carry no
# positional effect.  Magnitudes keep the summed score inside the responsive
# range of the sigmoid for length-10 sequences.
DEFAULT_TOKEN_VALUES: dict[str, tuple[float, float]] = {
    "A": (0.4, 0.12),
    "B": (-0.4, 0.12),
    "Abar": (0.4, -0.12),
    "Bbar": (-0.4, -0.12),
    "C": (0.6, 0.0),
    "D": (-0.6, 0.0),
    "Cbar": (0.0, 0.0),
}

POSITIONAL_TOKENS = ("A", "B", "Abar", "Bbar")
NONPOSITIONAL_TOKENS = ("C", "D", "Cbar")


@dataclass
class SyntheticTokenModel:
    """Token-sequence scorer: each token contributes an affine function of
    its (mean-centered) position; optionally squashed through a sigmoid."""

    token_values: dict[str, tuple[float, float]] = field(
        default_factory=lambda: dict(DEFAULT_TOKEN_VALUES)
    )
    nonlinearity: str = "linear"  # "linear" | "sigmoid"
    sequence_length: int = 10
    mask_token: str = MASK_TOKEN

    def __post_init__(self):
        if self.nonlinearity not in ("linear", "sigmoid"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        self.token_values.setdefault(self.mask_token, (0.0, 0.0))

    @property
    def mean_position(self) -> float:
        return (self.sequence_length + 1) / 2.0

    def token_value(self, token: str, position: int) -> float:
        if token not in self.token_values:
            raise ValueError(f"token {token!r} not in model alphabet")
        a, b = self.token_values[token]
        return a + b * (position - self.mean_position)

    def linear_score(self, tokens: Sequence[str]) -> float:
        if len(tokens) != self.sequence_length:
            raise ValueError(
                f"expected length {self.sequence_length}, got {len(tokens)}"
            )
        return sum(self.token_value(t, k + 1) for k, t in enumerate(tokens))

    def output(self, tokens: Sequence[str]) -> float:
        score = self.linear_score(tokens)
        if self.nonlinearity == "sigmoid":
            return 1.0 / (1.0 + math.exp(-score))
        return score

    def class_output(self, tokens: Sequence[str], class_index: int = 1) -> float:
        """Two-class view: index 1 is the raw output, index 0 its complement
        (negated score in linear mode)."""
        out = self.output(tokens)
        if class_index == 1:
            return out
        if class_index == 0:
            return (1.0 - out) if self.nonlinearity == "sigmoid" else -out
        raise ValueError(f"class_index must be 0 or 1, got {class_index}")

    def batch(self, sequences: Sequence[Sequence[str]], class_index: int = 1) -> list[float]:
        return [self.class_output(seq, class_index) for seq in sequences]

    # --- config round-trip ---

    def to_config(self) -> dict:
        return {
            "token_values": {t: list(v) for t, v in self.token_values.items()},
            "nonlinearity": self.nonlinearity,
            "sequence_length": self.sequence_length,
            "mask_token": self.mask_token,
        }

    @classmethod
    def from_config(cls, cfg: dict) -> "SyntheticTokenModel":
        return cls(
            token_values={t: (float(a), float(b)) for t, (a, b) in cfg["token_values"].items()},
            nonlinearity=cfg.get("nonlinearity", "linear"),
            sequence_length=int(cfg.get("sequence_length", 10)),
            mask_token=cfg.get("mask_token", MASK_TOKEN),
        )

    @classmethod
    def from_config_file(cls, path: str) -> "SyntheticTokenModel":
        with open(path) as fh:
            return cls.from_config(json.load(fh))


def synthetic_model_output(model: SyntheticTokenModel, tokens: Sequence[str]) -> float:
    return model.output(tokens)


def generate_synthetic_dataset(
    sampler: SeededSampler, count: int, model: SyntheticTokenModel
) -> list[tuple[str, ...]]:
    """i.i.d. uniform token sequences over the model's 7-token alphabet."""
    if count < 1:
        raise ValueError("count must be >= 1")
    out = []
    for _ in range(count):
        seq = tuple(sampler.choice(SYNTH_ALPHABET) for _ in range(model.sequence_length))
        out.append(seq)
    return out
