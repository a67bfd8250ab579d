"""Model adapters: callables mapping a batch of token sequences to one
scalar per sequence for a selected class.

Two adapters ship with the server: a hash-echo model for protocol
conformance tests, and a synthetic token scorer mirroring the client
library's built-in model from the same JSON config format (implemented
here from scratch so wire-level agreement is a real cross-check).
"""
from __future__ import annotations

import hashlib
import json
import math
from typing import Sequence


def _token_str(token) -> str:
    if isinstance(token, (list, tuple)):
        return ",".join(repr(float(x)) for x in token)
    return str(token)


def echo_adapter(sequences: Sequence[Sequence], class_index: int) -> list[float]:
    """Deterministic pseudo-model: each sequence maps to a float in [0, 1)
    derived from a SHA-256 of its tokens and the class index.  Identical
    sequences always score identically, so dedup behavior is observable."""
    out = []
    for seq in sequences:
        text = "|".join(_token_str(t) for t in seq) + f"#{class_index}"
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        out.append(int.from_bytes(digest[:8], "big") / 2.0**64)
    return out


class SyntheticMirror:
    """Re-implementation of the synthetic token scorer.

    Each token contributes base + slope * (position - center) where center
    is (length + 1) / 2; the total is optionally squashed by a sigmoid.
    Class 1 is the raw output, class 0 its complement.
    """

    def __init__(self, config: dict):
        self.token_values = {
            t: (float(a), float(b)) for t, (a, b) in config["token_values"].items()
        }
        self.nonlinearity = config.get("nonlinearity", "linear")
        if self.nonlinearity not in ("linear", "sigmoid"):
            raise ValueError(f"unknown nonlinearity {self.nonlinearity!r}")
        self.sequence_length = int(config.get("sequence_length", 10))
        self.mask_token = config.get("mask_token", "[MASK]")
        self.token_values.setdefault(self.mask_token, (0.0, 0.0))

    @classmethod
    def from_config_file(cls, path: str) -> "SyntheticMirror":
        with open(path) as fh:
            return cls(json.load(fh))

    def score(self, tokens: Sequence[str]) -> float:
        center = (len(tokens) + 1) / 2.0
        total = 0.0
        for pos, token in enumerate(tokens, start=1):
            if token not in self.token_values:
                raise ValueError(f"token {token!r} not in model alphabet")
            base, slope = self.token_values[token]
            total += base + slope * (pos - center)
        if self.nonlinearity == "sigmoid":
            return 1.0 / (1.0 + math.exp(-total))
        return total

    def __call__(self, sequences: Sequence[Sequence[str]], class_index: int) -> list[float]:
        if class_index not in (0, 1):
            raise ValueError(f"class_index must be 0 or 1, got {class_index}")
        out = []
        for seq in sequences:
            p = self.score(seq)
            if class_index == 1:
                out.append(p)
            else:
                out.append(1.0 - p if self.nonlinearity == "sigmoid" else -p)
        return out
