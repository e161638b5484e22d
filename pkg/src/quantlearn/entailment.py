"""Deterministic entailment oracle for (example, explanation) pairs.

Scores only the explanation's condition — quantifier and label semantics are
applied downstream when logits are assigned. The oracle can be blunted
(``sharpness``) and corrupted (``noise_rate``); corruption is keyed by
content hash so a given pair sees the same decision on every call.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import QuantLearnError
from .explanations import (
    Explanation,
    Truth,
    evaluate_condition,
    explanation_features,
    render_explanation,
)


@dataclass(frozen=True)
class NliScores:
    """Entailment / neutral / contradiction simplex point."""

    s_e: float
    s_n: float
    s_c: float

    def __post_init__(self):
        for v in (self.s_e, self.s_n, self.s_c):
            if not 0.0 <= v <= 1.0:
                raise QuantLearnError(f"NLI score {v!r} outside [0, 1]")
        if abs(self.s_e + self.s_n + self.s_c - 1.0) > 1e-12:
            raise QuantLearnError("NLI scores must sum to 1")

    def as_array(self) -> np.ndarray:
        return np.array([self.s_e, self.s_n, self.s_c], dtype=np.float64)


@dataclass(frozen=True)
class ScorerConfig:
    """Oracle knobs: ``sharpness`` smears mass off the indicated vertex,
    ``noise_rate`` swaps entailment and contradiction for a stable subset
    of pairs."""

    sharpness: float = 0.0
    noise_rate: float = 0.0
    noise_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.sharpness < 1.0 / 3.0:
            raise QuantLearnError("sharpness must lie in [0, 1/3)")
        if not 0.0 <= self.noise_rate < 1.0:
            raise QuantLearnError("noise_rate must lie in [0, 1)")

    def to_json(self) -> dict:
        return {
            "epsilon": self.sharpness,
            "noise_rate": self.noise_rate,
            "noise_seed": self.noise_seed,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ScorerConfig":
        return cls(
            sharpness=float(obj.get("epsilon", 0.0)),
            noise_rate=float(obj.get("noise_rate", 0.0)),
            noise_seed=int(obj.get("noise_seed", 0)),
        )


def _attributes(example) -> Mapping:
    return example.attributes if hasattr(example, "attributes") else example


def _swap_decision(exp_text: str, attributes: Mapping, config: ScorerConfig) -> bool:
    """Stable per-pair corruption decision via keyed hashing."""
    if config.noise_rate == 0.0:
        return False
    h = hashlib.blake2b(digest_size=8)
    h.update(str(config.noise_seed).encode())
    h.update(b"\x00")
    h.update(exp_text.encode())
    for key in sorted(attributes):
        h.update(b"\x00" + str(key).encode() + b"\x01" + repr(attributes[key]).encode())
    draw = int.from_bytes(h.digest(), "big") / 2.0**64
    return draw < config.noise_rate


def nli_scores(exp: Explanation, example, config: ScorerConfig) -> NliScores:
    """Score the pair from the condition's Kleene truth value.

    TRUE maps to (1-eps, eps/2, eps/2), FALSE to (eps/2, eps/2, 1-eps),
    UNKNOWN to (eps/2, 1-eps, eps/2); the corrupted subset of pairs has
    s_e and s_c swapped.
    """
    attributes = _attributes(example)
    truth = evaluate_condition(exp.condition, attributes)
    eps = config.sharpness
    lo, hi = eps / 2.0, 1.0 - eps
    if truth == Truth.TRUE:
        s_e, s_n, s_c = hi, lo, lo
    elif truth == Truth.FALSE:
        s_e, s_n, s_c = lo, lo, hi
    else:
        s_e, s_n, s_c = lo, hi, lo
    if _swap_decision(render_explanation(exp), attributes, config):
        s_e, s_c = s_c, s_e
    return NliScores(s_e, s_n, s_c)


PAIR_FEATURE_WIDTH = 21 + 3


def pair_features(exp: Explanation, example, config: ScorerConfig) -> np.ndarray:
    """Width-24 attention input: explanation features plus the NLI scores."""
    scores = nli_scores(exp, example, config)
    return np.concatenate([explanation_features(exp), scores.as_array()])
