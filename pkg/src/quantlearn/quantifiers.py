"""Quantifier lexicon: learnable probabilities and ordinal ranking supervision.

Each quantifier string is bound to an unconstrained real parameter; its
probability is the logistic squashing of that parameter, so plain gradient
steps can never push it out of (0, 1). Ordinal supervision compares pairs of
quantifiers and penalizes order violations with a softplus margin term and
strength mismatches of nominally-equal pairs with a squared difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping

import numpy as np

from .errors import QuantLearnError, UnknownQuantifierError

# Reference probability per quantifier, in canonical lexicon order.
QUANTIFIER_TABLE: dict[str, float] = {
    "always": 0.95,
    "certainly": 0.95,
    "definitely": 0.95,
    "usually": 0.70,
    "normally": 0.70,
    "generally": 0.70,
    "likely": 0.70,
    "typically": 0.70,
    "often": 0.50,
    "sometimes": 0.30,
    "frequently": 0.30,
    "occasionally": 0.20,
    "rarely": 0.10,
    "seldom": 0.10,
    "never": 0.05,
}

QUANTIFIERS: tuple[str, ...] = tuple(QUANTIFIER_TABLE)

# |raw| is clamped here before the logistic so probabilities stay strictly
# inside (0, 1) in float64 (sigmoid(30) = 1 - 9.4e-14).
RAW_CAP = 30.0

RANDOM_INIT_RANGE = 2.0


def _sigmoid(x: np.ndarray | float) -> np.ndarray | float:
    return 1.0 / (1.0 + np.exp(-np.clip(x, -RAW_CAP, RAW_CAP)))


def _logit(p: float) -> float:
    return float(np.log(p / (1.0 - p)))


@dataclass(frozen=True)
class QuantifierLexicon:
    """The 15 quantifier strings and their raw (pre-logistic) parameters.

    Value object: updates produce a new instance (see :meth:`with_raw`).
    When ``frozen`` is set, training treats every raw parameter as constant.
    """

    raw: np.ndarray
    frozen: bool = False
    names: tuple[str, ...] = field(default=QUANTIFIERS, repr=False)

    def __post_init__(self):
        if self.names != QUANTIFIERS:
            raise QuantLearnError("lexicon must contain exactly the 15 known quantifiers")
        arr = np.asarray(self.raw, dtype=np.float64)
        if arr.shape != (len(QUANTIFIERS),):
            raise QuantLearnError(f"raw parameter vector must have shape ({len(QUANTIFIERS)},)")
        object.__setattr__(self, "raw", arr)

    def index(self, quantifier: str) -> int:
        try:
            return self.names.index(quantifier)
        except ValueError:
            raise UnknownQuantifierError(quantifier) from None

    def probabilities(self) -> dict[str, float]:
        p = _sigmoid(self.raw)
        return {q: float(p[i]) for i, q in enumerate(self.names)}

    def probability_vector(self) -> np.ndarray:
        return np.asarray(_sigmoid(self.raw), dtype=np.float64)

    def with_raw(self, raw: np.ndarray) -> "QuantifierLexicon":
        return replace(self, raw=np.asarray(raw, dtype=np.float64).copy())

    def freeze(self) -> "QuantifierLexicon":
        return replace(self, frozen=True)

    def to_json(self) -> dict:
        return {
            "probabilities": self.probabilities(),
            "raw": {q: float(self.raw[i]) for i, q in enumerate(self.names)},
            "frozen": self.frozen,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "QuantifierLexicon":
        raw_map = obj["raw"]
        missing = [q for q in QUANTIFIERS if q not in raw_map]
        if missing:
            raise QuantLearnError(f"lexicon JSON is missing quantifiers: {missing}")
        raw = np.array([float(raw_map[q]) for q in QUANTIFIERS], dtype=np.float64)
        return cls(raw=raw, frozen=bool(obj.get("frozen", False)))


def probability(lexicon: QuantifierLexicon, quantifier: str) -> float:
    """Probability of ``quantifier`` under the lexicon, strictly in (0, 1)."""
    return float(_sigmoid(lexicon.raw[lexicon.index(quantifier)]))


def predefined_lexicon() -> QuantifierLexicon:
    """Lexicon whose probabilities equal the reference table values."""
    raw = np.array([_logit(QUANTIFIER_TABLE[q]) for q in QUANTIFIERS], dtype=np.float64)
    return QuantifierLexicon(raw=raw)


def random_lexicon(seed: int) -> QuantifierLexicon:
    """Lexicon with raw parameters drawn i.i.d. uniform on [-2, 2]."""
    rng = np.random.default_rng(seed)
    raw = rng.uniform(-RANDOM_INIT_RANGE, RANDOM_INIT_RANGE, size=len(QUANTIFIERS))
    return QuantifierLexicon(raw=raw)


@dataclass(frozen=True)
class OrdinalRelation:
    """Relative-strength statement between two quantifiers.

    ``kind`` is ``"strictly-greater"`` (stronger should have the higher
    probability) or ``"equal"`` (both should have the same probability).
    """

    stronger: str
    weaker_or_equal: str
    kind: str

    def __post_init__(self):
        if self.kind not in ("strictly-greater", "equal"):
            raise QuantLearnError(f"unknown relation kind: {self.kind!r}")
        for q in (self.stronger, self.weaker_or_equal):
            if q not in QUANTIFIER_TABLE:
                raise UnknownQuantifierError(q)
        if self.kind == "strictly-greater" and self.stronger == self.weaker_or_equal:
            raise QuantLearnError(f"quantifier {self.stronger!r} cannot strictly outrank itself")


def reference_relations() -> list[OrdinalRelation]:
    """All 105 pairwise relations implied by the reference table.

    Pairs with differing table values yield a strictly-greater relation
    (higher value on the ``stronger`` side); pairs with equal values yield
    an equal relation.
    """
    relations = []
    for i, qi in enumerate(QUANTIFIERS):
        for qj in QUANTIFIERS[i + 1:]:
            vi, vj = QUANTIFIER_TABLE[qi], QUANTIFIER_TABLE[qj]
            if vi == vj:
                relations.append(OrdinalRelation(qi, qj, "equal"))
            elif vi > vj:
                relations.append(OrdinalRelation(qi, qj, "strictly-greater"))
            else:
                relations.append(OrdinalRelation(qj, qi, "strictly-greater"))
    return relations


def ranking_loss(
    lexicon: QuantifierLexicon, relations: Iterable[OrdinalRelation]
) -> tuple[float, np.ndarray]:
    """Ordinal ranking loss and its gradient w.r.t. the raw parameters.

    Strictly-greater pairs contribute ``softplus(p_weaker - p_stronger)``
    (a violated ordering costs more than a satisfied one); equal pairs
    contribute ``(p_i - p_j)**2``. The gradient is chained through the
    logistic squashing and is identically zero for a frozen lexicon.
    """
    p = lexicon.probability_vector()
    grad_p = np.zeros_like(p)
    loss = 0.0
    for rel in relations:
        i = lexicon.index(rel.stronger)
        j = lexicon.index(rel.weaker_or_equal)
        if rel.kind == "strictly-greater":
            margin = p[j] - p[i]
            loss += float(np.logaddexp(0.0, margin))
            s = float(_sigmoid(margin))
            grad_p[j] += s
            grad_p[i] -= s
        else:
            diff = p[i] - p[j]
            loss += diff * diff
            grad_p[i] += 2.0 * diff
            grad_p[j] -= 2.0 * diff
    if lexicon.frozen:
        return loss, np.zeros_like(p)
    # d p / d raw, zero where the clamp is active.
    dp_draw = p * (1.0 - p) * (np.abs(lexicon.raw) < RAW_CAP)
    return loss, grad_p * dp_draw
