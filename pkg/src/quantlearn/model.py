"""Classification head over entailment scores with learnable quantifiers.

Per (example, explanation) pair the head assigns one logit per class label:
with quantifier probability ``p`` (1 when no quantifier), target label
``l_exp``, scores ``(s_e, s_n, s_c)`` and ``k`` labels::

    z[l_exp] = p * s_e + (1 - p) * s_c + s_n / k
    z[l]     = p * s_c + (1 - p) * s_e + s_n / k     (all other l)

Label-negated explanations exchange the roles of ``s_e`` and ``s_c``.
Logits are aggregated across a task's explanations by arithmetic mean or by
softmax attention over symbolic pair features, then softmaxed into a label
distribution. All gradients are computed analytically; a central
finite-difference checker validates them parameter by parameter.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .entailment import NliScores, ScorerConfig, nli_scores
from .errors import ConfigError, QuantLearnError
from .explanations import Explanation, explanation_features
from .quantifiers import (
    OrdinalRelation,
    QUANTIFIERS,
    QuantifierLexicon,
    RAW_CAP,
    probability,
    ranking_loss,
)
from .taskgen import Example, Task

ATTENTION_INPUT_WIDTH = 24
DEFAULT_HIDDEN = 16
ATTENTION_INIT_RANGE = 0.1


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=axis, keepdims=True)


def log_softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = x - np.max(x, axis=axis, keepdims=True)
    return shifted - np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))


@dataclass
class AttentionNet:
    """Two-layer scoring network: ``score = w2 . tanh(f @ w1 + b1) + b2``."""

    w1: np.ndarray  # (24, hidden)
    b1: np.ndarray  # (hidden,)
    w2: np.ndarray  # (hidden,)
    b2: np.ndarray  # (1,)

    def __post_init__(self):
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.b1 = np.asarray(self.b1, dtype=np.float64)
        self.w2 = np.asarray(self.w2, dtype=np.float64)
        self.b2 = np.asarray(self.b2, dtype=np.float64).reshape(1)
        if self.w1.shape[0] != ATTENTION_INPUT_WIDTH or self.w1.shape[1] < 1:
            raise QuantLearnError(f"w1 must be ({ATTENTION_INPUT_WIDTH}, h>=1)")
        h = self.w1.shape[1]
        if self.b1.shape != (h,) or self.w2.shape != (h,):
            raise QuantLearnError("attention parameter shapes are inconsistent")

    @property
    def hidden(self) -> int:
        return self.w1.shape[1]

    @classmethod
    def random(cls, seed: int, hidden: int = DEFAULT_HIDDEN) -> "AttentionNet":
        rng = np.random.default_rng(seed)
        r = ATTENTION_INIT_RANGE
        return cls(
            w1=rng.uniform(-r, r, size=(ATTENTION_INPUT_WIDTH, hidden)),
            b1=rng.uniform(-r, r, size=hidden),
            w2=rng.uniform(-r, r, size=hidden),
            b2=rng.uniform(-r, r, size=1),
        )

    @classmethod
    def zeros(cls, hidden: int = DEFAULT_HIDDEN) -> "AttentionNet":
        return cls(
            w1=np.zeros((ATTENTION_INPUT_WIDTH, hidden)),
            b1=np.zeros(hidden),
            w2=np.zeros(hidden),
            b2=np.zeros(1),
        )

    def copy(self) -> "AttentionNet":
        return AttentionNet(self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy())

    def forward(self, feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Raw scores and hidden activations for features (..., 24)."""
        hidden = np.tanh(feats @ self.w1 + self.b1)
        return hidden @ self.w2 + self.b2[0], hidden

    def to_json(self) -> dict:
        return {
            "hidden": self.hidden,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "AttentionNet":
        return cls(
            w1=np.array(obj["w1"], dtype=np.float64),
            b1=np.array(obj["b1"], dtype=np.float64),
            w2=np.array(obj["w2"], dtype=np.float64),
            b2=np.array(obj["b2"], dtype=np.float64),
        )


@dataclass
class ModelState:
    """Lexicon + optional attention network + loss configuration.

    ``attention is None`` selects mean aggregation. ``relations`` feed the
    ranking term of the total loss, weighted by ``lambda_rank``.
    """

    lexicon: QuantifierLexicon
    attention: AttentionNet | None = None
    lambda_rank: float = 0.0
    relations: tuple[OrdinalRelation, ...] = ()
    complement_split: bool = False

    def __post_init__(self):
        if self.lambda_rank < 0:
            raise QuantLearnError("lambda_rank must be >= 0")

    def copy(self) -> "ModelState":
        return ModelState(
            lexicon=self.lexicon.with_raw(self.lexicon.raw),
            attention=self.attention.copy() if self.attention else None,
            lambda_rank=self.lambda_rank,
            relations=self.relations,
            complement_split=self.complement_split,
        )


@dataclass
class Gradients:
    """Analytic gradients of the total loss, mirroring ModelState."""

    lexicon_raw: np.ndarray
    attention: "AttentionGradients | None"


@dataclass
class AttentionGradients:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray


# --------------------------------------------------------------------------
# Logit assignment and aggregation
# --------------------------------------------------------------------------

def class_logits(
    scores: NliScores,
    exp: Explanation,
    lexicon: QuantifierLexicon,
    labels: Sequence[str],
    complement_split: bool = False,
    neutral_term: bool = True,
) -> np.ndarray:
    """Per-label logits for one example-explanation pair."""
    if exp.label not in labels:
        raise QuantLearnError(f"label {exp.label!r} is not among the task labels")
    p = probability(lexicon, exp.quantifier) if exp.quantifier is not None else 1.0
    k = len(labels)
    eff_e, eff_c = (scores.s_c, scores.s_e) if exp.label_negated else (scores.s_e, scores.s_c)
    share = (k - 1) if complement_split else 1
    z = np.full(k, p * eff_c + (1.0 - p) * eff_e / share, dtype=np.float64)
    z[list(labels).index(exp.label)] = p * eff_e + (1.0 - p) * eff_c
    if neutral_term:
        z += scores.s_n / k
    return z


def aggregate_mean(logit_list: Sequence[np.ndarray]) -> np.ndarray:
    """Elementwise arithmetic mean of per-explanation logits."""
    if len(logit_list) == 0:
        raise QuantLearnError("cannot aggregate an empty logit list")
    return np.mean(np.stack(logit_list), axis=0)


def attention_weights(feature_list: Sequence[np.ndarray], net: AttentionNet) -> np.ndarray:
    """Softmax-normalized attention over pair feature vectors."""
    if len(feature_list) == 0:
        raise QuantLearnError("cannot attend over an empty feature list")
    raw, _ = net.forward(np.stack(feature_list))
    return softmax(raw)


def aggregate_attention(
    logit_list: Sequence[np.ndarray], weights: np.ndarray
) -> np.ndarray:
    """Attention-weighted sum of per-explanation logits."""
    if len(logit_list) != len(weights):
        raise QuantLearnError("logit list and weights have different lengths")
    return np.einsum("m,mk->k", np.asarray(weights, dtype=np.float64), np.stack(logit_list))


# --------------------------------------------------------------------------
# Vectorized task pipeline (single code path for predict, losses, training)
# --------------------------------------------------------------------------

@dataclass
class TaskStatic:
    """Per-task constants reused across examples."""

    k: int
    target_idx: np.ndarray      # (m,)
    negated: np.ndarray         # (m,) bool
    quant_idx: np.ndarray       # (m,) lexicon index, -1 when no quantifier
    exp_features: np.ndarray    # (m, 21)


def task_static(task: Task) -> TaskStatic:
    if len(task.explanations) == 0:
        raise QuantLearnError(f"task {task.name} has no explanations")
    labels = list(task.labels)
    lex_names = list(QUANTIFIERS)
    return TaskStatic(
        k=len(labels),
        target_idx=np.array([labels.index(e.label) for e in task.explanations]),
        negated=np.array([e.label_negated for e in task.explanations]),
        quant_idx=np.array(
            [lex_names.index(e.quantifier) if e.quantifier else -1 for e in task.explanations]
        ),
        exp_features=np.stack([explanation_features(e) for e in task.explanations]),
    )


def pair_score_array(
    task: Task, examples: Sequence[Example], config: ScorerConfig
) -> np.ndarray:
    """NLI scores for every (example, explanation) pair, shape (n, m, 3)."""
    return np.array(
        [
            [nli_scores(exp, ex, config).as_array() for exp in task.explanations]
            for ex in examples
        ],
        dtype=np.float64,
    )


@dataclass
class _Forward:
    p: np.ndarray        # (m,) quantifier probabilities in effect
    z: np.ndarray        # (b, m, k) per-pair logits
    dz_dp: np.ndarray    # (b, m, k)
    weights: np.ndarray  # (b, m) aggregation weights
    hidden: np.ndarray | None  # (b, m, h) attention activations
    agg: np.ndarray      # (b, k) aggregated logits
    probs: np.ndarray    # (b, k)


def _forward_scores(
    model: ModelState,
    static: TaskStatic,
    scores: np.ndarray,
    feats: np.ndarray | None,
    neutral_term: bool = True,
) -> _Forward:
    b, m, _ = scores.shape
    k = static.k
    p_all = model.lexicon.probability_vector()
    p = np.where(static.quant_idx >= 0, p_all[np.maximum(static.quant_idx, 0)], 1.0)

    s_e, s_n, s_c = scores[..., 0], scores[..., 1], scores[..., 2]
    neg = static.negated
    eff_e = np.where(neg, s_c, s_e)
    eff_c = np.where(neg, s_e, s_c)
    share = (k - 1) if model.complement_split else 1

    z = np.broadcast_to((p * eff_c + (1.0 - p) * eff_e / share)[..., None], (b, m, k)).copy()
    dz_dp = np.broadcast_to((eff_c - eff_e / share)[..., None], (b, m, k)).copy()
    rows = np.arange(m)
    z[:, rows, static.target_idx] = p * eff_e + (1.0 - p) * eff_c
    dz_dp[:, rows, static.target_idx] = eff_e - eff_c
    if neutral_term:
        z += (s_n / k)[..., None]

    if model.attention is not None:
        raw, hidden = model.attention.forward(feats)
        weights = softmax(raw, axis=-1)
    else:
        hidden = None
        weights = np.full((b, m), 1.0 / m)

    agg = np.einsum("bm,bmk->bk", weights, z)
    return _Forward(p, z, dz_dp, weights, hidden, agg, softmax(agg, axis=-1))


def _backward_scores(
    model: ModelState,
    static: TaskStatic,
    fw: _Forward,
    feats: np.ndarray | None,
    gold: np.ndarray,
) -> tuple[np.ndarray, AttentionGradients | None]:
    """Summed (not averaged) cross-entropy gradients over the batch."""
    b, m, _ = fw.z.shape
    d_agg = fw.probs.copy()
    d_agg[np.arange(b), gold] -= 1.0  # (b, k)

    lex_grad = np.zeros(len(QUANTIFIERS))
    if not model.lexicon.frozen:
        dp = fw.weights * np.einsum("bk,bmk->bm", d_agg, fw.dz_dp)  # (b, m)
        p_all = model.lexicon.probability_vector()
        sig_grad = p_all * (1.0 - p_all) * (np.abs(model.lexicon.raw) < RAW_CAP)
        has_q = static.quant_idx >= 0
        per_exp = dp.sum(axis=0)  # (m,)
        np.add.at(lex_grad, static.quant_idx[has_q], per_exp[has_q])
        lex_grad *= sig_grad

    att_grads = None
    if model.attention is not None:
        d_weights = np.einsum("bk,bmk->bm", d_agg, fw.z)
        inner = np.sum(fw.weights * d_weights, axis=1, keepdims=True)
        d_raw = fw.weights * (d_weights - inner)  # (b, m)
        d_hidden = d_raw[..., None] * model.attention.w2  # (b, m, h)
        d_pre = d_hidden * (1.0 - fw.hidden**2)
        att_grads = AttentionGradients(
            w1=np.einsum("bmi,bmh->ih", feats, d_pre),
            b1=d_pre.sum(axis=(0, 1)),
            w2=(d_raw[..., None] * fw.hidden).sum(axis=(0, 1)),
            b2=np.array([d_raw.sum()]),
        )
    return lex_grad, att_grads


def _pair_feature_array(
    static: TaskStatic, scores: np.ndarray
) -> np.ndarray:
    """Width-24 attention features: explanation features + NLI scores."""
    b = scores.shape[0]
    exp_part = np.broadcast_to(static.exp_features, (b,) + static.exp_features.shape)
    return np.concatenate([exp_part, scores], axis=-1)


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------

def predict(
    example: Example,
    task: Task,
    model: ModelState,
    scorer_config: ScorerConfig,
    neutral_term: bool = True,
) -> np.ndarray:
    """Label distribution for one example under the full pipeline."""
    static = task_static(task)
    scores = pair_score_array(task, [example], scorer_config)
    feats = _pair_feature_array(static, scores) if model.attention is not None else None
    fw = _forward_scores(model, static, scores, feats, neutral_term=neutral_term)
    return fw.probs[0]


Batch = Sequence[tuple[Example, Task]]


def ce_loss(model: ModelState, batch: Batch, scorer_config: ScorerConfig) -> float:
    """Mean negative log-probability of the gold labels."""
    if len(batch) == 0:
        raise QuantLearnError("cannot compute a loss on an empty batch")
    total = 0.0
    for example, task in batch:
        static = task_static(task)
        scores = pair_score_array(task, [example], scorer_config)
        feats = _pair_feature_array(static, scores) if model.attention is not None else None
        fw = _forward_scores(model, static, scores, feats)
        gold = list(task.labels).index(example.label)
        total -= log_softmax(fw.agg, axis=-1)[0, gold]
    return float(total / len(batch))


def total_loss(model: ModelState, batch: Batch, scorer_config: ScorerConfig) -> float:
    """Cross-entropy plus ``lambda_rank`` times the ordinal ranking loss."""
    loss = ce_loss(model, batch, scorer_config)
    if model.relations and model.lambda_rank > 0:
        rank, _ = ranking_loss(model.lexicon, model.relations)
        loss += model.lambda_rank * rank
    return loss


def gradients(model: ModelState, batch: Batch, scorer_config: ScorerConfig) -> Gradients:
    """Analytic gradients of ``total_loss`` w.r.t. every trainable parameter."""
    if len(batch) == 0:
        raise QuantLearnError("cannot compute gradients on an empty batch")
    lex_grad = np.zeros(len(QUANTIFIERS))
    att_grads = None
    if model.attention is not None:
        h = model.attention.hidden
        att_grads = AttentionGradients(
            w1=np.zeros((ATTENTION_INPUT_WIDTH, h)), b1=np.zeros(h),
            w2=np.zeros(h), b2=np.zeros(1),
        )
    for example, task in batch:
        static = task_static(task)
        scores = pair_score_array(task, [example], scorer_config)
        feats = _pair_feature_array(static, scores) if model.attention is not None else None
        fw = _forward_scores(model, static, scores, feats)
        gold = np.array([list(task.labels).index(example.label)])
        lg, ag = _backward_scores(model, static, fw, feats, gold)
        lex_grad += lg
        if ag is not None:
            att_grads.w1 += ag.w1
            att_grads.b1 += ag.b1
            att_grads.w2 += ag.w2
            att_grads.b2 += ag.b2
    lex_grad /= len(batch)
    if att_grads is not None:
        att_grads.w1 /= len(batch)
        att_grads.b1 /= len(batch)
        att_grads.w2 /= len(batch)
        att_grads.b2 /= len(batch)
    if model.relations and model.lambda_rank > 0 and not model.lexicon.frozen:
        _, rank_grad = ranking_loss(model.lexicon, model.relations)
        lex_grad += model.lambda_rank * rank_grad
    if model.lexicon.frozen:
        lex_grad[:] = 0.0
    return Gradients(lexicon_raw=lex_grad, attention=att_grads)


# --------------------------------------------------------------------------
# Finite-difference verification
# --------------------------------------------------------------------------

@dataclass
class FiniteDifferenceReport:
    parameter_names: list[str]
    analytic: np.ndarray
    numeric: np.ndarray
    relative_errors: np.ndarray
    max_relative_error: float
    tolerance: float
    step: float
    passed: bool


def _trainable_slots(model: ModelState) -> list[tuple[str, np.ndarray, tuple]]:
    """(name, owning array, index) for every trainable scalar."""
    slots: list[tuple[str, np.ndarray, tuple]] = []
    if not model.lexicon.frozen:
        for i, q in enumerate(QUANTIFIERS):
            slots.append((f"lexicon.{q}", model.lexicon.raw, (i,)))
    if model.attention is not None:
        net = model.attention
        for name, arr in (("w1", net.w1), ("b1", net.b1), ("w2", net.w2), ("b2", net.b2)):
            for idx in np.ndindex(arr.shape):
                slots.append((f"attention.{name}{list(idx)}", arr, idx))
    return slots


def _gradient_for_slot(grads: Gradients, name: str, idx: tuple) -> float:
    if name.startswith("lexicon."):
        return float(grads.lexicon_raw[idx])
    field_name = name.split(".")[1].split("[")[0]
    return float(getattr(grads.attention, field_name)[idx])


def finite_difference_check(
    model: ModelState,
    batch: Batch,
    scorer_config: ScorerConfig,
    step: float = 1e-5,
    tolerance: float = 1e-4,
) -> FiniteDifferenceReport:
    """Compare analytic gradients with central finite differences.

    Relative error per parameter is |a - n| / max(|a|, |n|), treated as 0
    when the absolute difference is below 1e-9 (both sides numerically zero).
    """
    if step <= 0:
        raise QuantLearnError("finite-difference step must be positive")
    analytic_struct = gradients(model, batch, scorer_config)
    probe = model.copy()
    slots = _trainable_slots(probe)
    names, analytic, numeric = [], [], []
    for name, arr, idx in slots:
        base = arr[idx]
        arr[idx] = base + step
        up = total_loss(probe, batch, scorer_config)
        arr[idx] = base - step
        down = total_loss(probe, batch, scorer_config)
        arr[idx] = base
        names.append(name)
        numeric.append((up - down) / (2 * step))
        analytic.append(_gradient_for_slot(analytic_struct, name, idx))
    analytic_arr = np.array(analytic)
    numeric_arr = np.array(numeric)
    diff = np.abs(analytic_arr - numeric_arr)
    denom = np.maximum(np.abs(analytic_arr), np.abs(numeric_arr))
    rel = np.where(diff < 1e-9, 0.0, diff / np.maximum(denom, 1e-300))
    max_rel = float(rel.max()) if len(rel) else 0.0
    return FiniteDifferenceReport(
        parameter_names=names,
        analytic=analytic_arr,
        numeric=numeric_arr,
        relative_errors=rel,
        max_relative_error=max_rel,
        tolerance=tolerance,
        step=step,
        passed=max_rel < tolerance,
    )


# --------------------------------------------------------------------------
# Checkpoints
# --------------------------------------------------------------------------

def checkpoint_to_json(model: ModelState, meta: Mapping | None = None) -> dict:
    return {
        "format": "quantlearn-checkpoint/1",
        "lexicon": model.lexicon.to_json(),
        "attention": model.attention.to_json() if model.attention else None,
        "lambda_rank": model.lambda_rank,
        "complement_split": model.complement_split,
        "relations": [
            {"stronger": r.stronger, "weaker_or_equal": r.weaker_or_equal, "kind": r.kind}
            for r in model.relations
        ],
        "meta": dict(meta or {}),
    }


def checkpoint_from_json(obj: Mapping) -> tuple[ModelState, dict]:
    if obj.get("format") != "quantlearn-checkpoint/1":
        raise ConfigError("unrecognized checkpoint format")
    model = ModelState(
        lexicon=QuantifierLexicon.from_json(obj["lexicon"]),
        attention=AttentionNet.from_json(obj["attention"]) if obj["attention"] else None,
        lambda_rank=float(obj["lambda_rank"]),
        relations=tuple(
            OrdinalRelation(r["stronger"], r["weaker_or_equal"], r["kind"])
            for r in obj["relations"]
        ),
        complement_split=bool(obj["complement_split"]),
    )
    return model, dict(obj.get("meta", {}))


def save_checkpoint(model: ModelState, path: str | Path, meta: Mapping | None = None) -> None:
    Path(path).write_text(
        json.dumps(checkpoint_to_json(model, meta), sort_keys=True, indent=1) + "\n"
    )


def load_checkpoint(path: str | Path) -> tuple[ModelState, dict]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return checkpoint_from_json(json.loads(path.read_text()))
