"""Multi-task trainer: sequential task cycling, gradient accumulation,
AdamW with separate parameter groups, curricula, and quantifier freezing.

Each optimization batch draws ``batch_size`` examples from one seen task,
cycling tasks in suite order; gradients are accumulated over
``grad_accumulation`` batches before one optimizer application. The task
cycle and the accumulation window both continue across epoch boundaries.
Lexicon raws use ``lr_quant`` and receive no weight decay (decay would bias
probabilities toward 0.5); attention parameters use ``lr_model`` with
decoupled decay. After every epoch the model is scored on the seen tasks'
validation splits and the checkpoint with the best (first-best on ties)
validation accuracy is returned.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .entailment import ScorerConfig
from .errors import ConfigError, QuantLearnError
from .model import (
    AttentionNet,
    ModelState,
    TaskStatic,
    _backward_scores,
    _forward_scores,
    _pair_feature_array,
    pair_score_array,
    task_static,
)
from .quantifiers import (
    QuantifierLexicon,
    predefined_lexicon,
    random_lexicon,
    ranking_loss,
    reference_relations,
)
from .taskgen import Example, Task, TaskSuite, filter_suite

INIT_MODES = ("predefined", "random", "ordinal")
AGGREGATION_MODES = ("attention", "mean")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 20
    batches_per_epoch: int = 100
    batch_size: int = 2
    grad_accumulation: int = 8
    lr_model: float = 1e-5
    lr_quant: float = 1e-2
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 42
    lambda_rank: float = 10.0
    init_mode: str = "predefined"
    aggregation: str = "attention"
    attention_hidden: int = 16
    complement_split: bool = False
    scorer: ScorerConfig = ScorerConfig()

    def __post_init__(self):
        for name in ("epochs", "batches_per_epoch", "batch_size", "grad_accumulation"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.lr_model < 0 or self.lr_quant < 0:
            raise ConfigError("learning rates must be >= 0")
        if self.init_mode not in INIT_MODES:
            raise ConfigError(f"init_mode must be one of {INIT_MODES}")
        if self.aggregation not in AGGREGATION_MODES:
            raise ConfigError(f"aggregation must be one of {AGGREGATION_MODES}")
        if self.lambda_rank < 0:
            raise ConfigError("lambda_rank must be >= 0")

    def to_json(self) -> dict:
        return {
            "epochs": self.epochs,
            "batches_per_epoch": self.batches_per_epoch,
            "batch_size": self.batch_size,
            "grad_accumulation": self.grad_accumulation,
            "lr_model": self.lr_model,
            "lr_quant": self.lr_quant,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "adam_eps": self.adam_eps,
            "weight_decay": self.weight_decay,
            "seed": self.seed,
            "lambda_rank": self.lambda_rank,
            "init_mode": self.init_mode,
            "aggregation": self.aggregation,
            "attention_hidden": self.attention_hidden,
            "complement_split": self.complement_split,
            "scorer": self.scorer.to_json(),
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TrainConfig":
        kwargs = dict(obj)
        scorer = kwargs.pop("scorer", {})
        known = {k: v for k, v in kwargs.items() if k in cls.__dataclass_fields__}
        unknown = set(kwargs) - set(known)
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(scorer=ScorerConfig.from_json(scorer), **known)

    def hash(self) -> str:
        payload = json.dumps(self.to_json(), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


def _derive(seed: int, *key: int) -> int:
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return int(ss.generate_state(1, np.uint64)[0])


def init_model(config: TrainConfig) -> ModelState:
    """Fresh model per the configured initialization regime.

    ``predefined`` starts from the reference table, ``random`` from a seeded
    uniform draw, ``ordinal`` from a random draw plus the full reference
    relation set weighted by ``lambda_rank``.
    """
    if config.init_mode == "predefined":
        lexicon, relations, lam = predefined_lexicon(), (), 0.0
    elif config.init_mode == "random":
        lexicon, relations, lam = random_lexicon(_derive(config.seed, 0)), (), 0.0
    else:
        lexicon = random_lexicon(_derive(config.seed, 0))
        relations = tuple(reference_relations())
        lam = config.lambda_rank
    attention = None
    if config.aggregation == "attention":
        attention = AttentionNet.random(_derive(config.seed, 1), config.attention_hidden)
    return ModelState(
        lexicon=lexicon,
        attention=attention,
        lambda_rank=lam,
        relations=relations,
        complement_split=config.complement_split,
    )


# --------------------------------------------------------------------------
# AdamW with two parameter groups
# --------------------------------------------------------------------------

@dataclass
class AdamWState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def like(cls, params: Mapping[str, np.ndarray]) -> "AdamWState":
        return cls(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
        )


def optimizer_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    moments: AdamWState,
    config: TrainConfig,
) -> tuple[dict[str, np.ndarray], AdamWState]:
    """One decoupled-weight-decay adaptive update with bias correction.

    The ``lexicon`` group uses ``lr_quant`` and no decay; every other group
    uses ``lr_model`` with decay ``weight_decay``. Raises on non-finite
    gradients.
    """
    step = moments.step + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name, p in params.items():
        g = grads[name]
        if not np.all(np.isfinite(g)):
            raise QuantLearnError(f"non-finite gradient for parameter group {name!r}")
        if p.shape != g.shape:
            raise QuantLearnError(f"gradient shape mismatch for {name!r}")
        lr = config.lr_quant if name == "lexicon" else config.lr_model
        decay = 0.0 if name == "lexicon" else config.weight_decay
        m = config.beta1 * moments.m[name] + (1 - config.beta1) * g
        v = config.beta2 * moments.v[name] + (1 - config.beta2) * g * g
        m_hat = m / (1 - config.beta1**step)
        v_hat = v / (1 - config.beta2**step)
        update = p - lr * m_hat / (np.sqrt(v_hat) + config.adam_eps)
        if decay:
            update = update - lr * decay * p
        new_params[name] = update
        new_m[name] = m
        new_v[name] = v
    return new_params, AdamWState(m=new_m, v=new_v, step=step)


def _params_of(model: ModelState) -> dict[str, np.ndarray]:
    params = {"lexicon": model.lexicon.raw.copy()}
    if model.attention is not None:
        params["att.w1"] = model.attention.w1.copy()
        params["att.b1"] = model.attention.b1.copy()
        params["att.w2"] = model.attention.w2.copy()
        params["att.b2"] = model.attention.b2.copy()
    return params


def _apply_params(model: ModelState, params: Mapping[str, np.ndarray]) -> None:
    model.lexicon = model.lexicon.with_raw(params["lexicon"])
    if model.attention is not None:
        model.attention.w1 = params["att.w1"].copy()
        model.attention.b1 = params["att.b1"].copy()
        model.attention.w2 = params["att.w2"].copy()
        model.attention.b2 = params["att.b2"].copy()


# --------------------------------------------------------------------------
# Cached per-task arrays and batched evaluation
# --------------------------------------------------------------------------

@dataclass
class _SplitCache:
    scores: np.ndarray          # (n, m, 3)
    feats: np.ndarray | None    # (n, m, 24)
    gold: np.ndarray            # (n,)


@dataclass
class _TaskCache:
    task: Task
    static: TaskStatic
    train: _SplitCache
    validation: _SplitCache


def _cache_split(
    task: Task, static: TaskStatic, examples: Sequence[Example],
    scorer: ScorerConfig, with_feats: bool,
) -> _SplitCache:
    scores = pair_score_array(task, examples, scorer)
    feats = _pair_feature_array(static, scores) if with_feats else None
    labels = list(task.labels)
    gold = np.array([labels.index(e.label) for e in examples])
    return _SplitCache(scores=scores, feats=feats, gold=gold)


def _build_cache(task: Task, scorer: ScorerConfig, with_feats: bool) -> _TaskCache:
    static = task_static(task)
    return _TaskCache(
        task=task,
        static=static,
        train=_cache_split(task, static, task.train, scorer, with_feats),
        validation=_cache_split(task, static, task.validation, scorer, with_feats),
    )


def split_probabilities(
    model: ModelState, task: Task, examples: Sequence[Example], scorer: ScorerConfig
) -> np.ndarray:
    """Predicted label distributions for a whole example list, shape (n, k)."""
    static = task_static(task)
    scores = pair_score_array(task, examples, scorer)
    feats = _pair_feature_array(static, scores) if model.attention is not None else None
    return _forward_scores(model, static, scores, feats).probs


def accuracy_with_ties(probs: np.ndarray, gold: np.ndarray) -> tuple[float, int]:
    """Argmax accuracy (lowest label index wins ties) and the tie count."""
    predictions = np.argmax(probs, axis=1)
    top = probs[np.arange(len(probs)), predictions]
    ties = int(np.sum(np.sum(probs == top[:, None], axis=1) > 1))
    return float(np.mean(predictions == gold)), ties


def dataset_accuracy(
    model: ModelState, task: Task, examples: Sequence[Example], scorer: ScorerConfig
) -> tuple[float, int]:
    probs = split_probabilities(model, task, examples, scorer)
    labels = list(task.labels)
    gold = np.array([labels.index(e.label) for e in examples])
    return accuracy_with_ties(probs, gold)


def _cached_accuracy(model: ModelState, cache: _TaskCache, split: _SplitCache) -> float:
    fw = _forward_scores(model, cache.static, split.scores, split.feats)
    acc, _ = accuracy_with_ties(fw.probs, split.gold)
    return acc


# --------------------------------------------------------------------------
# History
# --------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    ce: float
    rank: float
    total: float
    validation_accuracy: float
    lexicon_raw: np.ndarray


@dataclass
class StageRecord:
    stage: int
    name: str
    best_epoch: int
    epochs: list[EpochRecord]
    unseen_accuracy_by_stage: dict[str, float] = field(default_factory=dict)


@dataclass
class TrainHistory:
    epochs: list[EpochRecord] = field(default_factory=list)
    best_epoch: int = -1
    stages: list[StageRecord] = field(default_factory=list)


# --------------------------------------------------------------------------
# Multi-task training
# --------------------------------------------------------------------------

def train_multitask(
    suite: TaskSuite,
    config: TrainConfig,
    model_init: ModelState | None = None,
) -> tuple[ModelState, TrainHistory]:
    """Train on the suite's seen tasks; return the best-validation model."""
    seen = suite.seen_tasks()
    if not seen:
        raise QuantLearnError("the suite has no seen tasks to train on")
    model = model_init.copy() if model_init is not None else init_model(config)
    with_feats = model.attention is not None
    caches = [_build_cache(task, config.scorer, with_feats) for task in seen]

    rng = np.random.default_rng(_derive(config.seed, 2))
    params = _params_of(model)
    moments = AdamWState.like(params)
    accum = {k: np.zeros_like(p) for k, p in params.items()}
    accum_count = 0
    task_cycle = itertools.cycle(range(len(caches)))
    use_rank = bool(model.relations) and model.lambda_rank > 0

    history = TrainHistory()
    best_model = model.copy()
    best_val = -1.0
    for epoch in range(config.epochs):
        ce_sum = rank_sum = 0.0
        for _ in range(config.batches_per_epoch):
            cache = caches[next(task_cycle)]
            n = len(cache.train.gold)
            take = min(config.batch_size, n)
            idx = rng.choice(n, size=take, replace=False)
            scores = cache.train.scores[idx]
            feats = cache.train.feats[idx] if cache.train.feats is not None else None
            gold = cache.train.gold[idx]

            fw = _forward_scores(model, cache.static, scores, feats)
            logp = np.log(fw.probs[np.arange(take), gold])
            ce = float(-logp.mean())
            lex_grad, att_grads = _backward_scores(model, cache.static, fw, feats, gold)
            lex_grad = lex_grad / take
            rank_value = 0.0
            if use_rank:
                rank_value, rank_grad = ranking_loss(model.lexicon, model.relations)
                lex_grad = lex_grad + model.lambda_rank * rank_grad
            if model.lexicon.frozen:
                lex_grad = np.zeros_like(lex_grad)
            accum["lexicon"] += lex_grad
            if att_grads is not None:
                accum["att.w1"] += att_grads.w1 / take
                accum["att.b1"] += att_grads.b1 / take
                accum["att.w2"] += att_grads.w2 / take
                accum["att.b2"] += att_grads.b2 / take
            accum_count += 1
            ce_sum += ce
            rank_sum += rank_value

            if accum_count == config.grad_accumulation:
                grads = {k: v / accum_count for k, v in accum.items()}
                params, moments = optimizer_step(params, grads, moments, config)
                if model.lexicon.frozen:
                    params["lexicon"] = model.lexicon.raw.copy()
                _apply_params(model, params)
                accum = {k: np.zeros_like(p) for k, p in params.items()}
                accum_count = 0

        val_acc = float(
            np.mean([_cached_accuracy(model, c, c.validation) for c in caches])
        )
        ce_mean = ce_sum / config.batches_per_epoch
        rank_mean = rank_sum / config.batches_per_epoch
        history.epochs.append(
            EpochRecord(
                epoch=epoch,
                ce=ce_mean,
                rank=rank_mean,
                total=ce_mean + model.lambda_rank * rank_mean if use_rank else ce_mean,
                validation_accuracy=val_acc,
                lexicon_raw=model.lexicon.raw.copy(),
            )
        )
        if val_acc > best_val:
            best_val = val_acc
            best_model = model.copy()
            history.best_epoch = epoch
    return best_model, history


# --------------------------------------------------------------------------
# Curricula
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class StageFilter:
    classes: frozenset[str] | None = None
    negation: frozenset[str] | None = None
    structure: frozenset[str] | None = None

    def matches(self, descriptor) -> bool:
        if self.classes is not None and descriptor.classes not in self.classes:
            return False
        if self.negation is not None and descriptor.negation not in self.negation:
            return False
        if self.structure is not None and descriptor.structure not in self.structure:
            return False
        return True

    def key(self) -> str:
        parts = []
        for axis in ("classes", "negation", "structure"):
            values = getattr(self, axis)
            if values is not None:
                parts.append(f"{axis}={'+'.join(sorted(values))}")
        return ";".join(parts) or "all"


@dataclass(frozen=True)
class Curriculum:
    name: str
    stages: tuple[StageFilter, ...]

    def __post_init__(self):
        if not self.stages:
            raise QuantLearnError("a curriculum needs at least one stage")


CURRICULUM_NAMES = ("classes", "negations", "conjunctions")


def build_curriculum(name: str) -> Curriculum:
    """The three staged schedules: class count, negations, structure."""
    if name == "classes":
        stages = (
            StageFilter(classes=frozenset({"binary"})),
            StageFilter(classes=frozenset({"multiclass"})),
        )
    elif name == "negations":
        stages = (
            StageFilter(negation=frozenset({"none"})),
            StageFilter(negation=frozenset({"clause", "label", "both"})),
        )
    elif name == "conjunctions":
        stages = (
            StageFilter(structure=frozenset({"simple"})),
            StageFilter(structure=frozenset({"single-junction"})),
            StageFilter(structure=frozenset({"nested"})),
        )
    else:
        raise QuantLearnError(f"unknown curriculum: {name!r}")
    return Curriculum(name=name, stages=stages)


def train_curriculum(
    suite: TaskSuite,
    curriculum: Curriculum,
    config: TrainConfig,
    freeze_quantifiers: bool = False,
    pretrained_lexicon: QuantifierLexicon | None = None,
) -> tuple[ModelState, TrainHistory]:
    """Stage-by-stage training, chaining each stage's selected checkpoint.

    With ``freeze_quantifiers`` the lexicon is replaced by
    ``pretrained_lexicon`` and kept frozen throughout. After each stage the
    current checkpoint is scored on every stage's unseen tasks.
    """
    if freeze_quantifiers and pretrained_lexicon is None:
        raise QuantLearnError("freeze_quantifiers requires a pretrained lexicon")
    stage_suites = []
    for stage in curriculum.stages:
        sub = filter_suite(suite, stage.matches)
        if not sub.seen:
            raise QuantLearnError(
                f"curriculum stage {stage.key()!r} matches no seen tasks"
            )
        stage_suites.append(sub)

    model = init_model(config)
    if freeze_quantifiers:
        model.lexicon = pretrained_lexicon.freeze()
    history = TrainHistory()
    for i, (stage, sub) in enumerate(zip(curriculum.stages, stage_suites)):
        model, stage_history = train_multitask(sub, config, model_init=model)
        evals = {}
        for j, other in enumerate(stage_suites):
            unseen = other.unseen_tasks()
            if unseen:
                accs = [
                    dataset_accuracy(model, t, t.test, config.scorer)[0] for t in unseen
                ]
                evals[curriculum.stages[j].key()] = float(np.mean(accs))
        history.stages.append(
            StageRecord(
                stage=i,
                name=stage.key(),
                best_epoch=stage_history.best_epoch,
                epochs=stage_history.epochs,
                unseen_accuracy_by_stage=evals,
            )
        )
    history.epochs = history.stages[-1].epochs
    history.best_epoch = history.stages[-1].best_epoch
    return model, history
