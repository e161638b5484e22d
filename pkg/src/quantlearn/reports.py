"""Zero-shot evaluation, baselines, and analysis reports.

All reports are deterministic functions of (model, suite, scorer config).
CSV outputs use ``repr`` float formatting so re-parsing a report file
reproduces the in-memory values exactly. Per-task evaluation fans out over
a thread pool capped by the ``QUANTLEARN_THREADS`` environment variable
(default: machine cores); results are assembled in task order.
"""

from __future__ import annotations

import csv
import io
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy import stats

from .entailment import ScorerConfig
from .errors import QuantLearnError
from .explanations import ComplexityDescriptor, all_complexities, render_explanation
from .model import (
    AttentionNet,
    FiniteDifferenceReport,
    ModelState,
    _forward_scores,
    _pair_feature_array,
    finite_difference_check,
    pair_score_array,
    task_static,
)
from .quantifiers import (
    QUANTIFIER_TABLE,
    QUANTIFIERS,
    QuantifierLexicon,
    predefined_lexicon,
    random_lexicon,
    reference_relations,
)
from .taskgen import ExampleCounts, Task, TaskSuite, generate_suite
from .training import EpochRecord, TrainHistory, dataset_accuracy

BASELINE_NAMES = ("exent", "majority")

# Satisfaction tolerance for nominally-equal quantifier pairs; half the
# smallest gap between distinct reference values.
EQUAL_RELATION_TOLERANCE = 0.025

ATTENTION_BUCKET_WIDTH = 4


def _max_workers() -> int:
    env = os.environ.get("QUANTLEARN_THREADS", "")
    if env.strip():
        return max(1, int(env))
    return os.cpu_count() or 1


# --------------------------------------------------------------------------
# Baseline pipelines
# --------------------------------------------------------------------------

def _strip_quantifiers(task: Task) -> Task:
    """Task whose explanations ignore quantifiers, so the pipeline treats
    every rule at probability exactly 1."""
    stripped = []
    for exp in task.explanations:
        bare = replace(exp, quantifier=None)
        stripped.append(replace(bare, source_text=render_explanation(bare)))
    return replace(task, explanations=tuple(stripped))


def exent_accuracy(task: Task, scorer: ScorerConfig) -> tuple[float, int]:
    """Mean-aggregation pipeline with all quantifier probabilities at 1."""
    model = ModelState(lexicon=predefined_lexicon(), attention=None)
    return dataset_accuracy(model, _strip_quantifiers(task), task.test, scorer)


def majority_accuracy(task: Task) -> float:
    """Accuracy of always predicting the most frequent training label."""
    counts = {label: 0 for label in task.labels}
    for example in task.train:
        counts[example.label] += 1
    prediction = max(task.labels, key=lambda l: counts[l])
    return float(np.mean([e.label == prediction for e in task.test]))


# --------------------------------------------------------------------------
# Zero-shot evaluation
# --------------------------------------------------------------------------

@dataclass
class TaskResult:
    task: str
    complexity: ComplexityDescriptor
    n_test: int
    accuracy: float
    ties: int
    exent_accuracy: float
    majority_accuracy: float

    @property
    def delta_exent(self) -> float:
        return self.accuracy - self.exent_accuracy

    @property
    def delta_majority(self) -> float:
        return self.accuracy - self.majority_accuracy


@dataclass
class ComplexityResult:
    complexity: ComplexityDescriptor
    n_tasks: int
    accuracy: float
    exent_accuracy: float
    majority_accuracy: float


@dataclass
class EvalReport:
    tasks: list[TaskResult]
    complexities: list[ComplexityResult]
    mean_accuracy: float
    mean_exent_accuracy: float
    mean_majority_accuracy: float
    seeds: dict = field(default_factory=dict)


def _aggregate_report(results: list[TaskResult], seeds: dict) -> EvalReport:
    by_descriptor: dict[ComplexityDescriptor, list[TaskResult]] = {}
    for r in results:
        by_descriptor.setdefault(r.complexity, []).append(r)
    complexities = [
        ComplexityResult(
            complexity=d,
            n_tasks=len(rs),
            accuracy=float(np.mean([r.accuracy for r in rs])),
            exent_accuracy=float(np.mean([r.exent_accuracy for r in rs])),
            majority_accuracy=float(np.mean([r.majority_accuracy for r in rs])),
        )
        for d, rs in sorted(by_descriptor.items(), key=lambda kv: kv[0].key())
    ]
    return EvalReport(
        tasks=results,
        complexities=complexities,
        mean_accuracy=float(np.mean([r.accuracy for r in results])),
        mean_exent_accuracy=float(np.mean([r.exent_accuracy for r in results])),
        mean_majority_accuracy=float(np.mean([r.majority_accuracy for r in results])),
        seeds=seeds,
    )


def evaluate_zero_shot(
    model: ModelState, suite: TaskSuite, scorer_config: ScorerConfig
) -> EvalReport:
    """Accuracy of the model on every unseen task's test split, with
    reference baselines evaluated alongside for the delta columns."""
    unseen = suite.unseen_tasks()
    if not unseen:
        raise QuantLearnError("the suite has no unseen tasks to evaluate")

    def evaluate(task: Task) -> TaskResult:
        accuracy, ties = dataset_accuracy(model, task, task.test, scorer_config)
        exent_acc, _ = exent_accuracy(task, scorer_config)
        return TaskResult(
            task=task.name,
            complexity=task.complexity,
            n_test=len(task.test),
            accuracy=accuracy,
            ties=ties,
            exent_accuracy=exent_acc,
            majority_accuracy=majority_accuracy(task),
        )

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        results = list(pool.map(evaluate, unseen))
    seeds = {"suite_seed": suite.seed, "split_seed": suite.split_seed}
    return _aggregate_report(results, seeds)


def run_baseline(
    name: str, suite: TaskSuite, scorer_config: ScorerConfig
) -> EvalReport:
    """Evaluate a reference pipeline on the unseen tasks.

    ``exent``: mean aggregation with all quantifier probabilities forced to
    1 (no trained parameters under the clean oracle). ``majority``: predict
    each task's most frequent training label.
    """
    if name not in BASELINE_NAMES:
        raise QuantLearnError(f"unknown baseline {name!r}; expected one of {BASELINE_NAMES}")
    unseen = suite.unseen_tasks()
    if not unseen:
        raise QuantLearnError("the suite has no unseen tasks to evaluate")

    def evaluate(task: Task) -> TaskResult:
        exent_acc, exent_ties = exent_accuracy(task, scorer_config)
        majority_acc = majority_accuracy(task)
        accuracy, ties = (exent_acc, exent_ties) if name == "exent" else (majority_acc, 0)
        return TaskResult(
            task=task.name,
            complexity=task.complexity,
            n_test=len(task.test),
            accuracy=accuracy,
            ties=ties,
            exent_accuracy=exent_acc,
            majority_accuracy=majority_acc,
        )

    with ThreadPoolExecutor(max_workers=_max_workers()) as pool:
        results = list(pool.map(evaluate, unseen))
    seeds = {"suite_seed": suite.seed, "split_seed": suite.split_seed, "baseline": name}
    return _aggregate_report(results, seeds)


# --------------------------------------------------------------------------
# Attention analysis
# --------------------------------------------------------------------------

@dataclass
class WeightStat:
    mean: float
    count: int


@dataclass
class AttentionReport:
    buckets: dict[str, WeightStat]              # token-length bucket -> stat
    quantified: WeightStat
    unquantified: WeightStat
    per_quantifier: dict[str, WeightStat]


def attention_report(
    model: ModelState, suite: TaskSuite, scorer_config: ScorerConfig
) -> AttentionReport:
    """Mean attention weight by explanation length, quantifier presence,
    and quantifier identity, over all unseen (example, explanation) pairs."""
    if model.attention is None:
        raise QuantLearnError("attention report requires a model with attention enabled")
    unseen = suite.unseen_tasks()
    if not unseen:
        raise QuantLearnError("the suite has no unseen tasks to analyze")
    sums: dict[str, float] = {}
    counts: dict[str, int] = {}

    def add(key: str, total: float, n: int) -> None:
        sums[key] = sums.get(key, 0.0) + total
        counts[key] = counts.get(key, 0) + n

    for task in unseen:
        static = task_static(task)
        scores = pair_score_array(task, task.test, scorer_config)
        feats = _pair_feature_array(static, scores)
        weights = _forward_scores(model, static, scores, feats).weights  # (n, m)
        for j, exp in enumerate(task.explanations):
            column = weights[:, j]
            total, n = float(column.sum()), len(column)
            tokens = len(render_explanation(exp).split())
            lo = (tokens // ATTENTION_BUCKET_WIDTH) * ATTENTION_BUCKET_WIDTH
            add(f"bucket:{lo}-{lo + ATTENTION_BUCKET_WIDTH - 1}", total, n)
            add("quantified" if exp.quantifier else "unquantified", total, n)
            if exp.quantifier:
                add(f"quantifier:{exp.quantifier}", total, n)

    def stat(key: str) -> WeightStat:
        n = counts.get(key, 0)
        return WeightStat(mean=sums.get(key, 0.0) / n if n else 0.0, count=n)

    bucket_keys = sorted(
        (k for k in counts if k.startswith("bucket:")),
        key=lambda k: int(k.split(":")[1].split("-")[0]),
    )
    return AttentionReport(
        buckets={k.split(":", 1)[1]: stat(k) for k in bucket_keys},
        quantified=stat("quantified"),
        unquantified=stat("unquantified"),
        per_quantifier={
            q: stat(f"quantifier:{q}") for q in QUANTIFIERS if f"quantifier:{q}" in counts
        },
    )


# --------------------------------------------------------------------------
# Quantifier recovery
# --------------------------------------------------------------------------

@dataclass
class RecoveryRow:
    quantifier: str
    learned: float
    truth: float

    @property
    def abs_error(self) -> float:
        return abs(self.learned - self.truth)


@dataclass
class RecoveryReport:
    rows: list[RecoveryRow]
    spearman: float
    relations_satisfied: float
    n_relations: int


def quantifier_recovery_report(
    lexicon: QuantifierLexicon,
    truth: Mapping[str, float] | QuantifierLexicon | None = None,
    quantifiers: Sequence[str] | None = None,
    equal_tolerance: float = EQUAL_RELATION_TOLERANCE,
) -> RecoveryReport:
    """Learned-vs-generating probabilities, their Spearman rank correlation,
    and the fraction of reference relations the learned values satisfy.

    ``quantifiers`` restricts the report to a subset (e.g. the quantifiers
    actually present in a training suite); default is all 15. Equal
    relations count as satisfied when the learned gap is at most
    ``equal_tolerance``.
    """
    if truth is None:
        truth_map: Mapping[str, float] = QUANTIFIER_TABLE
    elif isinstance(truth, QuantifierLexicon):
        truth_map = truth.probabilities()
    else:
        truth_map = truth
    included = list(quantifiers) if quantifiers is not None else list(QUANTIFIERS)
    learned = lexicon.probabilities()
    rows = [RecoveryRow(q, learned[q], float(truth_map[q])) for q in included]

    if len(rows) >= 2:
        result = stats.spearmanr([r.truth for r in rows], [r.learned for r in rows])
        spearman = float(result.statistic)
    else:
        spearman = float("nan")

    satisfied = total = 0
    included_set = set(included)
    for rel in reference_relations():
        if rel.stronger not in included_set or rel.weaker_or_equal not in included_set:
            continue
        total += 1
        gap = learned[rel.stronger] - learned[rel.weaker_or_equal]
        if rel.kind == "strictly-greater":
            satisfied += gap > 0
        else:
            satisfied += abs(gap) <= equal_tolerance
    return RecoveryReport(
        rows=rows,
        spearman=spearman,
        relations_satisfied=satisfied / total if total else float("nan"),
        n_relations=total,
    )


# --------------------------------------------------------------------------
# Gradient-check sweep
# --------------------------------------------------------------------------

def _sweep_suite(seed: int) -> TaskSuite:
    descriptors = [
        d for d in all_complexities()
        if d.structure in ("simple", "single-junction")
        and d.negation in ("none", "label")
    ]
    counts = ExampleCounts(train=6, validation=2, test=2)
    suite = generate_suite(1, seed, counts, predefined_lexicon(), complexities=descriptors)
    return suite


def run_gradient_sweep(
    seed: int = 7, step: float = 1e-5, tolerance: float = 1e-4
) -> list[tuple[str, FiniteDifferenceReport]]:
    """Finite-difference verification over a seeded grid of model modes:
    {mean, attention} x {lambda 0, 10} x {frozen, unfrozen}, plus a
    zero-initialized attention net and the complement-split variant."""
    suite = _sweep_suite(seed)
    scorer = ScorerConfig()
    batch = []
    for task in suite.tasks[:6]:
        batch.append((task.train[0], task))
        batch.append((task.train[1], task))

    configurations: list[tuple[str, ModelState]] = []
    index = 0
    for aggregation in ("mean", "attention"):
        for lam in (0.0, 10.0):
            for frozen in (False, True):
                lexicon = random_lexicon(seed + index)
                if frozen:
                    lexicon = lexicon.freeze()
                attention = (
                    AttentionNet.random(seed + 100 + index, hidden=8)
                    if aggregation == "attention"
                    else None
                )
                relations = tuple(reference_relations()) if lam > 0 else ()
                model = ModelState(
                    lexicon=lexicon, attention=attention,
                    lambda_rank=lam, relations=relations,
                )
                name = f"{aggregation},lambda={lam:g},{'frozen' if frozen else 'unfrozen'}"
                configurations.append((name, model))
                index += 1
    configurations.append(
        ("attention-zero-init,lambda=10,unfrozen",
         ModelState(
             lexicon=random_lexicon(seed + 50),
             attention=AttentionNet.zeros(hidden=8),
             lambda_rank=10.0,
             relations=tuple(reference_relations()),
         )),
    )
    configurations.append(
        ("mean,complement-split,lambda=0,unfrozen",
         ModelState(lexicon=random_lexicon(seed + 51), complement_split=True)),
    )

    results = []
    for name, model in configurations:
        report = finite_difference_check(model, batch, scorer, step=step, tolerance=tolerance)
        results.append((name, report))
    return results


# --------------------------------------------------------------------------
# CSV serialization (repr floats; re-parsing reproduces values exactly)
# --------------------------------------------------------------------------

def _write_csv(path: str | Path | None, header: list[str], rows: list[list]) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    text = buffer.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def eval_tasks_csv(report: EvalReport, path: str | Path | None = None) -> str:
    header = ["task", "classes", "negation", "structure", "quantified", "n_test",
              "accuracy", "ties", "exent_accuracy", "majority_accuracy",
              "delta_exent", "delta_majority"]
    rows = [
        [r.task, r.complexity.classes, r.complexity.negation, r.complexity.structure,
         int(r.complexity.quantified), r.n_test, r.accuracy, r.ties,
         r.exent_accuracy, r.majority_accuracy, r.delta_exent, r.delta_majority]
        for r in report.tasks
    ]
    return _write_csv(path, header, rows)


def eval_complexities_csv(report: EvalReport, path: str | Path | None = None) -> str:
    header = ["classes", "negation", "structure", "quantified", "n_tasks",
              "accuracy", "exent_accuracy", "majority_accuracy"]
    rows = [
        [c.complexity.classes, c.complexity.negation, c.complexity.structure,
         int(c.complexity.quantified), c.n_tasks, c.accuracy,
         c.exent_accuracy, c.majority_accuracy]
        for c in report.complexities
    ]
    return _write_csv(path, header, rows)


def read_eval_tasks_csv(path: str | Path) -> list[TaskResult]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            rows.append(
                TaskResult(
                    task=rec["task"],
                    complexity=ComplexityDescriptor(
                        rec["classes"], rec["negation"], rec["structure"],
                        bool(int(rec["quantified"])),
                    ),
                    n_test=int(rec["n_test"]),
                    accuracy=float(rec["accuracy"]),
                    ties=int(rec["ties"]),
                    exent_accuracy=float(rec["exent_accuracy"]),
                    majority_accuracy=float(rec["majority_accuracy"]),
                )
            )
    return rows


def attention_csv(report: AttentionReport, path: str | Path | None = None) -> str:
    header = ["kind", "key", "mean_weight", "count"]
    rows = [["bucket", k, s.mean, s.count] for k, s in report.buckets.items()]
    rows.append(["group", "quantified", report.quantified.mean, report.quantified.count])
    rows.append(["group", "unquantified", report.unquantified.mean, report.unquantified.count])
    rows.extend(["quantifier", q, s.mean, s.count] for q, s in report.per_quantifier.items())
    return _write_csv(path, header, rows)


def recovery_csv(report: RecoveryReport, path: str | Path | None = None) -> str:
    header = ["quantifier", "learned", "truth", "abs_error"]
    rows = [[r.quantifier, r.learned, r.truth, r.abs_error] for r in report.rows]
    return _write_csv(path, header, rows)


def lexicon_csv(lexicon: QuantifierLexicon, path: str | Path | None = None) -> str:
    header = ["quantifier", "probability", "raw", "frozen"]
    probs = lexicon.probabilities()
    rows = [
        [q, probs[q], float(lexicon.raw[i]), int(lexicon.frozen)]
        for i, q in enumerate(QUANTIFIERS)
    ]
    return _write_csv(path, header, rows)


def history_csv(history: TrainHistory, path: str | Path | None = None) -> str:
    header = ["epoch", "ce", "rank", "total", "val_acc"]
    rows = [
        [rec.epoch, rec.ce, rec.rank, rec.total, rec.validation_accuracy]
        for rec in history.epochs
    ]
    return _write_csv(path, header, rows)


def read_history_csv(path: str | Path) -> list[EpochRecord]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        return [
            EpochRecord(
                epoch=int(rec["epoch"]),
                ce=float(rec["ce"]),
                rank=float(rec["rank"]),
                total=float(rec["total"]),
                validation_accuracy=float(rec["val_acc"]),
                lexicon_raw=np.zeros(0),
            )
            for rec in reader
        ]
