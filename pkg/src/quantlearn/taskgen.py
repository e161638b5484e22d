"""Synthetic task generation across the 48 complexity descriptors.

Each task carries a nonsense-word attribute schema, nonsense labels, one
explanation per decision rule, and examples whose labels are sampled under
the generating quantifier probabilities: when an example satisfies a rule's
condition, it takes the rule's label with probability ``p_quant`` and a
uniformly random other label otherwise (label-negated rules invert this);
when no rule fires on a binary task, the complement label is assigned.
Multiclass rule sets are constructed to be mutually exclusive and exhaustive
over the attribute domain, so exactly one rule fires for every example.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import QuantLearnError
from .explanations import (
    ComplexityDescriptor,
    Comparison,
    ConditionNode,
    Conjunction,
    Disjunction,
    Explanation,
    Leaf,
    Negation,
    RESERVED_WORDS,
    Scalar,
    Truth,
    all_complexities,
    complexity_of,
    condition_attributes,
    evaluate_condition,
    iter_nodes,
    render_explanation,
)
from .quantifiers import QUANTIFIERS, QuantifierLexicon, probability

NESTING_CAP = 3  # junction-nesting levels in generated conditions


# --------------------------------------------------------------------------
# Domains and core data
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class IntDomain:
    lo: int
    hi: int

    @property
    def size(self) -> int:
        return self.hi - self.lo + 1

    def values(self) -> list[int]:
        return list(range(self.lo, self.hi + 1))

    def to_json(self) -> dict:
        return {"kind": "int", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class CategoricalDomain:
    levels: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.levels)

    def values(self) -> list[str]:
        return list(self.levels)

    def to_json(self) -> dict:
        return {"kind": "categorical", "levels": list(self.levels)}


Domain = IntDomain | CategoricalDomain


def _domain_from_json(obj: Mapping) -> Domain:
    if obj["kind"] == "int":
        return IntDomain(int(obj["lo"]), int(obj["hi"]))
    return CategoricalDomain(tuple(obj["levels"]))


@dataclass(frozen=True)
class Example:
    attributes: dict[str, Scalar]
    label: str


@dataclass(frozen=True)
class ExampleCounts:
    train: int = 200
    validation: int = 50
    test: int = 100

    def __post_init__(self):
        if min(self.train, self.validation, self.test) < 1:
            raise QuantLearnError("example counts must all be >= 1")

    @property
    def total(self) -> int:
        return self.train + self.validation + self.test


@dataclass(frozen=True)
class Task:
    name: str
    schema: tuple[tuple[str, Domain], ...]
    labels: tuple[str, ...]
    explanations: tuple[Explanation, ...]
    train: tuple[Example, ...]
    validation: tuple[Example, ...]
    test: tuple[Example, ...]
    complexity: ComplexityDescriptor
    generator_seed: int
    truth: tuple[tuple[str | None, float], ...]  # (quantifier, p_quant) per explanation
    nesting_cap: int = NESTING_CAP


@dataclass(frozen=True)
class TaskSuite:
    tasks: tuple[Task, ...]
    seen: tuple[int, ...]
    unseen: tuple[int, ...]
    seed: int = 0
    counts: ExampleCounts = ExampleCounts()
    multiclass_labels: int = 3
    truth_probabilities: dict[str, float] = field(default_factory=dict)
    split_seed: int | None = None
    unseen_fraction: float | None = None

    def __post_init__(self):
        if set(self.seen) & set(self.unseen):
            raise QuantLearnError("seen and unseen task sets overlap")
        if set(self.seen) | set(self.unseen) != set(range(len(self.tasks))):
            raise QuantLearnError("seen and unseen must cover all tasks")

    def seen_tasks(self) -> list[Task]:
        return [self.tasks[i] for i in self.seen]

    def unseen_tasks(self) -> list[Task]:
        return [self.tasks[i] for i in self.unseen]


# --------------------------------------------------------------------------
# Nonsense vocabulary
# --------------------------------------------------------------------------

_ONSETS = ["b", "bl", "d", "dr", "f", "fl", "g", "gr", "k", "kr", "l", "m",
           "n", "p", "pl", "r", "s", "sk", "t", "tr", "v", "w", "z"]
_VOWELS = ["a", "e", "i", "o", "u"]
_CODAS = ["b", "ck", "d", "g", "k", "l", "m", "n", "p", "r", "t", "x", "z"]


def _pick(rng: np.random.Generator, seq: Sequence):
    return seq[int(rng.integers(len(seq)))]


def _nonsense_word(rng: np.random.Generator, taken: set[str]) -> str:
    while True:
        word = _pick(rng, _ONSETS) + _pick(rng, _VOWELS)
        if rng.random() < 0.3:
            word += _pick(rng, _ONSETS) + _pick(rng, _VOWELS)
        word += _pick(rng, _CODAS)
        if word not in RESERVED_WORDS and word not in taken:
            taken.add(word)
            return word


# --------------------------------------------------------------------------
# Schema construction
# --------------------------------------------------------------------------

def _draw_schema(
    rng: np.random.Generator, taken: set[str], total_examples: int
) -> tuple[tuple[str, Domain], ...]:
    """Schema with 4-8 attributes whose joint space can hold the requested
    number of distinct examples (capacity >= 2x total)."""
    n_attrs = int(rng.integers(4, 9))
    names = [_nonsense_word(rng, taken) for _ in range(n_attrs)]
    domains: list[Domain] = []
    for _ in range(n_attrs):
        if rng.random() < 0.5:
            domains.append(IntDomain(0, 4))
        else:
            size = int(rng.integers(3, 6))
            levels = tuple(_nonsense_word(rng, taken) for _ in range(size))
            domains.append(CategoricalDomain(levels))
    # Partition rules and two-attribute grids need numeric attributes.
    int_slots = [i for i, d in enumerate(domains) if isinstance(d, IntDomain)]
    while len(int_slots) < 2:
        slot = int(rng.integers(n_attrs))
        if slot not in int_slots:
            domains[slot] = IntDomain(0, 4)
            int_slots.append(slot)

    def capacity() -> int:
        return math.prod(d.size for d in domains)

    while capacity() < 2 * total_examples and len(domains) < 8:
        names.append(_nonsense_word(rng, taken))
        domains.append(IntDomain(0, 4))
    widen = [i for i, d in enumerate(domains) if d.size < 5]
    while capacity() < 2 * total_examples and widen:
        domains[widen.pop()] = IntDomain(0, 4)
    if capacity() < 2 * total_examples:
        raise QuantLearnError(
            f"requested {total_examples} distinct examples but schema capacity is {capacity()}"
        )
    return tuple(zip(names, domains))


def _int_attributes(schema) -> list[tuple[str, IntDomain]]:
    return [(a, d) for a, d in schema if isinstance(d, IntDomain)]


# --------------------------------------------------------------------------
# Condition construction
# --------------------------------------------------------------------------

def _complement_leaf(leaf: Leaf) -> Leaf:
    flip = {
        "equal": "not-equal", "not-equal": "equal",
        "less": "greater-or-equal", "greater-or-equal": "less",
        "greater": "less-or-equal", "less-or-equal": "greater",
    }
    cmp = leaf.comparison
    return Leaf(Comparison(cmp.attribute, flip[cmp.operator], cmp.value))


def _inject_clause_negation(node: ConditionNode, rng: np.random.Generator) -> ConditionNode:
    """Replace one leaf (chosen by the rng) with the semantically equivalent
    negation of its complement, so the tree gains exactly one negation node."""
    n_leaves = sum(isinstance(n, Leaf) for n in iter_nodes(node))
    target = int(rng.integers(n_leaves))
    counter = itertools.count()

    def rebuild(n: ConditionNode) -> ConditionNode:
        if isinstance(n, Leaf):
            return Negation(_complement_leaf(n)) if next(counter) == target else n
        if isinstance(n, Negation):
            return Negation(rebuild(n.child))
        children = tuple(rebuild(c) for c in n.children)
        return type(n)(children)

    return rebuild(node)


def _random_leaf(rng: np.random.Generator, attr: str, domain: Domain) -> Leaf:
    if isinstance(domain, CategoricalDomain):
        return Leaf(Comparison(attr, "equal", _pick(rng, domain.levels)))
    lo, hi = domain.lo, domain.hi
    op = _pick(rng, ["equal", "less", "greater", "greater-or-equal", "less-or-equal"])
    if op == "equal":
        value = int(rng.integers(lo, hi + 1))
    elif op in ("less", "greater-or-equal"):
        value = int(rng.integers(lo + 1, hi + 1))
    else:  # greater, less-or-equal: keep the satisfied set nonempty and proper
        value = int(rng.integers(lo, hi))
    return Leaf(Comparison(attr, op, value))


def _condition_rate(node: ConditionNode, schema) -> float:
    """Exact satisfaction rate of a condition under the uniform example
    distribution, by enumeration over the attributes it mentions."""
    mentioned = sorted(condition_attributes(node))
    domains = dict(schema)
    spaces = [domains[a].values() for a in mentioned]
    hits = total = 0
    for combo in itertools.product(*spaces):
        total += 1
        if evaluate_condition(node, dict(zip(mentioned, combo))) == Truth.TRUE:
            hits += 1
    return hits / total if total else 0.0


def _binary_condition(
    rng: np.random.Generator, schema, structure: str
) -> ConditionNode:
    """Condition for a binary task's single rule, resampled toward a
    satisfaction rate that leaves both labels well represented."""
    best, best_gap = None, float("inf")
    for _ in range(32):
        if structure == "simple":
            attr, domain = _pick(rng, list(schema))
            node: ConditionNode = _random_leaf(rng, attr, domain)
        elif structure == "single-junction":
            n = int(rng.integers(2, 4))
            attrs = [list(schema)[i] for i in rng.choice(len(schema), size=n, replace=False)]
            leaves = tuple(_random_leaf(rng, a, d) for a, d in attrs)
            node = Conjunction(leaves) if rng.random() < 0.5 else Disjunction(leaves)
        else:  # nested
            n = int(rng.integers(2, 4))
            attrs = [list(schema)[i] for i in rng.choice(len(schema), size=n, replace=False)]
            inner_leaves = tuple(_random_leaf(rng, a, d) for a, d in attrs[:2])
            inner = Conjunction(inner_leaves) if rng.random() < 0.5 else Disjunction(inner_leaves)
            outer_leaf = _random_leaf(rng, *attrs[-1])
            outer_cls = Disjunction if isinstance(inner, Conjunction) else Conjunction
            node = outer_cls((inner, outer_leaf))
        rate = _condition_rate(node, schema)
        gap = abs(rate - 0.5)
        if 0.15 <= rate <= 0.85:
            return node
        if gap < best_gap:
            best, best_gap = node, gap
    return best


def _partition_bands(rng: np.random.Generator, size: int, parts: int) -> list[tuple[int, int]]:
    """Split [0, size) into ``parts`` contiguous nonempty bands."""
    cuts = sorted(_pick_distinct(rng, range(1, size), parts - 1))
    edges = [0, *cuts, size]
    return [(edges[i], edges[i + 1] - 1) for i in range(parts)]


def _pick_distinct(rng: np.random.Generator, population: Iterable[int], k: int) -> list[int]:
    items = list(population)
    idx = rng.choice(len(items), size=k, replace=False)
    return [items[int(i)] for i in idx]


def _band_junction(attr: str, lo: int, hi: int) -> Conjunction:
    return Conjunction((
        Leaf(Comparison(attr, "greater-or-equal", lo)),
        Leaf(Comparison(attr, "less-or-equal", hi)),
    ))


def _multiclass_conditions(
    rng: np.random.Generator, schema, structure: str, k: int
) -> list[ConditionNode]:
    """Mutually exclusive, exhaustive conditions, one per label, each
    matching the requested structure."""
    ints = _int_attributes(schema)
    attr, domain = ints[int(rng.integers(len(ints)))]
    d = domain.size
    if k > d:
        raise QuantLearnError(f"cannot split a size-{d} domain into {k} classes")

    if structure == "simple":
        conditions: list[ConditionNode] = [
            Leaf(Comparison(attr, "equal", domain.lo + i)) for i in range(k - 1)
        ]
        conditions.append(Leaf(Comparison(attr, "greater", domain.lo + k - 2)))
        return conditions

    if structure == "single-junction":
        bands = _partition_bands(rng, d, k)
        conditions = []
        for lo, hi in bands:
            values = list(range(domain.lo + lo, domain.lo + hi + 1))
            if len(values) >= 2 and rng.random() < 0.5:
                conditions.append(
                    Disjunction(tuple(Leaf(Comparison(attr, "equal", v)) for v in values))
                )
            else:
                conditions.append(_band_junction(attr, values[0], values[-1]))
        return conditions

    # nested: grid of bands on two numeric attributes, cells mapped onto labels
    others = [(a, dom) for a, dom in ints if a != attr]
    battr, bdomain = others[int(rng.integers(len(others)))]
    ka = max(2, math.ceil(k / 2))
    abands = _partition_bands(rng, d, ka)
    mid = int(rng.integers(1, bdomain.size))
    bhalves = [("less", bdomain.lo + mid), ("greater-or-equal", bdomain.lo + mid)]
    cells = [(i, j) for i in range(ka) for j in range(2)]
    order = [cells[int(i)] for i in rng.choice(len(cells), size=len(cells), replace=False)]
    assignment: dict[int, list[tuple[int, int]]] = {i: [] for i in range(k)}
    for idx, cell in enumerate(order):
        assignment[idx % k if idx < k else int(rng.integers(k))].append(cell)

    def cell_condition(cell: tuple[int, int]) -> ConditionNode:
        (alo, ahi), (bop, bval) = abands[cell[0]], bhalves[cell[1]]
        return Conjunction((
            _band_junction(attr, domain.lo + alo, domain.lo + ahi),
            Leaf(Comparison(battr, bop, bval)),
        ))

    conditions = []
    for i in range(k):
        parts = [cell_condition(c) for c in assignment[i]]
        conditions.append(parts[0] if len(parts) == 1 else Disjunction(tuple(parts)))
    return conditions


# --------------------------------------------------------------------------
# Task generation
# --------------------------------------------------------------------------

def _sample_label(
    rng: np.random.Generator,
    labels: tuple[str, ...],
    l_exp: str,
    p_quant: float,
    negated: bool,
) -> str:
    others = [l for l in labels if l != l_exp]
    stated = True if p_quant >= 1.0 else rng.random() < p_quant
    if negated:
        return _pick(rng, others) if stated else l_exp
    return l_exp if stated else _pick(rng, others)


def generate_task(
    complexity: ComplexityDescriptor,
    seed: int,
    counts: ExampleCounts,
    truth_lexicon: QuantifierLexicon,
    quantifier: str | None = None,
    multiclass_labels: int = 3,
) -> Task:
    """Generate one task; a pure function of its arguments.

    ``quantifier``, when given, fixes the first explanation's quantifier
    (suites use this to cycle through the full lexicon); remaining
    quantifiers are drawn from the seeded generator.
    """
    if not 3 <= multiclass_labels <= 5:
        raise QuantLearnError("multiclass tasks use 3-5 labels")
    rng = np.random.default_rng(seed)
    taken: set[str] = set()
    k = 2 if complexity.classes == "binary" else multiclass_labels
    labels = tuple(_nonsense_word(rng, taken) for _ in range(k))
    schema = _draw_schema(rng, taken, counts.total)

    if complexity.classes == "binary":
        conditions = [_binary_condition(rng, schema, complexity.structure)]
        targets = [labels[0]]
    else:
        conditions = _multiclass_conditions(rng, schema, complexity.structure, k)
        targets = list(labels)

    if complexity.negation in ("clause", "both"):
        conditions = [_inject_clause_negation(c, rng) for c in conditions]
    label_negated = complexity.negation in ("label", "both")

    explanations = []
    truth = []
    for i, (condition, target) in enumerate(zip(conditions, targets)):
        if complexity.quantified:
            q = quantifier if (i == 0 and quantifier is not None) else _pick(rng, QUANTIFIERS)
            p = probability(truth_lexicon, q)
        else:
            q, p = None, 1.0
        exp = Explanation(condition, q, target, label_negated)
        exp = replace(exp, source_text=render_explanation(exp))
        if complexity_of(exp, k) != complexity:
            raise QuantLearnError(
                f"generated explanation {render_explanation(exp)!r} has complexity "
                f"{complexity_of(exp, k)}, expected {complexity}"
            )
        explanations.append(exp)
        truth.append((q, p))

    attribute_tuples = _draw_examples(rng, schema, counts.total)
    examples = []
    for attrs in attribute_tuples:
        fired = [
            i for i, exp in enumerate(explanations)
            if evaluate_condition(exp.condition, attrs) == Truth.TRUE
        ]
        if complexity.classes == "multiclass" and len(fired) != 1:
            raise QuantLearnError(
                f"multiclass rules fired {len(fired)} times on {attrs!r}; expected exactly 1"
            )
        if fired:
            i = fired[0]
            q, p = truth[i]
            label = _sample_label(rng, labels, explanations[i].label, p, label_negated)
        else:
            # Binary complement branch: the rule asserts the opposite of its
            # consequent, still hedged by the quantifier (deterministic at p=1).
            q, p = truth[0]
            label = _sample_label(rng, labels, explanations[0].label, p, not label_negated)
        examples.append(Example(attributes=attrs, label=label))

    n1, n2 = counts.train, counts.train + counts.validation
    return Task(
        name=f"task_seed{seed}",
        schema=schema,
        labels=labels,
        explanations=tuple(explanations),
        train=tuple(examples[:n1]),
        validation=tuple(examples[n1:n2]),
        test=tuple(examples[n2:]),
        complexity=complexity,
        generator_seed=seed,
        truth=tuple(truth),
    )


def _draw_examples(
    rng: np.random.Generator, schema, count: int
) -> list[dict[str, Scalar]]:
    """Distinct attribute maps drawn uniformly over the schema domains."""
    seen: set[tuple] = set()
    out: list[dict[str, Scalar]] = []
    while len(out) < count:
        attrs = {a: _pick(rng, d.values()) for a, d in schema}
        key = tuple(attrs.values())
        if key in seen:
            continue
        seen.add(key)
        out.append(attrs)
    return out


# --------------------------------------------------------------------------
# Suites
# --------------------------------------------------------------------------

def _derive_seed(suite_seed: int, d_index: int, t_index: int) -> int:
    ss = np.random.SeedSequence(entropy=suite_seed, spawn_key=(d_index, t_index))
    return int(ss.generate_state(1, np.uint64)[0])


def generate_suite(
    n_tasks_per_complexity: int,
    seed: int,
    counts: ExampleCounts,
    truth_lexicon: QuantifierLexicon,
    complexities: Sequence[ComplexityDescriptor] | None = None,
    multiclass_labels: int = 3,
) -> TaskSuite:
    """Tasks for every requested descriptor (default: all 48), with derived
    per-task seeds and quantifier assignments cycling through the lexicon."""
    if n_tasks_per_complexity < 1:
        raise QuantLearnError("need at least one task per complexity")
    descriptors = list(complexities) if complexities is not None else all_complexities()
    qrng = np.random.default_rng(seed)
    qorder = [QUANTIFIERS[int(i)] for i in qrng.permutation(len(QUANTIFIERS))]
    qcounter = 0
    tasks = []
    for d_index, descriptor in enumerate(descriptors):
        for t_index in range(n_tasks_per_complexity):
            hint = None
            if descriptor.quantified:
                hint = qorder[qcounter % len(qorder)]
                qcounter += 1
            task = generate_task(
                descriptor,
                _derive_seed(seed, d_index, t_index),
                counts,
                truth_lexicon,
                quantifier=hint,
                multiclass_labels=multiclass_labels,
            )
            tasks.append(replace(task, name=f"task_{len(tasks):04d}"))
    return TaskSuite(
        tasks=tuple(tasks),
        seen=tuple(range(len(tasks))),
        unseen=(),
        seed=seed,
        counts=counts,
        multiclass_labels=multiclass_labels,
        truth_probabilities=truth_lexicon.probabilities(),
    )


def split_seen_unseen(suite: TaskSuite, unseen_fraction: float, seed: int) -> TaskSuite:
    """Stratified split: each descriptor contributes ceil(fraction * n)
    unseen tasks, drawn by a seeded permutation within the stratum."""
    if not 0.0 < unseen_fraction < 1.0:
        raise QuantLearnError("unseen_fraction must lie strictly between 0 and 1")
    strata: dict[ComplexityDescriptor, list[int]] = {}
    for i, task in enumerate(suite.tasks):
        strata.setdefault(task.complexity, []).append(i)
    rng = np.random.default_rng(seed)
    seen: list[int] = []
    unseen: list[int] = []
    for descriptor in sorted(strata, key=lambda d: d.key()):
        indices = strata[descriptor]
        if len(indices) < 2:
            raise QuantLearnError(
                f"stratum {descriptor.key()} has {len(indices)} task(s); need at least 2 to split"
            )
        n_unseen = math.ceil(unseen_fraction * len(indices))
        order = [indices[int(i)] for i in rng.permutation(len(indices))]
        unseen.extend(order[:n_unseen])
        seen.extend(order[n_unseen:])
    return replace(
        suite,
        seen=tuple(sorted(seen)),
        unseen=tuple(sorted(unseen)),
        split_seed=seed,
        unseen_fraction=unseen_fraction,
    )


def filter_suite(suite: TaskSuite, keep: Callable[[ComplexityDescriptor], bool]) -> TaskSuite:
    """Sub-suite of the tasks whose descriptor satisfies ``keep``; seen and
    unseen membership is preserved under re-indexing."""
    index_map: dict[int, int] = {}
    tasks = []
    for i, task in enumerate(suite.tasks):
        if keep(task.complexity):
            index_map[i] = len(tasks)
            tasks.append(task)
    return replace(
        suite,
        tasks=tuple(tasks),
        seen=tuple(index_map[i] for i in suite.seen if i in index_map),
        unseen=tuple(index_map[i] for i in suite.unseen if i in index_map),
    )


# --------------------------------------------------------------------------
# Features-as-Text rendering
# --------------------------------------------------------------------------

def fat_render(example: Example | Mapping[str, Scalar]) -> str:
    """Render an example's attributes as text, one sentence per attribute,
    in schema order: ``"head is 1. tail is 0."``"""
    attributes = example.attributes if isinstance(example, Example) else example
    return " ".join(f"{a} is {v}." for a, v in attributes.items())


# --------------------------------------------------------------------------
# Random explanations (round-trip fuzzing)
# --------------------------------------------------------------------------

def random_explanation(rng: np.random.Generator, max_depth: int = NESTING_CAP) -> Explanation:
    """Arbitrary grammar-conformant explanation; exercises every operator,
    value type, negation form, and junction shape up to ``max_depth``."""
    taken: set[str] = set()
    attrs = [_nonsense_word(rng, taken) for _ in range(int(rng.integers(1, 5)))]
    levels = [_nonsense_word(rng, taken) for _ in range(3)]

    def leaf() -> Leaf:
        attr = _pick(rng, attrs)
        op = _pick(rng, ["equal", "not-equal", "greater", "less",
                         "greater-or-equal", "less-or-equal"])
        if op in ("equal", "not-equal") and rng.random() < 0.3:
            value: Scalar = _pick(rng, levels)
        elif rng.random() < 0.25:
            value = round(float(rng.uniform(-5, 5)), 2)
        else:
            value = int(rng.integers(-5, 6))
        return Leaf(Comparison(attr, op, value))

    def node(depth: int) -> ConditionNode:
        roll = rng.random()
        if depth >= max_depth or roll < 0.4:
            built: ConditionNode = leaf()
        else:
            arity = int(rng.integers(2, 4))
            children = tuple(node(depth + 1) for _ in range(arity))
            built = Conjunction(children) if rng.random() < 0.5 else Disjunction(children)
        if rng.random() < 0.25:
            built = Negation(built)
        return built

    quantifier = _pick(rng, QUANTIFIERS) if rng.random() < 0.5 else None
    label = _nonsense_word(rng, taken)
    exp = Explanation(node(1), quantifier, label, label_negated=bool(rng.random() < 0.3))
    return replace(exp, source_text=render_explanation(exp))
