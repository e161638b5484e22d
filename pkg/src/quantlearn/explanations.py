"""Explanation grammar: parsing, rendering, evaluation, and classification.

The surface form of an explanation is::

    EXPL := "If " COND ", then " [QUANT " "] ["not "] LABEL
    COND := TERM {(" and " | " or ") TERM}      # one connective per level
    TERM := ["not "] (LEAF | "(" COND ")")
    LEAF := ATTR " " OP " " VALUE
    OP   := "equal to" | "not equal to" | "greater than" | "less than"
          | "greater than or equal to" | "less than or equal to"

Junctions at one level are homogeneous (all-and or all-or); mixing the two
requires parentheses. Conditions are evaluated against attribute maps under
Kleene three-valued logic: a missing attribute makes its leaf unknown.
"""

from __future__ import annotations

import enum
import itertools
import re
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Union

import numpy as np

from .errors import EvaluationTypeError, ParseError, QuantLearnError
from .quantifiers import QUANTIFIER_TABLE, QUANTIFIERS

Scalar = Union[int, float, str]

OPERATORS = ("equal", "not-equal", "greater", "less", "greater-or-equal", "less-or-equal")
ORDERING_OPERATORS = frozenset({"greater", "less", "greater-or-equal", "less-or-equal"})

_OPERATOR_TEXT = {
    "equal": "equal to",
    "not-equal": "not equal to",
    "greater": "greater than",
    "less": "less than",
    "greater-or-equal": "greater than or equal to",
    "less-or-equal": "less than or equal to",
}

# Words that may not be used as attribute names, labels, or categorical values.
RESERVED_WORDS = frozenset(
    {"if", "If", "then", "not", "and", "or", "equal", "to", "greater", "less", "than"}
) | set(QUANTIFIERS)


class Truth(enum.IntEnum):
    """Kleene truth values, ordered FALSE < UNKNOWN < TRUE."""

    FALSE = 0
    UNKNOWN = 1
    TRUE = 2


@dataclass(frozen=True)
class Comparison:
    attribute: str
    operator: str
    value: Scalar

    def __post_init__(self):
        if not self.attribute:
            raise QuantLearnError("comparison attribute must be nonempty")
        if self.operator not in OPERATORS:
            raise QuantLearnError(f"unknown comparison operator: {self.operator!r}")
        if self.operator in ORDERING_OPERATORS and isinstance(self.value, str):
            raise QuantLearnError(
                f"ordering operator {self.operator!r} requires a numeric value, got {self.value!r}"
            )


class ConditionNode:
    """Base class for condition-tree nodes."""

    __slots__ = ()


@dataclass(frozen=True)
class Leaf(ConditionNode):
    comparison: Comparison


@dataclass(frozen=True)
class Negation(ConditionNode):
    child: ConditionNode


@dataclass(frozen=True)
class Conjunction(ConditionNode):
    children: tuple[ConditionNode, ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise QuantLearnError("conjunction needs at least 2 children")


@dataclass(frozen=True)
class Disjunction(ConditionNode):
    children: tuple[ConditionNode, ...]

    def __post_init__(self):
        if len(self.children) < 2:
            raise QuantLearnError("disjunction needs at least 2 children")


@dataclass(frozen=True)
class Explanation:
    condition: ConditionNode
    quantifier: str | None
    label: str
    label_negated: bool
    source_text: str = field(default="", compare=False)

    def __post_init__(self):
        if not self.label:
            raise QuantLearnError("explanation label must be nonempty")
        if self.quantifier is not None and self.quantifier not in QUANTIFIER_TABLE:
            raise QuantLearnError(f"unknown quantifier: {self.quantifier!r}")


# --------------------------------------------------------------------------
# Parsing
# --------------------------------------------------------------------------

_TOKEN_RE = re.compile(r"\(|\)|,|[^\s(),]+")


def _tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text)


class _TokenStream:
    def __init__(self, tokens: list[str]):
        self.tokens = tokens
        self.pos = 0

    def peek(self, ahead: int = 0) -> str | None:
        i = self.pos + ahead
        return self.tokens[i] if i < len(self.tokens) else None

    def next(self) -> str:
        tok = self.peek()
        if tok is None:
            raise ParseError("unexpected end of explanation", self.pos)
        self.pos += 1
        return tok

    def expect(self, token: str) -> None:
        tok = self.next()
        if tok != token:
            raise ParseError(f"expected {token!r}, found {tok!r}", self.pos - 1)


def _parse_value(token: str) -> Scalar:
    try:
        return int(token)
    except ValueError:
        pass
    try:
        return float(token)
    except ValueError:
        pass
    return token


def _parse_leaf(ts: _TokenStream) -> Leaf:
    attribute = ts.next()
    if attribute in RESERVED_WORDS or attribute in "(),":
        raise ParseError(f"expected attribute name, found {attribute!r}", ts.pos - 1)
    word = ts.next()
    if word == "not":
        ts.expect("equal")
        ts.expect("to")
        operator = "not-equal"
    elif word == "equal":
        ts.expect("to")
        operator = "equal"
    elif word in ("greater", "less"):
        ts.expect("than")
        if ts.peek() == "or" and ts.peek(1) == "equal":
            ts.next()
            ts.next()
            ts.expect("to")
            operator = word + "-or-equal"
        else:
            operator = word
    else:
        raise ParseError(f"expected comparison operator, found {word!r}", ts.pos - 1)
    value_token = ts.next()
    if value_token in "(),":
        raise ParseError(f"expected comparison value, found {value_token!r}", ts.pos - 1)
    value = _parse_value(value_token)
    try:
        return Leaf(Comparison(attribute, operator, value))
    except QuantLearnError as exc:
        raise ParseError(str(exc), ts.pos - 1) from None


def _parse_term(ts: _TokenStream) -> ConditionNode:
    if ts.peek() == "not" and ts.peek(1) in ("(",) :
        ts.next()
        return Negation(_parse_group(ts))
    if ts.peek() == "not":
        ts.next()
        return Negation(_parse_leaf(ts))
    if ts.peek() == "(":
        return _parse_group(ts)
    return _parse_leaf(ts)


def _parse_group(ts: _TokenStream) -> ConditionNode:
    ts.expect("(")
    node = _parse_condition(ts)
    ts.expect(")")
    return node


def _parse_condition(ts: _TokenStream) -> ConditionNode:
    terms = [_parse_term(ts)]
    connective = None
    while ts.peek() in ("and", "or"):
        word = ts.next()
        if connective is None:
            connective = word
        elif word != connective:
            raise ParseError(
                f"cannot mix 'and' and 'or' at one level; parenthesize the {word!r} group",
                ts.pos - 1,
            )
        terms.append(_parse_term(ts))
    if connective is None:
        return terms[0]
    cls = Conjunction if connective == "and" else Disjunction
    return cls(tuple(terms))


def parse_explanation(text: str, known_labels: frozenset[str] | set[str]) -> Explanation:
    """Parse an explanation string into its AST.

    Raises :class:`ParseError` on malformed text, an unknown quantifier word
    in the quantifier slot, or a label outside ``known_labels``.
    """
    if not known_labels:
        raise QuantLearnError("known_labels must be nonempty")
    ts = _TokenStream(_tokenize(text))
    ts.expect("If")
    condition = _parse_condition(ts)
    ts.expect(",")
    ts.expect("then")
    rest = ts.tokens[ts.pos:]
    if not rest:
        raise ParseError("missing label after 'then'", ts.pos)
    quantifier = None
    if rest[0] in QUANTIFIER_TABLE:
        quantifier = rest[0]
        rest = rest[1:]
        ts.pos += 1
    elif len(rest) > 1 and rest[0] != "not":
        raise ParseError(f"unknown quantifier word in quantifier slot: {rest[0]!r}", ts.pos)
    label_negated = False
    if rest and rest[0] == "not":
        label_negated = True
        rest = rest[1:]
        ts.pos += 1
    if not rest:
        raise ParseError("missing label after 'then'", ts.pos)
    if len(rest) > 1:
        raise ParseError(f"unexpected trailing tokens: {' '.join(rest[1:])!r}", ts.pos + 1)
    label = rest[0]
    if label not in known_labels:
        raise ParseError(f"label {label!r} is not one of the task labels", ts.pos)
    return Explanation(condition, quantifier, label, label_negated, source_text=text)


# --------------------------------------------------------------------------
# Rendering
# --------------------------------------------------------------------------

def _render_value(value: Scalar) -> str:
    return repr(value) if isinstance(value, float) else str(value)


def _render_node(node: ConditionNode, parenthesize_junction: bool) -> str:
    if isinstance(node, Leaf):
        cmp = node.comparison
        return f"{cmp.attribute} {_OPERATOR_TEXT[cmp.operator]} {_render_value(cmp.value)}"
    if isinstance(node, Negation):
        if isinstance(node.child, Leaf):
            return "not " + _render_node(node.child, False)
        return "not (" + _render_node(node.child, False) + ")"
    word = " and " if isinstance(node, Conjunction) else " or "
    inner = word.join(_render_node(c, True) for c in node.children)
    return f"({inner})" if parenthesize_junction else inner


def render_explanation(exp: Explanation) -> str:
    """Canonical surface form; ``parse_explanation`` inverts it structurally."""
    tail = exp.label
    if exp.label_negated:
        tail = "not " + tail
    if exp.quantifier is not None:
        tail = exp.quantifier + " " + tail
    return f"If {_render_node(exp.condition, False)}, then {tail}"


# --------------------------------------------------------------------------
# Evaluation (Kleene three-valued logic)
# --------------------------------------------------------------------------

def _is_number(value) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _compare(cmp: Comparison, actual: Scalar) -> bool:
    op = cmp.operator
    if op == "equal" or op == "not-equal":
        if _is_number(actual) != _is_number(cmp.value):
            same = False
        else:
            same = actual == cmp.value
        return same if op == "equal" else not same
    if not _is_number(actual):
        raise EvaluationTypeError(
            f"ordering comparison on non-numeric value {actual!r} for attribute {cmp.attribute!r}"
        )
    if op == "greater":
        return actual > cmp.value
    if op == "less":
        return actual < cmp.value
    if op == "greater-or-equal":
        return actual >= cmp.value
    return actual <= cmp.value


def evaluate_condition(node: ConditionNode, attributes: Mapping[str, Scalar]) -> Truth:
    """Evaluate a condition tree against an attribute map.

    A leaf whose attribute is absent evaluates to UNKNOWN; negation flips
    TRUE/FALSE and preserves UNKNOWN; a conjunction is FALSE if any child is
    FALSE, UNKNOWN if none is FALSE but some child is UNKNOWN, else TRUE;
    disjunction dually.
    """
    if isinstance(node, Leaf):
        cmp = node.comparison
        if cmp.attribute not in attributes:
            return Truth.UNKNOWN
        return Truth.TRUE if _compare(cmp, attributes[cmp.attribute]) else Truth.FALSE
    if isinstance(node, Negation):
        value = evaluate_condition(node.child, attributes)
        if value == Truth.UNKNOWN:
            return Truth.UNKNOWN
        return Truth.FALSE if value == Truth.TRUE else Truth.TRUE
    if isinstance(node, Conjunction):
        values = [evaluate_condition(c, attributes) for c in node.children]
        if any(v == Truth.FALSE for v in values):
            return Truth.FALSE
        if any(v == Truth.UNKNOWN for v in values):
            return Truth.UNKNOWN
        return Truth.TRUE
    if isinstance(node, Disjunction):
        values = [evaluate_condition(c, attributes) for c in node.children]
        if any(v == Truth.TRUE for v in values):
            return Truth.TRUE
        if any(v == Truth.UNKNOWN for v in values):
            return Truth.UNKNOWN
        return Truth.FALSE
    raise QuantLearnError(f"unknown condition node: {node!r}")


# --------------------------------------------------------------------------
# Structural inspection
# --------------------------------------------------------------------------

def iter_nodes(node: ConditionNode) -> Iterator[ConditionNode]:
    yield node
    if isinstance(node, Negation):
        yield from iter_nodes(node.child)
    elif isinstance(node, (Conjunction, Disjunction)):
        for child in node.children:
            yield from iter_nodes(child)


def condition_attributes(node: ConditionNode) -> set[str]:
    return {n.comparison.attribute for n in iter_nodes(node) if isinstance(n, Leaf)}


def tree_depth(node: ConditionNode) -> int:
    if isinstance(node, Leaf):
        return 1
    if isinstance(node, Negation):
        return 1 + tree_depth(node.child)
    return 1 + max(tree_depth(c) for c in node.children)


def _junction_count(node: ConditionNode) -> int:
    return sum(1 for n in iter_nodes(node) if isinstance(n, (Conjunction, Disjunction)))


# --------------------------------------------------------------------------
# Complexity descriptors
# --------------------------------------------------------------------------

CLASS_MODES = ("binary", "multiclass")
NEGATION_MODES = ("none", "clause", "label", "both")
STRUCTURE_MODES = ("simple", "single-junction", "nested")


@dataclass(frozen=True)
class ComplexityDescriptor:
    classes: str
    negation: str
    structure: str
    quantified: bool

    def __post_init__(self):
        if self.classes not in CLASS_MODES:
            raise QuantLearnError(f"bad classes mode: {self.classes!r}")
        if self.negation not in NEGATION_MODES:
            raise QuantLearnError(f"bad negation mode: {self.negation!r}")
        if self.structure not in STRUCTURE_MODES:
            raise QuantLearnError(f"bad structure mode: {self.structure!r}")

    def key(self) -> str:
        quant = "quantified" if self.quantified else "plain"
        return f"{self.classes}.{self.negation}.{self.structure}.{quant}"

    def to_json(self) -> dict:
        return {
            "classes": self.classes,
            "negation": self.negation,
            "structure": self.structure,
            "quantified": self.quantified,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "ComplexityDescriptor":
        return cls(obj["classes"], obj["negation"], obj["structure"], bool(obj["quantified"]))


def all_complexities() -> list[ComplexityDescriptor]:
    """The full 48-descriptor cross product, in canonical order."""
    return [
        ComplexityDescriptor(c, n, s, q)
        for c, n, s, q in itertools.product(
            CLASS_MODES, NEGATION_MODES, STRUCTURE_MODES, (False, True)
        )
    ]


def complexity_of(exp: Explanation, n_labels: int) -> ComplexityDescriptor:
    """Classify an explanation along the four complexity axes.

    Structure counts junction topology only: negation wrappers do not change
    it (a negated leaf is still ``simple``).
    """
    if n_labels < 2:
        raise QuantLearnError("a task needs at least 2 labels")
    clause_neg = any(isinstance(n, Negation) for n in iter_nodes(exp.condition))
    if clause_neg and exp.label_negated:
        negation = "both"
    elif clause_neg:
        negation = "clause"
    elif exp.label_negated:
        negation = "label"
    else:
        negation = "none"
    junctions = _junction_count(exp.condition)
    if junctions == 0:
        structure = "simple"
    elif junctions == 1:
        structure = "single-junction"
    else:
        structure = "nested"
    return ComplexityDescriptor(
        classes="binary" if n_labels == 2 else "multiclass",
        negation=negation,
        structure=structure,
        quantified=exp.quantifier is not None,
    )


# --------------------------------------------------------------------------
# Symbolic features
# --------------------------------------------------------------------------

FEATURE_WIDTH = 6 + len(QUANTIFIERS)


def explanation_features(exp: Explanation) -> np.ndarray:
    """Fixed-width symbolic feature vector (width 21).

    Layout: [token_count/32, has_quantifier, has_clause_negation,
    label_negated, has_conjunction, has_disjunction, one-hot(15) over
    quantifier identity (all zeros when no quantifier)].
    """
    nodes = list(iter_nodes(exp.condition))
    tokens = len(render_explanation(exp).split())
    features = np.zeros(FEATURE_WIDTH, dtype=np.float64)
    features[0] = tokens / 32.0
    features[1] = float(exp.quantifier is not None)
    features[2] = float(any(isinstance(n, Negation) for n in nodes))
    features[3] = float(exp.label_negated)
    features[4] = float(any(isinstance(n, Conjunction) for n in nodes))
    features[5] = float(any(isinstance(n, Disjunction) for n in nodes))
    if exp.quantifier is not None:
        features[6 + QUANTIFIERS.index(exp.quantifier)] = 1.0
    return features
