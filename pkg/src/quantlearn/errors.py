"""Exception hierarchy shared across the package."""


class QuantLearnError(Exception):
    """Base class for all package-specific errors."""


class UnknownQuantifierError(QuantLearnError):
    """A quantifier string is not present in the lexicon."""

    def __init__(self, quantifier: str):
        super().__init__(f"unknown quantifier: {quantifier!r}")
        self.quantifier = quantifier


class ParseError(QuantLearnError):
    """Explanation text does not conform to the grammar.

    ``position`` is the index of the offending token in the token stream.
    """

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at token {position})")
        self.position = position


class EvaluationTypeError(QuantLearnError):
    """An ordering comparison was applied to a non-numeric value."""


class ConfigError(QuantLearnError):
    """A run configuration, checkpoint, or suite file is invalid or inconsistent."""
