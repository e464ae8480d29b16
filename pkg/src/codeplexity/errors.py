"""Exception types shared across the package."""


class CodeplexityError(Exception):
    """Base class for all errors raised by this package."""


class UnterminatedString(CodeplexityError):
    """A string literal opened but never closed."""

    def __init__(self, line: int):
        self.line = line
        super().__init__(f"unterminated string literal starting on line {line}")


class ParseError(CodeplexityError):
    """The program text is not valid syntax for the supported subset."""

    def __init__(self, line: int, expected: str):
        self.line = line
        self.expected = expected
        super().__init__(f"line {line}: {expected}")


class UnsupportedConstruct(CodeplexityError):
    """Strict mode met a construct outside the node taxonomy."""

    def __init__(self, line: int, construct: str):
        self.line = line
        self.construct = construct
        super().__init__(f"line {line}: unsupported construct {construct}")


class MissingFunction(CodeplexityError):
    """The program has no top-level function definition."""


class BudgetExceeded(CodeplexityError):
    """Per-node pattern cap hit during enumeration.

    Carries the deterministically truncated pattern set so callers can keep
    the partial result and flag the truncation instead of losing the program.
    """

    def __init__(self, message: str, patterns):
        self.patterns = patterns
        super().__init__(message)


class EmptyCatalog(CodeplexityError):
    """No pattern survived the minimum-support filter."""


class CatalogMismatch(CodeplexityError):
    """Artifacts built against different catalogs or canonicalization configs."""


class NoLabels(CodeplexityError):
    """No question had a usable outcome entry."""


class NonConvergence(CodeplexityError):
    """The regression solver hit its iteration cap above tolerance."""

    def __init__(self, grad_norm: float, iterations: int):
        self.grad_norm = grad_norm
        self.iterations = iterations
        super().__init__(
            f"solver stopped after {iterations} iterations "
            f"with gradient norm {grad_norm:.3e}"
        )


class DegenerateTable(CodeplexityError):
    """A contingency table with an empty with/without side."""


class TooFewQuestions(CodeplexityError):
    """The alpha fraction selects zero questions."""


class UnknownItem(CodeplexityError):
    """A pairwise comparison names an item that was never registered."""


class SchemaError(CodeplexityError):
    """A scene graph fails validation; ``path`` points at the offending field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}")


class InconsistentActorId(CodeplexityError):
    """One actor id maps to more than one class name."""


class ClientError(CodeplexityError):
    """A generation client failed (transport, timeout, or malformed payload)."""
