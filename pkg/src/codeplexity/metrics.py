"""Baseline structural complexity scores: lines of code and cyclomatic.

Cyclomatic complexity follows the standard independent-path convention,
counted on the canonical tree so renaming variables or changing literals
never moves the score. The increments are fixed here so results reproduce
without any external tool:

    if +1, elif +1, else +0, for +1, while +1,
    each and/or occurrence +1, ternary +1 (parses as an If node),
    comprehension +1. Opaque statements contribute 0.
"""

from __future__ import annotations

from dataclasses import dataclass

from .astcore import CanonicalAst, strip_noise, walk


@dataclass(frozen=True)
class StructuralScore:
    question_id: str
    loc: int
    cyclomatic: int


def lines_of_code(source: str) -> int:
    """Non-empty line count after comment/blank-line removal."""
    cleaned = strip_noise(source)
    return len(cleaned.splitlines())


_UNIT_INCREMENT = frozenset({"If", "ElifBranch", "For", "While", "Comprehension"})


def cyclomatic(ast: CanonicalAst) -> int:
    total = 1
    for n in walk(ast.root):
        if n.kind in _UNIT_INCREMENT:
            total += 1
        elif n.kind == "BoolOp":
            # ``a and b and c`` is one node but two operator occurrences.
            total += len(n.children) - 1
    return total
