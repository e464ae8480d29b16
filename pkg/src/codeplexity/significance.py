"""Statistical association between subtree presence and model failure.

For each (model, pattern) pair the labeled questions split into those whose
program contains the pattern and those whose program does not. The null
hypothesis is equal success proportions; the one-sided alternative is that
success with the pattern present is lower. A pooled two-proportion z-test
does the work, falling back to the exact hypergeometric tail when any
expected cell count drops below 5. Patterns significant for every analyzed
model form the cross-model intersection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

from .errors import DegenerateTable
from .mining import SubtreeCatalog, pretty
from .model import FeatureMatrix, OutcomeMatrix

DEFAULT_ALPHA = 0.01
EXPECTED_CELL_MIN = 5.0


@dataclass(frozen=True)
class SubtreeContingency:
    pattern_index: int
    model_id: str
    n_with: int
    succ_with: int
    n_without: int
    succ_without: int

    def __post_init__(self):
        if not (0 <= self.succ_with <= self.n_with):
            raise ValueError("succ_with out of range")
        if not (0 <= self.succ_without <= self.n_without):
            raise ValueError("succ_without out of range")


def _phi(z: float) -> float:
    return 0.5 * (1.0 + math.erf(z / math.sqrt(2.0)))


def exact_hypergeom_tail(n_with, succ_with, n_without, succ_without) -> float:
    """P[successes among the with-group <= succ_with] under fixed margins.

    Computed with exact integer binomials; the only rounding is the final
    division.
    """
    n = n_with + n_without
    s = succ_with + succ_without
    f = n - s
    lo = max(0, n_with - f)
    numerator = sum(
        math.comb(s, k) * math.comb(f, n_with - k) for k in range(lo, succ_with + 1)
    )
    return numerator / math.comb(n, n_with)


def proportion_test(table: SubtreeContingency) -> float:
    """One-sided p-value for: success rate with the pattern is lower.

    Pooled z-test when all expected cell counts reach 5, exact
    hypergeometric tail otherwise.
    """
    a, sa = table.n_with, table.succ_with
    b, sb = table.n_without, table.succ_without
    if a == 0 or b == 0:
        raise DegenerateTable(
            f"pattern {table.pattern_index} splits degenerately for {table.model_id}"
        )
    n = a + b
    s = sa + sb
    expected = [a * s / n, a * (n - s) / n, b * s / n, b * (n - s) / n]
    if min(expected) < EXPECTED_CELL_MIN:
        return exact_hypergeom_tail(a, sa, b, sb)
    pooled = s / n
    sigma = math.sqrt(pooled * (1.0 - pooled) * (1.0 / a + 1.0 / b))
    if sigma == 0.0:
        return 0.5
    z = (sa / a - sb / b) / sigma
    return _phi(z)


@dataclass
class SignificanceReport:
    model_ids: tuple[str, ...]
    alpha: float
    p_values: dict[str, dict[int, float]]
    significant: dict[str, frozenset[int]]
    intersection: frozenset[int]
    skipped: dict[str, tuple[int, ...]] = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)


def significant_sets(
    catalog: SubtreeCatalog,
    features: FeatureMatrix,
    outcomes: OutcomeMatrix,
    models: Sequence[str],
    alpha: float = DEFAULT_ALPHA,
    bonferroni: bool = False,
) -> SignificanceReport:
    """Per-model failure-correlated pattern sets and their intersection."""
    if not models:
        raise ValueError("model list must be non-empty")
    if features.catalog_fingerprint != catalog.fingerprint():
        raise ValueError("features were encoded against a different catalog")
    unknown = [m for m in models if m not in outcomes.model_ids]
    if unknown:
        raise ValueError(f"unknown model ids: {unknown}")

    threshold = alpha / len(catalog.patterns) if bonferroni else alpha
    q_index = {qid: i for i, qid in enumerate(features.question_ids)}

    p_values: dict[str, dict[int, float]] = {}
    significant: dict[str, frozenset[int]] = {}
    skipped: dict[str, tuple[int, ...]] = {}
    for mid in models:
        labels = {
            qid: v for qid, v in outcomes.labels_for(mid).items() if qid in q_index
        }
        model_ps: dict[int, float] = {}
        model_skipped: list[int] = []
        for k in range(len(catalog.patterns)):
            n_with = succ_with = n_without = succ_without = 0
            for qid, y in labels.items():
                if features.rows[q_index[qid], k]:
                    n_with += 1
                    succ_with += y
                else:
                    n_without += 1
                    succ_without += y
            table = SubtreeContingency(k, mid, n_with, succ_with, n_without, succ_without)
            try:
                model_ps[k] = proportion_test(table)
            except DegenerateTable:
                model_skipped.append(k)
        p_values[mid] = model_ps
        significant[mid] = frozenset(k for k, p in model_ps.items() if p < threshold)
        skipped[mid] = tuple(model_skipped)

    intersection = frozenset.intersection(*(significant[m] for m in models))
    return SignificanceReport(
        model_ids=tuple(models),
        alpha=alpha,
        p_values=p_values,
        significant=significant,
        intersection=intersection,
        skipped=skipped,
        metadata={
            "test": "pooled one-sided two-proportion z, exact hypergeometric tail "
                    "when any expected cell count < 5",
            "bonferroni": bonferroni,
            "threshold": threshold,
        },
    )


def report_to_dict(report: SignificanceReport, catalog: SubtreeCatalog) -> dict:
    return {
        "format": "codeplexity-significance/1",
        "models": list(report.model_ids),
        "alpha": report.alpha,
        "metadata": report.metadata,
        "per_model": {
            mid: {
                "significant": sorted(report.significant[mid]),
                "skipped": list(report.skipped.get(mid, ())),
                "p_values": {
                    str(k): report.p_values[mid][k]
                    for k in sorted(report.p_values[mid])
                },
            }
            for mid in report.model_ids
        },
        "intersection": [
            {
                "index": k,
                "fingerprint": catalog.patterns[k].fingerprint,
                "pretty": pretty(catalog.patterns[k]),
            }
            for k in sorted(report.intersection)
        ],
    }
