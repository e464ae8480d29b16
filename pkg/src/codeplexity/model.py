"""Subtree-presence features and the learned complexity scorer.

Questions are encoded as binary rows (bit k set when catalog pattern k
occurs in the question's program tree). A weighted logistic regression is
fit against per-question soft labels: the mean success of the training
models, weighted by how many of them produced an outcome. The complexity
score of a question is the negated predicted success probability, so values
live in (-1, 0) and higher means harder.

The training objective, with W = sum of weights and C the inverse
regularization strength (bias unregularized):

    ( sum_i weight_i * CE(sigmoid(w.x_i + b), label_i) + |w|^2 / (2C) ) / W

For a complete outcome matrix this equals treating every (question, model)
pair as its own binary instance; the weighting keeps that semantics when
entries are missing. The objective is convex, so any solver that reaches
the gradient tolerance lands on the same optimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from .astcore import CanonicalAst, ParsedCorpus
from .errors import CatalogMismatch, NoLabels, NonConvergence
from .mining import SubtreeCatalog, iso

GRAD_TOL_FACTOR = 1e-8
DEFAULT_REG_C = 1.0
DEFAULT_MAX_ITER = 500


@dataclass
class OutcomeMatrix:
    question_ids: tuple[str, ...]
    model_ids: tuple[str, ...]
    entries: dict[tuple[str, str], int]

    def __post_init__(self):
        known_q = set(self.question_ids)
        known_m = set(self.model_ids)
        for (qid, mid), value in self.entries.items():
            if value not in (0, 1):
                raise ValueError(f"outcome for ({qid}, {mid}) must be 0 or 1")
            if qid not in known_q or mid not in known_m:
                raise ValueError(f"outcome for unknown pair ({qid}, {mid})")

    @classmethod
    def from_records(cls, records: Iterable[dict]) -> "OutcomeMatrix":
        entries: dict[tuple[str, str], int] = {}
        qids: list[str] = []
        mids: list[str] = []
        for rec in records:
            qid, mid = rec["question_id"], rec["model_id"]
            if (qid, mid) in entries:
                raise ValueError(f"duplicate outcome for ({qid}, {mid})")
            entries[(qid, mid)] = int(rec["correct"])
            if qid not in qids:
                qids.append(qid)
            if mid not in mids:
                mids.append(mid)
        return cls(tuple(qids), tuple(mids), entries)

    def labels_for(self, model_id: str) -> dict[str, int]:
        return {
            qid: value
            for (qid, mid), value in self.entries.items()
            if mid == model_id
        }


@dataclass
class FeatureMatrix:
    question_ids: tuple[str, ...]
    catalog_fingerprint: str
    rows: np.ndarray  # shape (n_questions, n_patterns), 0/1

    def row_for(self, question_id: str) -> np.ndarray:
        return self.rows[self.question_ids.index(question_id)]


def encode(corpus: ParsedCorpus | Sequence[CanonicalAst], catalog: SubtreeCatalog,
           canon_digest: str | None = None) -> FeatureMatrix:
    """One row per program; bit k set when catalog pattern k occurs in it."""
    if isinstance(corpus, ParsedCorpus):
        programs = corpus.programs
        digest = corpus.canon.digest()
    else:
        programs = list(corpus)
        digest = canon_digest
    if digest is not None and catalog.canon_digest and digest != catalog.canon_digest:
        raise CatalogMismatch(
            "corpus and catalog were canonicalized under different configs"
        )
    rows = np.zeros((len(programs), len(catalog.patterns)), dtype=np.int8)
    for i, program in enumerate(programs):
        for k, pattern in enumerate(catalog.patterns):
            if iso(program, pattern):
                rows[i, k] = 1
    return FeatureMatrix(
        tuple(p.question_id for p in programs), catalog.fingerprint(), rows
    )


@dataclass
class SoftLabels:
    question_ids: tuple[str, ...]
    labels: np.ndarray
    weights: np.ndarray
    excluded: tuple[str, ...] = ()


def soft_labels(outcomes: OutcomeMatrix, train_models: Sequence[str]) -> SoftLabels:
    """Mean success over the training models, weighted by entry count.

    Questions with no entry for any training model are excluded and
    reported via ``excluded``.
    """
    if not train_models:
        raise ValueError("train_models must be non-empty")
    unknown = [m for m in train_models if m not in outcomes.model_ids]
    if unknown:
        raise ValueError(f"unknown model ids: {unknown}")
    kept: list[str] = []
    labels: list[float] = []
    weights: list[float] = []
    excluded: list[str] = []
    for qid in outcomes.question_ids:
        present = [
            outcomes.entries[(qid, mid)]
            for mid in train_models
            if (qid, mid) in outcomes.entries
        ]
        if not present:
            excluded.append(qid)
            continue
        kept.append(qid)
        labels.append(sum(present) / len(present))
        weights.append(float(len(present)))
    if not kept:
        raise NoLabels("every question lacks outcomes for the training models")
    return SoftLabels(
        tuple(kept),
        np.asarray(labels, dtype=float),
        np.asarray(weights, dtype=float),
        tuple(excluded),
    )


@dataclass
class ComplexityModel:
    weights: np.ndarray
    bias: float
    reg_c: float
    catalog_fingerprint: str
    fit_report: dict = field(default_factory=dict)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z, dtype=float)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _objective_grad(theta, X, y, sw, reg_c):
    n, d = X.shape
    w, b = theta[:d], theta[d]
    z = X @ w + b
    p = _sigmoid(z)
    total = sw.sum()
    # log(sigmoid) written via logaddexp for stability at extreme logits
    log_p = -np.logaddexp(0.0, -z)
    log_1mp = -np.logaddexp(0.0, z)
    ce = -(y * log_p + (1.0 - y) * log_1mp)
    obj = (sw @ ce + w @ w / (2.0 * reg_c)) / total
    resid = sw * (p - y)
    grad_w = (X.T @ resid + w / reg_c) / total
    grad_b = resid.sum() / total
    return obj, np.concatenate([grad_w, [grad_b]])


def fit(
    features: FeatureMatrix,
    soft: SoftLabels,
    reg_c: float = DEFAULT_REG_C,
    max_iter: int = DEFAULT_MAX_ITER,
) -> ComplexityModel:
    """Minimize the weighted soft-label objective to gradient tolerance.

    L-BFGS does the heavy lifting; damped Newton steps polish the solution
    until the gradient norm drops below 1e-8 * max(1, |objective|).
    """
    if reg_c <= 0:
        raise ValueError("reg_c must be positive")
    q_index = {qid: i for i, qid in enumerate(features.question_ids)}
    missing = [qid for qid in soft.question_ids if qid not in q_index]
    if missing:
        raise CatalogMismatch(f"labels name questions absent from features: {missing[:3]}")
    X = features.rows[[q_index[qid] for qid in soft.question_ids]].astype(float)
    y, sw = soft.labels, soft.weights
    n, d = X.shape

    theta = np.zeros(d + 1)
    res = minimize(
        _objective_grad,
        theta,
        args=(X, y, sw, reg_c),
        method="L-BFGS-B",
        jac=True,
        options={"maxiter": max_iter, "ftol": 1e-16, "gtol": 1e-12},
    )
    theta = res.x
    iterations = int(res.nit)

    def converged(obj, grad):
        return np.linalg.norm(grad) <= GRAD_TOL_FACTOR * max(1.0, abs(obj))

    obj, grad = _objective_grad(theta, X, y, sw, reg_c)
    newton_steps = 0
    while not converged(obj, grad) and newton_steps < 50:
        w = theta[:d]
        p = _sigmoid(X @ w + theta[d])
        r = sw * p * (1.0 - p)
        total = sw.sum()
        Xb = np.hstack([X, np.ones((n, 1))])
        H = (Xb.T * r) @ Xb / total
        H[:d, :d] += np.eye(d) / (reg_c * total)
        H += np.eye(d + 1) * 1e-12
        step = np.linalg.solve(H, grad)
        # backtracking keeps the convex objective monotone
        scale = 1.0
        while scale > 1e-8:
            cand = theta - scale * step
            cand_obj, cand_grad = _objective_grad(cand, X, y, sw, reg_c)
            if cand_obj <= obj + 1e-18:
                theta, obj, grad = cand, cand_obj, cand_grad
                break
            scale *= 0.5
        else:
            break
        newton_steps += 1

    grad_norm = float(np.linalg.norm(grad))
    if not converged(obj, grad):
        raise NonConvergence(grad_norm, iterations + newton_steps)

    return ComplexityModel(
        weights=theta[:d].copy(),
        bias=float(theta[d]),
        reg_c=float(reg_c),
        catalog_fingerprint=features.catalog_fingerprint,
        fit_report={
            "objective": float(obj),
            "grad_norm": grad_norm,
            "iterations": iterations + newton_steps,
            "solver": "lbfgs+newton",
        },
    )


def score_row(model: ComplexityModel, x: Sequence[float] | np.ndarray) -> float:
    """Complexity of one encoded question: -sigmoid(w.x + b), in (-1, 0)."""
    x = np.asarray(x, dtype=float)
    if x.shape != model.weights.shape:
        raise CatalogMismatch(
            f"feature row has length {x.shape}, model expects {model.weights.shape}"
        )
    z = float(model.weights @ x + model.bias)
    return -float(_sigmoid(np.array([z]))[0])


def score_matrix(model: ComplexityModel, features: FeatureMatrix) -> dict[str, float]:
    if features.catalog_fingerprint != model.catalog_fingerprint:
        raise CatalogMismatch("features were encoded against a different catalog")
    z = features.rows.astype(float) @ model.weights + model.bias
    scores = -_sigmoid(z)
    return dict(zip(features.question_ids, scores.tolist()))


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def features_to_dict(fm: FeatureMatrix) -> dict:
    return {
        "format": "codeplexity-features/1",
        "catalog_fingerprint": fm.catalog_fingerprint,
        "question_ids": list(fm.question_ids),
        "rows": fm.rows.astype(int).tolist(),
    }


def features_from_dict(d: dict) -> FeatureMatrix:
    return FeatureMatrix(
        tuple(d["question_ids"]),
        d["catalog_fingerprint"],
        np.asarray(d["rows"], dtype=np.int8),
    )


def model_to_dict(model: ComplexityModel) -> dict:
    return {
        "format": "codeplexity-model/1",
        "weights": model.weights.tolist(),
        "bias": model.bias,
        "reg_c": model.reg_c,
        "catalog_fingerprint": model.catalog_fingerprint,
        "fit_report": model.fit_report,
    }


def model_from_dict(d: dict) -> ComplexityModel:
    return ComplexityModel(
        np.asarray(d["weights"], dtype=float),
        float(d["bias"]),
        float(d["reg_c"]),
        d["catalog_fingerprint"],
        dict(d.get("fit_report", {})),
    )
