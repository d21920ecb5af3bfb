"""Source-recovery scores: correlation matrices, optimal matching and the
mean correlation coefficient (MCC)."""
from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DegenerateColumnError, InvalidInputError

VARIANTS = ("raw", "absolute-value", "abs-truth")
EXACT_ASSIGNMENT_MAX_N = 8


def _center(a, name):
    """Centred columns as rows of a contiguous (n, T) array.

    Each column is reduced on its own so its result does not depend on its
    position in ``a`` (a column permutation permutes the output exactly).
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 1:
        a = a[:, None]
    cols = np.ascontiguousarray(a.T)
    c = np.stack([col - col.mean() for col in cols]) if len(cols) else cols
    for i, (col, raw) in enumerate(zip(c, cols)):
        scale = max(np.abs(raw).max(), 1e-300)
        if np.sqrt(np.dot(col, col)) <= 1e-12 * scale * np.sqrt(a.shape[0]):
            raise DegenerateColumnError(f"column {i} of {name} is constant", column=i)
    return c


def corr_matrix(a, b) -> np.ndarray:
    """Pearson correlation of every column of ``a`` with every column of ``b``.

    Each entry is dot(a_i, b_j) / sqrt(dot(a_i, a_i) * dot(b_j, b_j)) on
    centred columns, so bit-identical columns correlate to exactly 1.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape[0] != b.shape[0]:
        raise InvalidInputError(f"row counts differ: {a.shape[0]} vs {b.shape[0]}")
    ca = _center(a, "first argument")
    cb = _center(b, "second argument")
    va = [np.dot(col, col) for col in ca]
    vb = [np.dot(col, col) for col in cb]
    C = np.empty((ca.shape[0], cb.shape[0]))
    for i, x in enumerate(ca):
        for j, y in enumerate(cb):
            C[i, j] = np.dot(x, y) / np.sqrt(va[i] * vb[j])
    return np.clip(C, -1.0, 1.0)


def optimal_assignment(score, method="auto"):
    """Permutation ``p`` maximising sum_i score[i, p[i]].

    ``exact`` enumerates permutations in lexicographic order and keeps the
    first maximiser; ``hungarian`` uses scipy's linear_sum_assignment.
    ``auto`` enumerates for n <= 8.
    """
    score = np.asarray(score, dtype=float)
    n = score.shape[0]
    if method == "auto":
        method = "exact" if n <= EXACT_ASSIGNMENT_MAX_N else "hungarian"
    if method == "exact":
        perms = np.array(list(itertools.permutations(range(n))), dtype=int)
        obj = score[np.arange(n), perms].sum(axis=1)
        return perms[int(np.argmax(obj))]
    if method == "hungarian":
        rows, cols = linear_sum_assignment(score, maximize=True)
        return cols[np.argsort(rows)]
    raise InvalidInputError(f"unknown assignment method {method!r}")


@dataclass
class EvalReport:
    """``assignment[i]`` is the estimated column matched to true column i."""
    corr: np.ndarray
    assignment: np.ndarray
    signs: np.ndarray
    mcc: float
    variant: str
    per_component: np.ndarray

    def to_dict(self):
        return {
            "variant": self.variant,
            "mcc": float(self.mcc),
            "assignment": [int(i) for i in self.assignment],
            "signs": [int(s) for s in self.signs],
            "per_component": [float(v) for v in self.per_component],
            "corr": [[float(v) for v in row] for row in self.corr],
        }

    def to_json(self, **extra):
        d = self.to_dict()
        d.update(extra)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def mcc(estimated, truth, variant: str = "raw") -> EvalReport:
    """Mean correlation after optimal matching.

    ``raw``: Pearson correlation of estimates and sources, matched on |corr|
    with signs flipped so matched values are nonnegative.
    ``absolute-value``: Pearson correlation of |estimate| and |source|.
    ``abs-truth``: estimates against |source| (the sufficient statistic of a
    scale family), matched and sign-flipped as in ``raw``.
    """
    if variant not in VARIANTS:
        raise InvalidInputError(f"variant must be one of {VARIANTS}, got {variant!r}")
    est = np.asarray(estimated, dtype=float)
    tru = np.asarray(truth, dtype=float)
    if est.shape != tru.shape:
        raise InvalidInputError(f"shapes differ: {est.shape} vs {tru.shape}")
    if variant == "absolute-value":
        est, tru = np.abs(est), np.abs(tru)
    elif variant == "abs-truth":
        tru = np.abs(tru)
    # rows: true sources, columns: estimates
    C = corr_matrix(tru, est)
    n = C.shape[0]
    assign = optimal_assignment(np.abs(C))
    matched = C[np.arange(n), assign]
    signs = np.where(matched >= 0, 1, -1)
    per = matched if variant == "absolute-value" else np.abs(matched)
    return EvalReport(corr=C, assignment=assign, signs=signs, mcc=float(np.mean(per)),
                      variant=variant, per_component=per)
