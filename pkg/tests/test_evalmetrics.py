import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gclica.errors import DegenerateColumnError, InvalidInputError
from gclica.evalmetrics import corr_matrix, mcc, optimal_assignment
from gclica.numerics import SeededRng


def test_corr_unit_diagonal_and_affine(laplace5):
    C = corr_matrix(laplace5, laplace5)
    assert np.all(np.diag(C) == 1.0)
    assert np.allclose(corr_matrix(laplace5, 2 * laplace5 + 3), C, atol=1e-14)


def test_corr_hand_example():
    C = corr_matrix(np.array([[1.0], [2], [3]]), np.array([[1.0], [2], [4]]))
    # cov = 1.5, sd_a = 1, sd_b = sqrt(7/3): 1.5 / sqrt(7/3) / ... on centred sums
    assert C[0, 0] == pytest.approx(3 / np.sqrt(2 * 14 / 3), abs=1e-4)
    assert C[0, 0] == pytest.approx(0.9820, abs=1e-4)


def test_constant_column_named():
    a = SeededRng(0).normal(size=(50, 3))
    a[:, 2] = 1.0
    with pytest.raises(DegenerateColumnError) as ei:
        mcc(a, SeededRng(1).normal(size=(50, 3)))
    assert ei.value.column == 2


def test_shape_and_variant_errors():
    with pytest.raises(InvalidInputError):
        mcc(np.ones((5, 2)), np.ones((5, 3)))
    with pytest.raises(InvalidInputError):
        mcc(np.ones((5, 2)), np.ones((5, 2)), variant="signed")
    with pytest.raises(InvalidInputError):
        corr_matrix(np.ones((5, 2)), np.ones((4, 2)))


@pytest.mark.parametrize("variant", ["raw", "absolute-value", "abs-truth"])
def test_identity_is_exactly_one(laplace5, variant):
    truth = laplace5 if variant != "abs-truth" else laplace5
    est = laplace5 if variant != "abs-truth" else np.abs(laplace5)
    assert mcc(est, truth, variant).mcc == 1.0


def test_permutation_sign_invariance(laplace5):
    perm = [3, 0, 4, 1, 2]
    signs = np.array([1, -1, -1, 1, -1])
    rep = mcc(laplace5[:, perm] * signs, laplace5, "raw")
    assert rep.mcc == 1.0
    assert rep.assignment.tolist() == [perm.index(i) for i in range(5)]
    assert rep.signs.tolist() == [int(signs[perm.index(i)]) for i in range(5)]


def test_noise_null(laplace5):
    g = SeededRng(5)
    T = 2**16
    truth = g.laplace(size=(T, 5))
    assert mcc(g.normal(size=(T, 5)), truth, "raw").mcc <= 0.03


def test_variants_differ_on_scale_family():
    g = SeededRng(6)
    s = g.laplace(size=(5000, 3))
    est = np.abs(s) + 0.1 * g.normal(size=s.shape)
    raw = mcc(est, s, "raw").mcc
    abs_truth = mcc(est, s, "abs-truth").mcc
    assert abs_truth > 0.9 > raw


def test_report_json():
    rep = mcc(np.eye(4)[[0, 1, 2, 3, 0, 1]] + SeededRng(1).normal(size=(6, 4)) * 0.1,
              np.eye(4)[[0, 1, 2, 3, 0, 1]] + SeededRng(2).normal(size=(6, 4)) * 0.1)
    d = json.loads(rep.to_json(run="x"))
    assert d["run"] == "x" and d["variant"] == "raw"
    assert len(d["corr"]) == 4 and -1 <= d["mcc"] <= 1


def _brute(score):
    n = len(score)
    best = max(itertools.permutations(range(n)), key=lambda p: sum(score[i, p[i]] for i in range(n)))
    return sum(score[i, best[i]] for i in range(n))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_assignment_matches_bruteforce(n, seed):
    S = SeededRng(seed).uniform(size=(n, n))
    p = optimal_assignment(S)
    assert sorted(p.tolist()) == list(range(n))
    assert S[np.arange(n), p].sum() == pytest.approx(_brute(S), abs=1e-12)


def test_assignment_tie_lexicographic():
    assert optimal_assignment(np.ones((3, 3))).tolist() == [0, 1, 2]


@settings(max_examples=20, deadline=None)
@given(st.integers(9, 12), st.integers(0, 2**32 - 1))
def test_hungarian_agrees_with_objective(n, seed):
    S = SeededRng(seed).uniform(size=(n, n))
    p = optimal_assignment(S)
    from scipy.optimize import linear_sum_assignment
    r, c = linear_sum_assignment(S, maximize=True)
    assert S[np.arange(n), p].sum() == pytest.approx(S[r, c].sum(), abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(["raw", "absolute-value"]))
def test_invariances_and_symmetry(seed, variant):
    g = SeededRng(seed)
    truth = g.laplace(size=(400, 4))
    est = truth @ (np.eye(4) + 0.3 * g.normal(size=(4, 4)))
    base = mcc(est, truth, variant).mcc
    perm = g.permutation(4)
    scale = g.uniform(0.5, 3, size=4)
    sign = np.where(g.uniform(size=4) < 0.5, -1.0, 1.0)
    moved = est[:, perm] * scale
    if variant == "raw":
        moved = moved * sign + g.normal(size=4)
    assert mcc(moved, truth, variant).mcc == pytest.approx(base, abs=1e-12)
    assert mcc(truth, est, variant).mcc == pytest.approx(base, abs=1e-12)
    assert -1 <= base <= 1
