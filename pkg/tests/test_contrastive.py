import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gclica.contrastive import (AuxStrategy, aux_values, build_pairs, minibatches,
                                resample_negatives)
from gclica.errors import InvalidInputError, StrategyMismatchError
from gclica.numerics import SeededRng
from gclica.synthdata import (SourceDataset, gen_ar_sources, gen_grid_scale_mixture,
                              gen_segmented_sources, mix_dataset)


def _mixed(ds, seed=0):
    return mix_dataset(ds, SeededRng(seed), n_layers=2)


@pytest.fixture(scope="module")
def seg64():
    return _mixed(gen_segmented_sources(3, 64 * 40, 64, SeededRng(1)))


def _rows_multiset(a):
    return sorted(map(tuple, np.round(a, 15)))


def test_time_index_four_rows():
    ds = _mixed(gen_ar_sources(2, 4, SeededRng(0), rho=0.0))
    cs = build_pairs(ds, AuxStrategy("time-index"), SeededRng(1))
    assert cs.u[:4, 0].tolist() == [0.25, 0.5, 0.75, 1.0]
    assert np.array_equal(cs.u[4:, 0], cs.u_pos[cs.perm, 0])
    assert cs.labels.tolist() == [1, 1, 1, 1, 0, 0, 0, 0]


def test_history_excludes_first_rows():
    T = 50
    ds = _mixed(gen_ar_sources(2, T, SeededRng(0)))
    cs = build_pairs(ds, AuxStrategy("history", lag=1), SeededRng(1))
    assert len(cs) == 2 * (T - 1)
    assert np.array_equal(cs.u_pos, ds.X[:-1])
    assert np.array_equal(cs.x[:T - 1], ds.X[1:])
    cs3 = build_pairs(ds, AuxStrategy("history", lag=3), SeededRng(1))
    assert len(cs3) == 2 * (T - 3) and cs3.u.shape[1] == 6
    assert np.array_equal(cs3.u_pos[:, 2:4], ds.X[1:T - 2])


def test_segment_onehot_width_and_histograms(seg64):
    cs = build_pairs(seg64, AuxStrategy("segment-label", one_hot=True), SeededRng(2))
    assert cs.u.shape[1] == 64
    T = cs.n_pairs
    assert np.array_equal(cs.u[:T].sum(0), cs.u[T:].sum(0))


def test_combined_shared_and_separate_permutations():
    ds = _mixed(gen_ar_sources(2, 30, SeededRng(0)))
    cs = build_pairs(ds, AuxStrategy("combined"), SeededRng(3))
    assert cs.perm.ndim == 1 and cs.split == 2
    T = cs.n_pairs
    assert np.array_equal(cs.u[T:], cs.u_pos[cs.perm])
    sep = build_pairs(ds, AuxStrategy("combined", separate_permutation=True), SeededRng(3))
    assert sep.perm.shape == (2, T)
    assert np.array_equal(sep.u[T:, :2], sep.u_pos[sep.perm[0], :2])
    assert np.array_equal(sep.u[T:, 2:], sep.u_pos[sep.perm[1], 2:])


def test_class_label_strategy():
    ds = _mixed(gen_segmented_sources(2, 40, 4, SeededRng(0)))
    cs = build_pairs(ds, AuxStrategy("class-label", k=4), SeededRng(1))
    assert cs.u.shape[1] == 4 and cs.n_classes == 4
    with pytest.raises(StrategyMismatchError):
        build_pairs(ds, AuxStrategy("class-label", k=3), SeededRng(1))


def test_strategy_mismatch():
    ds = _mixed(gen_ar_sources(2, 20, SeededRng(0)))
    with pytest.raises(StrategyMismatchError):
        build_pairs(ds, AuxStrategy("segment-label"), SeededRng(1))
    with pytest.raises(StrategyMismatchError):
        build_pairs(ds, AuxStrategy("spatial-grid"), SeededRng(1))
    raw = gen_segmented_sources(2, 20, 2, SeededRng(0))
    with pytest.raises(StrategyMismatchError):
        build_pairs(raw, AuxStrategy("segment-label"), SeededRng(1))


def test_strategy_validation():
    with pytest.raises(InvalidInputError):
        AuxStrategy("history", lag=0)
    with pytest.raises(InvalidInputError):
        AuxStrategy("class-label", k=1)
    with pytest.raises(InvalidInputError):
        AuxStrategy("nope")
    s = AuxStrategy("combined", lag=2)
    assert AuxStrategy.from_dict(s.to_dict()) == s


def test_grid_strategy_uses_coordinates():
    ds = _mixed(gen_grid_scale_mixture(2, 8, 1, SeededRng(0)))
    cs = build_pairs(ds, AuxStrategy("spatial-grid"), SeededRng(1))
    assert np.array_equal(cs.u_pos, ds.U)


@settings(max_examples=25, deadline=None)
@given(st.sampled_from(["time-index", "segment-label", "history", "combined"]),
       st.integers(0, 2**32 - 1))
def test_invariants_balanced_and_multiset(kind, seed):
    base = gen_segmented_sources(2, 60, 5, SeededRng(seed))
    ds = _mixed(base, seed)
    cs = build_pairs(ds, AuxStrategy(kind), SeededRng(seed, (1,)))
    T = cs.n_pairs
    assert cs.labels.sum() == T and len(cs) == 2 * T
    assert _rows_multiset(cs.u[:T]) == _rows_multiset(cs.u[T:])
    assert np.array_equal(cs.x[:T], cs.x[T:])
    cs2 = resample_negatives(cs, SeededRng(seed, (2,)))
    assert np.array_equal(cs2.u[:T], cs.u[:T])
    assert _rows_multiset(cs2.u[T:]) == _rows_multiset(cs.u[:T])


def test_build_pairs_deterministic(seg64):
    a = build_pairs(seg64, AuxStrategy("segment-label"), SeededRng(5))
    b = build_pairs(seg64, AuxStrategy("segment-label"), SeededRng(5))
    assert np.array_equal(a.u, b.u) and np.array_equal(a.perm, b.perm)


def test_resample_changes_permutation(seg64):
    cs = build_pairs(seg64, AuxStrategy("segment-label"), SeededRng(5))
    a = resample_negatives(cs, SeededRng(5, (1,)))
    b = resample_negatives(cs, SeededRng(5, (2,)))
    assert not np.array_equal(a.perm, b.perm)


def test_single_pair_warns():
    ds = SourceDataset(S=np.ones((1, 2)), U=np.zeros((1, 1)), spec={"generator": "ar"},
                       X=np.ones((1, 2)))
    with pytest.warns(RuntimeWarning):
        cs = build_pairs(ds, AuxStrategy("time-index"), SeededRng(0))
    assert cs.perm.tolist() == [0]
    with pytest.warns(RuntimeWarning):
        cs2 = resample_negatives(cs, SeededRng(1))
    assert np.array_equal(cs2.u[0], cs2.u[1])


def test_minibatch_full_and_pairs():
    ds = _mixed(gen_ar_sources(2, 3, SeededRng(0)))
    cs = build_pairs(ds, AuxStrategy("time-index"), SeededRng(0))
    full = minibatches(cs, 6, SeededRng(1))
    assert len(full) == 1 and sorted(full[0]) == list(range(6))
    pairs = minibatches(cs, 2, SeededRng(1))
    assert len(pairs) == 3
    for b in pairs:
        assert cs.labels[b].sum() == 1


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 80), st.integers(1, 40), st.integers(0, 2**32 - 1))
def test_minibatch_partition_and_balance(T, half, seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        ds = _mixed(gen_ar_sources(2, T, SeededRng(seed)))
        cs = build_pairs(ds, AuxStrategy("time-index"), SeededRng(seed))
    batch = min(2 * half, len(cs))
    bs = minibatches(cs, batch, SeededRng(seed, (3,)))
    allidx = np.concatenate(bs)
    assert sorted(allidx.tolist()) == list(range(len(cs)))
    for b in bs:
        pos = cs.labels[b].sum()
        if batch % 2 == 0:
            assert abs(pos - (b.size - pos)) <= 1


def test_minibatch_bad_size(seg64):
    cs = build_pairs(seg64, AuxStrategy("segment-label"), SeededRng(5))
    with pytest.raises(InvalidInputError):
        minibatches(cs, 0, SeededRng(0))


def test_aux_values_requires_observations():
    ds = gen_segmented_sources(2, 20, 2, SeededRng(0))
    with pytest.raises(StrategyMismatchError):
        aux_values(ds, AuxStrategy("time-index"))
