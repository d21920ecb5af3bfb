import numpy as np
import pytest

from gclica.contrastive import AuxStrategy, build_pairs
from gclica.errors import InvalidInputError, TrainingDivergenceError
from gclica.model import build_model
from gclica.numerics import SeededRng
from gclica.synthdata import gen_ar_sources, gen_segmented_sources, mix_dataset
from gclica.trainer import TrainConfig, evaluate, grad_check, train


def _segmented(T=64 * 128, K=64, n=3, seed=1):
    ds = mix_dataset(gen_segmented_sources(n, T, K, SeededRng(seed)), SeededRng(seed, (1,)),
                     n_layers=1)
    cs = build_pairs(ds, AuxStrategy("segment-label", one_hot=False), SeededRng(seed, (2,)))
    return ds, cs


def _expfam(n, K, seed=0, depth=2):
    return build_model({"feature": {"n": n, "depth": depth},
                        "head": {"kind": "expfam", "n": n, "n_segments": K}}, SeededRng(seed))


def test_config_validation():
    with pytest.raises(InvalidInputError):
        TrainConfig(lr=-1)
    with pytest.raises(InvalidInputError):
        TrainConfig(batch=3)
    with pytest.raises(InvalidInputError):
        TrainConfig(batch=0)
    with pytest.raises(InvalidInputError):
        TrainConfig(optimizer="rmsprop")
    assert TrainConfig().to_dict()["batch"] == 512


def test_segmented_training_learns():
    ds, cs = _segmented()
    m = _expfam(3, 64)
    m, tr = train(m, cs, TrainConfig(epochs=15, lr=3e-3, seed=0))
    assert len(tr.epoch) == 15
    assert tr.final_accuracy > 0.55
    assert tr.final_loss < np.log(2) - 0.01
    assert tr.warning is None


def test_independent_u_stays_at_chance():
    T = 2**13
    ds = mix_dataset(gen_ar_sources(3, T, SeededRng(2), rho=0.0), SeededRng(3), n_layers=1)
    cs = build_pairs(ds, AuxStrategy("time-index"), SeededRng(4))
    m = build_model({"feature": {"n": 3}, "head": {"kind": "general", "n": 3, "m": 1, "width": 8}},
                    SeededRng(5))
    m, tr = train(m, cs, TrainConfig(epochs=5, lr=1e-3, seed=1))
    # fresh negatives measure generalisation rather than memorised permutations
    from gclica.contrastive import resample_negatives
    _, acc = evaluate(m, resample_negatives(cs, SeededRng(6)))
    assert abs(acc - 0.5) <= 0.02


def test_zero_learning_rate_is_identity():
    _, cs = _segmented(T=2048, K=8)
    m = _expfam(3, 8)
    before = m.get_flat().copy()
    m, tr = train(m, cs, TrainConfig(epochs=2, lr=0.0, resample_negatives=False))
    assert np.array_equal(m.get_flat(), before)
    assert tr.final_accuracy == tr.initial_accuracy


def test_training_deterministic():
    _, cs = _segmented(T=2048, K=8)
    out = []
    for _ in range(2):
        m, tr = train(_expfam(3, 8, seed=4), cs, TrainConfig(epochs=3, lr=1e-2, seed=9))
        out.append((m.get_flat(), tr.loss, tr.accuracy, tr.param_norm))
    assert np.array_equal(out[0][0], out[1][0])
    assert out[0][1:] == out[1][1:]


def test_sgd_optimizer_runs():
    _, cs = _segmented(T=2048, K=8)
    m, tr = train(_expfam(3, 8), cs, TrainConfig(epochs=2, lr=0.1, optimizer="sgd"))
    assert np.isfinite(tr.final_loss)


def test_loss_nonnegative_and_trace_csv(tmp_path):
    _, cs = _segmented(T=2048, K=8)
    m, tr = train(_expfam(3, 8), cs, TrainConfig(epochs=3, lr=1e-2, l2=1e-3))
    assert min(tr.loss) >= 0
    p = tmp_path / "trace.csv"
    tr.to_csv(p, header_line="config abc")
    lines = p.read_text().splitlines()
    assert lines[0] == "# config abc"
    assert lines[1] == "epoch,loss,accuracy,param_norm,seconds"
    assert len(lines) == 2 + 3


def test_shuffled_labels_chance():
    _, cs = _segmented(T=4096, K=16)
    perm = SeededRng(3).permutation(len(cs))
    from dataclasses import replace
    shuffled = replace(cs, labels=cs.labels[perm])
    m, tr = train(_expfam(3, 16), shuffled, TrainConfig(epochs=3, lr=1e-3,
                                                        resample_negatives=False))
    assert abs(tr.final_accuracy - 0.5) <= 3 / np.sqrt(2 * cs.n_pairs) + 0.02


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_detected():
    _, cs = _segmented(T=2048, K=8)
    with pytest.raises(TrainingDivergenceError) as ei:
        train(_expfam(3, 8), cs, TrainConfig(epochs=5, lr=1e6, optimizer="sgd"))
    assert ei.value.epoch >= 1


def test_shape_mismatch():
    _, cs = _segmented(T=512, K=8)
    with pytest.raises(InvalidInputError):
        train(_expfam(4, 8), cs, TrainConfig(epochs=1))


@pytest.mark.parametrize("kind", ["general", "expfam"])
def test_grad_check_full_model(kind):
    ds, cs = _segmented(T=2048, K=8)
    if kind == "general":
        cs = build_pairs(ds, AuxStrategy("segment-label", one_hot=True), SeededRng(0))
        head = {"kind": "general", "n": 3, "m": 8}
    else:
        head = {"kind": "expfam", "n": 3, "n_segments": 8}
    m = build_model({"feature": {"n": 3}, "head": head}, SeededRng(1))
    rep = grad_check(m, cs, n_points=100, eps=1e-5, rng=2)
    assert rep.n_checked + rep.n_excluded == 100
    assert rep.max_rel_err <= 1e-4


def test_grad_check_linear_model():
    _, cs = _segmented(T=2048, K=8)
    m = _expfam(3, 8, depth=0)
    rep = grad_check(m, cs, n_points=60, eps=1e-5, rng=3)
    assert rep.max_rel_err <= 1e-6


def test_grad_check_error_shrinks_with_eps():
    _, cs = _segmented(T=2048, K=8)
    m = _expfam(3, 8)
    errs = [grad_check(m, cs, n_points=40, eps=e, rng=4).max_rel_err for e in (1e-1, 1e-3, 1e-5)]
    assert errs[0] > errs[1] > errs[2]


def test_grad_check_restores_parameters():
    _, cs = _segmented(T=512, K=8)
    m = _expfam(3, 8)
    before = m.get_flat().copy()
    grad_check(m, cs, n_points=10)
    assert np.array_equal(m.get_flat(), before)
    with pytest.raises(InvalidInputError):
        grad_check(m, cs, n_points=0)
