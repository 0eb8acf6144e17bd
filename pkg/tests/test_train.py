import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

import oracles
from conftest import NIECE
from glabigru.corpus import Vocab
from glabigru.errors import CheckpointError, NumericError, UsageError
from glabigru.evaluation import SyntheticSpec, make_synthetic
from glabigru.model import ModelConfig, init_params
from glabigru.numcore import clone_params, make_rng
from glabigru.train import (
    MAGIC,
    AdadeltaState,
    Checkpoint,
    TrainConfig,
    adadelta_step,
    checkpoint_bytes,
    fit,
    format_sweep,
    gamma_sweep,
    load_checkpoint,
    maxnorm_constrained,
    maxnorm_project,
    parse_checkpoint,
    save_checkpoint,
)

SMALL = ModelConfig(d_e=12, d_p=3, d_h=8, clip=10, dropout=0.5, mode="hard")


# --- Adadelta ------------------------------------------------------------------------


def test_adadelta_first_step():
    p = {"w": np.zeros(3)}
    st_ = AdadeltaState.for_params(p)
    adadelta_step(p, {"w": np.ones(3)}, st_)
    expected = -math.sqrt(1e-6) / math.sqrt(0.05 + 1e-6)
    np.testing.assert_allclose(p["w"], expected, rtol=0, atol=1e-15)
    # the quoted hand value -0.0044719 is the same quantity rounded loosely
    assert expected == pytest.approx(-0.0044719, abs=5e-7)


def test_adadelta_zero_gradient_decays_accumulators():
    p = {"w": np.array([1.0, 2.0])}
    st_ = AdadeltaState.for_params(p)
    st_.sq_grad["w"][:] = 4.0
    st_.sq_delta["w"][:] = 2.0
    adadelta_step(p, {"w": np.zeros(2)}, st_)
    assert p["w"].tolist() == [1.0, 2.0]
    np.testing.assert_allclose(st_.sq_grad["w"], 0.95 * 4.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(st_.sq_delta["w"], 0.95 * 2.0, rtol=0, atol=1e-15)


@given(st.integers(0, 2**32 - 1))
def test_adadelta_matches_scalar_replay(seed):
    rng = make_rng(seed)
    x0 = rng.normal(size=4)
    gs = rng.normal(0, rng.uniform(0.01, 10), size=(100, 4))
    p = {"w": x0.copy()}
    st_ = AdadeltaState.for_params(p)
    for g in gs:
        adadelta_step(p, {"w": g}, st_)
    for j in range(4):
        ref = oracles.adadelta_replay(float(x0[j]), gs[:, j].tolist())[-1]
        assert abs(p["w"][j] - ref) <= 1e-12
    assert np.all(st_.sq_grad["w"] >= 0) and np.all(st_.sq_delta["w"] >= 0)
    assert st_.steps == 100


def test_adadelta_nan_aborts_without_touching_anything():
    p = {"a": np.ones(2), "b": np.ones(2)}
    st_ = AdadeltaState.for_params(p)
    with pytest.raises(NumericError, match="b"):
        adadelta_step(p, {"a": np.ones(2), "b": np.array([1.0, np.nan])}, st_)
    assert p["a"].tolist() == [1.0, 1.0] and st_.steps == 0 and np.all(st_.sq_grad["a"] == 0)


# --- max-norm ---------------------------------------------------------------------------


def test_maxnorm_examples():
    p = {"cls.W": np.array([[6.0, 0.0], [0.0, 2.0]]), "cls.b": np.array([10.0, 0.0]),
         "WV": np.array([[0.0, 9.0]])}
    maxnorm_project(p, 3.0, step=5, period=5)
    np.testing.assert_allclose(p["cls.W"][0], [3.0, 0.0], rtol=0, atol=1e-12)
    assert p["cls.W"][1].tolist() == [0.0, 2.0]
    assert p["cls.b"].tolist() == [10.0, 0.0] and p["WV"].tolist() == [[0.0, 9.0]]


def test_maxnorm_gating_is_bit_exact_noop():
    p = {"cls.W": np.full((3, 4), 7.0)}
    before = p["cls.W"].copy()
    maxnorm_project(p, 3.0, step=3, period=5)
    assert p["cls.W"].tobytes() == before.tobytes()


def test_maxnorm_scope():
    assert maxnorm_constrained("enc_f.W_z") and maxnorm_constrained("loc.W")
    assert not maxnorm_constrained("enc_f.b_z")
    assert not maxnorm_constrained("WV") and not maxnorm_constrained("PV2")


def test_train_config_validation():
    for bad in (dict(epochs=0), dict(maxnorm=0.0), dict(maxnorm_period=0), dict(batch=0)):
        with pytest.raises(UsageError):
            TrainConfig(**bad)


# --- fit ----------------------------------------------------------------------------------


def test_single_example_is_memorized():
    cfg = ModelConfig(d_e=50, d_p=5, d_h=32, clip=10, mode="none")  # dropout 0.5 as in training
    res = fit([NIECE], cfg, TrainConfig(epochs=50, batch=1, seed=3))
    assert res.history[-1].j_cls < 0.01


@pytest.fixture(scope="module")
def synth_small():
    return make_synthetic(SyntheticSpec(n_train=60, n_test=30, seed=5))


def test_fit_is_deterministic_and_records_history(synth_small, tmp_path):
    train, test = synth_small
    cfg = replace(SMALL, mode="soft")
    tc = TrainConfig(epochs=2, seed=4)
    a = fit(train, cfg, tc, eval_set=test, out_dir=tmp_path / "a")
    b = fit(train, cfg, tc, eval_set=test, out_dir=tmp_path / "b")
    assert [r.line() for r in a.history] == [r.line() for r in b.history]
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    for name in ("history.tsv", "last.ckpt", "best.ckpt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    for r in a.history:
        assert abs(r.loss - (r.j_cls + r.j_loc)) <= 1e-12 * max(1.0, r.loss)
        assert r.j_loc > 0 and 0 <= r.f1 <= 1
    lines = (tmp_path / "a" / "history.tsv").read_text().splitlines()
    assert lines[0].split("\t")[:5] == ["epoch", "J", "J_cls", "J_loc", "F1"]
    assert len(lines) == 3


def test_different_seeds_differ(synth_small):
    train, _ = synth_small
    a = fit(train[:10], SMALL, TrainConfig(epochs=1, seed=1))
    b = fit(train[:10], SMALL, TrainConfig(epochs=1, seed=2))
    assert a.history[0].loss != b.history[0].loss


def test_divergence_keeps_last_good_checkpoint(synth_small, tmp_path, monkeypatch):
    import glabigru.train as tr

    train, _ = synth_small
    original = tr.run_epoch
    calls = []

    def poisoned(data, params, *rest):
        calls.append(1)
        if len(calls) == 2:
            params["cls.W"][0, 0] = np.nan
        return original(data, params, *rest)

    monkeypatch.setattr(tr, "run_epoch", poisoned)
    with pytest.raises(NumericError):
        fit(train[:10], SMALL, TrainConfig(epochs=3), out_dir=tmp_path)
    ck = load_checkpoint(tmp_path / "last.ckpt")
    assert ck.epoch == 1 and np.all(np.isfinite(ck.params["cls.W"]))


def test_empty_training_set():
    with pytest.raises(UsageError):
        fit([], SMALL, TrainConfig(epochs=1))


# --- checkpoints -------------------------------------------------------------------------


@pytest.fixture
def checkpoint(labels):
    cfg = replace(SMALL, n_classes=len(labels), gamma=0.3)
    vocab = Vocab(["a", "b", "ü"])
    params = init_params(cfg, len(vocab), make_rng(0))
    opt = AdadeltaState.for_params(params)
    adadelta_step(params, {k: np.ones_like(v) for k, v in params.items()}, opt)
    return Checkpoint(cfg, vocab, labels, params, opt, epoch=7)


def test_checkpoint_roundtrip(checkpoint, tmp_path):
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, checkpoint)
    back = load_checkpoint(path)
    assert back.model_config == checkpoint.model_config
    assert back.vocab == checkpoint.vocab and back.labels == checkpoint.labels
    assert back.epoch == 7 and back.optimizer.steps == 1
    assert list(back.params) == list(checkpoint.params)
    for k, v in checkpoint.params.items():
        assert back.params[k].tobytes() == v.tobytes()
        assert back.optimizer.sq_grad[k].tobytes() == checkpoint.optimizer.sq_grad[k].tobytes()
    assert checkpoint_bytes(back) == path.read_bytes()
    assert [p.name for p in tmp_path.iterdir()] == ["m.ckpt"]  # no temp file left behind


def test_checkpoint_layout_starts_with_magic_and_version(checkpoint):
    data = checkpoint_bytes(checkpoint)
    assert data.startswith(MAGIC)
    assert int.from_bytes(data[len(MAGIC):len(MAGIC) + 4], "little") == 1


def test_truncated_checkpoint_names_offset(checkpoint):
    data = checkpoint_bytes(checkpoint)

    @given(st.integers(0, len(data) - 1))
    def check(cut):
        with pytest.raises(CheckpointError, match="offset"):
            parse_checkpoint(data[:cut])

    check()


def test_checkpoint_version_and_magic(checkpoint):
    data = bytearray(checkpoint_bytes(checkpoint))
    bumped = bytes(data[:len(MAGIC)]) + (2).to_bytes(4, "little") + bytes(data[len(MAGIC) + 4:])
    with pytest.raises(CheckpointError, match="unsupported checkpoint version 2"):
        parse_checkpoint(bumped)
    with pytest.raises(CheckpointError, match="magic"):
        parse_checkpoint(b"X" + bytes(data[1:]))
    with pytest.raises(CheckpointError, match="trailing"):
        parse_checkpoint(bytes(data) + b"\0")


def test_checkpoint_without_optimizer(checkpoint):
    ck = replace(checkpoint, optimizer=None, params=clone_params(checkpoint.params))
    back = parse_checkpoint(checkpoint_bytes(ck))
    assert back.optimizer is None


# --- gamma sweep -----------------------------------------------------------------------


def test_sweep_degenerate_modes_agree(synth_small):
    train, test = synth_small
    tc = TrainConfig(epochs=2, seed=2)
    none = gamma_sweep(train, test, [1.0], replace(SMALL, mode="none"), tc)
    hard = gamma_sweep(train, test, [1.0], replace(SMALL, mode="hard"), tc)
    assert none[0].f1 == hard[0].f1
    assert len(format_sweep(none).splitlines()) == 2


def test_sweep_on_synthetic_beats_majority(synth_small):
    train, test = synth_small
    rows = gamma_sweep(train, test, [0.0, 0.5, 1.0], SMALL, TrainConfig(epochs=4, seed=1), trials=2)
    counts = np.unique([ex.label for ex in test], return_counts=True)[1]
    majority = counts.max() / len(test)
    for row in rows:
        assert len(row.f1) == 2 and all(math.isfinite(f) for f in row.f1)
        assert max(row.accuracy) >= majority
        assert row.best >= row.mean


def test_sweep_parallel_matches_serial(synth_small):
    train, test = synth_small
    tc = TrainConfig(epochs=1, seed=1)
    serial = gamma_sweep(train[:20], test, [0.0, 1.0], SMALL, tc)
    parallel = gamma_sweep(train[:20], test, [0.0, 1.0], SMALL, tc, jobs=2)
    assert format_sweep(serial) == format_sweep(parallel)


def test_sweep_rejects_bad_inputs(synth_small):
    train, test = synth_small
    with pytest.raises(UsageError):
        gamma_sweep(train, test, [1.5], SMALL, TrainConfig(epochs=1))
    with pytest.raises(UsageError):
        gamma_sweep(train, [], [0.5], SMALL, TrainConfig(epochs=1))
