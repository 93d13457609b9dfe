import math

import numpy as np
import pytest

from speechtok import training
from speechtok.gradcheck import TINY, check_pipeline
from speechtok.training import ToyConfig, ce_loss, recon_loss, total_loss, unit_accuracy


def test_ce_examples():
    V = 64
    assert ce_loss(np.zeros((3, V)), [0, 5, 63]) == pytest.approx(math.log(64), abs=1e-12)
    assert math.log(64) == pytest.approx(4.1589, abs=1e-4)
    perfect = np.full((2, 4), -1e4)
    perfect[[0, 1], [2, 3]] = 1e4
    assert ce_loss(perfect, [2, 3]) == pytest.approx(0.0, abs=1e-12)
    # position 0: uniform over 2 -> ln 2; position 1 masked out
    logits = np.array([[0.0, 0.0], [50.0, -50.0]])
    assert ce_loss(logits, [0, 1], mask=[1, 0]) == pytest.approx(math.log(2), abs=1e-12)


def test_ce_rejects_bad_input():
    with pytest.raises(ValueError):
        ce_loss(np.zeros((2, 3)), [0, 3])
    with pytest.raises(ValueError):
        ce_loss(np.zeros((2, 3)), [0, 1], mask=[0, 0])


def test_recon_examples():
    z = np.array([[1.0, 2.0], [5.0, 5.0]])
    assert recon_loss(z, z) == 0.0
    assert recon_loss(z, z - [[3.0, 4.0], [9.0, 9.0]], mask=[1, 0]) == pytest.approx(25.0)
    zq = z + [[0.5, -1.0], [2.0, 0.0]]
    assert recon_loss(z, z + 2 * (zq - z)) == pytest.approx(4 * recon_loss(z, zq))


def test_total_loss_examples():
    assert total_loss(2.0, 0.5, 1.0).total == 2.5
    assert total_loss(1.7, 123.0, 0.0).total == 1.7
    assert total_loss(0.0, 3.0, 2.0).total == 6.0
    with pytest.raises(ValueError):
        total_loss(1.0, 1.0, -1.0)


def test_accuracy_examples():
    assert unit_accuracy([4, 2, 9], [4, 2, 9]) == 1.0
    assert unit_accuracy([1, 2, 3], [1, 2, 4]) == pytest.approx(2 / 3)
    assert unit_accuracy([1, 7, 7], [1, 2, 4], mask=[1, 0, 0]) == 1.0


def test_dataset_shapes():
    cfg = ToyConfig(batch=3)
    data = training.make_dataset(cfg)
    assert len(data) == 3
    ex = data[0]
    assert ex.stack.layers.shape == (4, 32, 16)
    assert ex.token_ids.shape == ex.targets.shape == ex.mask.shape == (8,)
    assert ex.targets.max() < cfg.V


@pytest.mark.parametrize("seed", range(3))
def test_pipeline_gradients(seed):
    assert check_pipeline(np.random.default_rng(seed)).max_relative_error < 1e-4


def test_pipeline_gradients_without_recon():
    assert check_pipeline(np.random.default_rng(9), lam=0.0).max_relative_error < 1e-4


def test_single_unit_class_reaches_zero_ce():
    hist = training.train_toy(ToyConfig(**{**TINY, "V": 1, "steps": 20}, lam=0.0))
    assert hist.records[-1]["ce"] < 1e-3
    assert hist.records[-1]["accuracy"] == 1.0


def test_lambda_zero_total_equals_ce():
    hist = training.train_toy(ToyConfig(**{**TINY, "steps": 5}, lam=0.0))
    for r in hist.records:
        assert r["total"] == r["ce"]
        assert r["recon"] > 0


def test_history_is_deterministic():
    cfg = ToyConfig(**{**TINY, "steps": 10})
    a, b = training.train_toy(cfg), training.train_toy(cfg)
    assert a.to_csv() == b.to_csv()
    assert a.to_json() == b.to_json()
    assert a.to_csv().splitlines()[0] == "step,ce,recon,total,accuracy"
    assert len(a.records) == 11


def test_seed_changes_history():
    cfg = ToyConfig(**{**TINY, "steps": 3})
    assert training.train_toy(cfg, seed=1).to_csv() != training.train_toy(cfg, seed=2).to_csv()


def test_short_run_lowers_loss():
    hist = training.train_toy(ToyConfig(steps=60))
    assert hist.records[-1]["total"] < hist.records[0]["total"]


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_reports_step():
    with pytest.raises(training.TrainingDivergence) as info:
        training.train_toy(ToyConfig(**{**TINY, "steps": 50}, lr=1e200))
    assert info.value.step >= 1


def test_checkpoint_roundtrip(tmp_path):
    cfg = ToyConfig(**TINY)
    params = training.init_params(cfg)
    training.save_checkpoint(params, tmp_path / "ckpt")
    back = training.load_checkpoint(tmp_path / "ckpt")
    assert list(back) == list(training.PARAM_ORDER)
    for k, v in params.items():
        np.testing.assert_array_equal(back[k], v.astype(np.float32).astype(np.float64))
