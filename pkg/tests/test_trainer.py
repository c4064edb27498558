import math

import numpy as np
import pytest

from pkinet.config import toy_config
from pkinet.formats import read_bundle, write_bundle
from pkinet.trainer import (
    LARGE,
    SMALL,
    DivergenceError,
    gen_synthetic,
    loss_gradcheck,
    train_toy,
    write_loss_csv,
)

# Frozen from the seed-0 fixture run (single BLAS thread).
FIXTURE_INITIAL = 1.380854699888071
FIXTURE_FINAL = 0.5696501157589882


def test_dataset_deterministic():
    a, b = gen_synthetic(3, 40), gen_synthetic(3, 40)
    assert np.array_equal(a.images, b.images) and np.array_equal(a.labels, b.labels)
    assert not np.array_equal(a.images, gen_synthetic(4, 40).images)


@pytest.mark.parametrize("n", [8, 100, 101, 257])
def test_classes_balanced(n):
    counts = np.bincount(gen_synthetic(0, n).labels, minlength=4)
    assert counts.max() - counts.min() <= 1
    if n == 100:
        assert counts.tolist() == [25, 25, 25, 25]


def test_minimum_size():
    with pytest.raises(ValueError):
        gen_synthetic(0, 7)


def test_background_noise_level():
    data = gen_synthetic(0, 64, noise_std=0.2)
    # pixels are background wherever the shape colour (>= 0.6) was not painted
    bg = data.images[np.abs(data.images) < 0.55]
    assert abs(bg.std() / 0.2 - 1) < 0.1


def test_shape_scale_ratio():
    assert LARGE == 3 * SMALL
    data = gen_synthetic(1, 40, noise_std=0.0)
    areas = (data.images[:, 0] > 0).sum(axis=(1, 2))
    small_sq = areas[data.labels == 0]
    large_sq = areas[data.labels == 1]
    assert set(small_sq) == {SMALL * SMALL} and set(large_sq) == {LARGE * LARGE}


def test_zero_learning_rate_keeps_loss_constant():
    data = gen_synthetic(0, 16)
    result = train_toy(toy_config(), data, 4, 0.0, batch_size=16, weight_decay=0.0)
    assert len(set(result.losses)) == 1


def test_divergence_names_step():
    data = gen_synthetic(0, 16)
    data.images[3, 0, 0, 0] = np.nan
    with pytest.raises(DivergenceError, match="step 0"):
        train_toy(toy_config(), data, 2, 1e-3)


def test_step_zero_loss_gradcheck():
    assert loss_gradcheck(toy_config(), gen_synthetic(0, 32)) < 1e-4


def test_caa_changes_trajectory():
    data = gen_synthetic(0, 32)
    on = train_toy(toy_config(), data, 3, 1e-3)
    off = train_toy(toy_config(caa_stages=(False,) * 4), data, 3, 1e-3)
    assert on.losses != off.losses
    w_on = on.model.params["stage1.block0.out.conv.weight"]
    w_off = off.model.params["stage1.block0.out.conv.weight"]
    assert not np.array_equal(w_on, w_off)


def test_fixture_run(toy_fixture_run):
    losses = toy_fixture_run.losses
    assert len(losses) == 200
    assert all(math.isfinite(v) for v in losses)
    assert losses[-1] <= 0.5 * losses[0]
    assert losses[0] == pytest.approx(FIXTURE_INITIAL, rel=1e-9)
    assert losses[-1] == pytest.approx(FIXTURE_FINAL, rel=1e-6)


def test_fixture_model_serializable(toy_fixture_run, tmp_path):
    state = toy_fixture_run.model.state()
    write_bundle(state, tmp_path / "w.pkiw")
    back = read_bundle(tmp_path / "w.pkiw")
    assert back.keys() == state.keys()
    assert all(np.array_equal(back[k], state[k]) for k in state)


def test_loss_csv(tmp_path):
    write_loss_csv(tmp_path / "l.csv", [1.5, 0.25])
    assert (tmp_path / "l.csv").read_text() == "step,loss\n0,1.5\n1,0.25\n"
