import numpy as np
import pytest

from densemask.harness import (
    ExperimentConfig,
    ablation_grid,
    evaluate,
    load_checkpoint,
    load_config,
    make_split,
    predict,
    save_checkpoint,
    save_config,
    train,
)
from densemask.heads import HeadKind
from densemask.inference import NMSMode

TINY = ExperimentConfig.from_dict({
    "net": {"channels": 8, "tower_depth": 1, "stem_channels": 4},
    "scene": {"image_size": [32, 32], "size_range": [8.0, 16.0]},
    "n_train": 4, "n_val": 2, "epochs": 3, "batch_size": 2,
})


def test_zero_lr_gives_flat_curve():
    # one batch per epoch, so the per-batch positive-count normalization cannot vary
    res = train(TINY.replace(lr=0.0, batch_size=4))
    np.testing.assert_allclose(res.losses, res.losses[0], rtol=1e-12)
    shuffled = train(TINY.replace(lr=0.0))
    np.testing.assert_allclose(shuffled.losses, res.losses[0], rtol=0.05)


def test_training_moves_loss():
    res = train(TINY.replace(epochs=4, lr=0.02))
    assert res.losses[-1] < res.losses[0]
    assert all(np.isfinite(res.losses))


def test_mask_only_mode_has_no_box_head():
    cfg = TINY.replace(net_box_head=False, loss_weights=(1.0, 1.0, 0.0))
    assert cfg.resolved_nms is NMSMode.MASK_BB
    res = train(cfg)
    assert not any("box" in k for k in res.params)
    images = make_split(cfg, "val")[0]
    for dets in predict(cfg, res.params, images):
        for d in dets:
            assert d.box is None and d.binary_mask is not None


def test_checkpoint_round_trip(tmp_path):
    res = train(TINY.replace(epochs=1))
    save_checkpoint(tmp_path / "c.npz", TINY, res.params, res.losses)
    cfg, params, losses = load_checkpoint(tmp_path / "c.npz")
    assert cfg == TINY and losses == res.losses
    for k, v in res.params.items():
        np.testing.assert_array_equal(params[k], v)
    assert evaluate(cfg, params) == evaluate(TINY, res.params)


def test_config_round_trip(tmp_path):
    cfg = TINY.replace(net_head=HeadKind.UPSCALE_ALIGNED, net_lam=3, nms_mode="mask-bb", name="x")
    save_config(tmp_path / "c.json", cfg)
    assert load_config(tmp_path / "c.json") == cfg


def test_config_rejects_too_few_classes():
    with pytest.raises(ValueError):
        TINY.replace(net_num_classes=2)


def test_splits_are_disjoint_and_centered():
    tr, tr_inst, _ = make_split(TINY, "train")
    va, va_inst, _ = make_split(TINY, "val")
    assert tr.shape == (4, 3, 32, 32) and va.shape == (2, 3, 32, 32)
    assert not any(np.array_equal(a, b) for a in tr for b in va)
    assert -0.6 < tr.mean() < 0.5


def test_ablation_grid_contents():
    grid = ablation_grid(TINY, seeds=(0, 1))
    names = [c.name for c in grid]
    assert names.count("bipyramid") == 2
    nat = next(c for c in grid if c.name == "upscale_natural_bilinear")
    ali = next(c for c in grid if c.name == "upscale_aligned_nearest")
    assert nat.net.lam == ali.net.lam == 5
    assert {c.seed for c in grid} == {0, 1}
