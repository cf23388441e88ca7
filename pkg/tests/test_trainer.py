import numpy as np
import pytest

from coli.errors import ShapeError
from coli.inr_net import init_weights, make_config
from coli.pixel_io import split_patches
from coli.synthetic import blob_image, gradient_image
from coli.trainer import (
    TrainConfig,
    TrainJob,
    evaluate,
    recon_loss,
    reconstruct,
    train,
    train_many,
)

CFG8 = make_config("small", 8)


def small_grid(img=None):
    return split_patches(img or gradient_image(32), 8, 8)


def test_recon_loss_examples():
    p = np.full((1, 2, 2), 0.75)
    t = np.full((1, 2, 2), 0.25)
    assert recon_loss([p], [t]) == 0.25
    assert recon_loss([p, t], [p, t]) == 0.0
    rng = np.random.default_rng(0)
    preds = [rng.normal(size=(1, 3, 3)) for _ in range(4)]
    targs = [rng.normal(size=(1, 3, 3)) for _ in range(4)]
    assert recon_loss(preds, targs) == pytest.approx(recon_loss(preds[::-1], targs[::-1]), rel=1e-15)
    with pytest.raises(ShapeError):
        recon_loss([p], [np.zeros((1, 3, 3))])
    with pytest.raises(ShapeError):
        recon_loss([p], [])


def test_config_contract():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(batch_patches=0)


def test_one_epoch_history():
    w, hist = train(small_grid(), CFG8, TrainConfig(epochs=1))
    assert len(hist) == 1 and hist.records[0].epoch == 1
    w.check(CFG8)


def test_history_csv_and_epochs():
    _, hist = train(small_grid(), CFG8, TrainConfig(epochs=5, batch_patches=5))
    assert [r.epoch for r in hist.records] == [1, 2, 3, 4, 5]
    lines = hist.to_csv().strip().split("\n")
    assert lines[0] == "epoch,loss,psnr_db,ssim,seconds"
    assert len(lines) == 6


def test_history_psnr_matches_evaluation_of_epoch_outputs():
    # full-batch training: the epoch's predictions come from the weights before
    # the single update, so the score equals evaluating the initial weights
    grid = small_grid()
    init = init_weights(CFG8, 0)
    _, hist = train(grid, CFG8, TrainConfig(epochs=1), init=init)
    rep = evaluate(init, CFG8, grid)
    assert hist.records[0].psnr_db == rep.psnr_db
    assert hist.records[0].ssim == rep.ssim


def test_deterministic():
    grid = small_grid()
    t = TrainConfig(epochs=15, batch_patches=6, seed=4)
    w1, h1 = train(grid, CFG8, t)
    w2, h2 = train(grid, CFG8, t)
    assert w1.equal(w2)
    assert h1.deterministic_part() == h2.deterministic_part()
    w3, _ = train(grid, CFG8, TrainConfig(epochs=15, batch_patches=6, seed=5))
    assert not w1.equal(w3)


def test_warm_start_does_not_mutate_init():
    grid = small_grid()
    init = init_weights(CFG8, 9)
    snapshot = init.to_bytes()
    train(grid, CFG8, TrainConfig(epochs=3), init=init)
    assert init.to_bytes() == snapshot


def test_early_stop():
    _, hist = train(small_grid(), CFG8, TrainConfig(epochs=500, target_psnr=20.0))
    assert len(hist) < 500 and hist.final_psnr >= 20.0
    assert hist.epochs_to(20.0) == len(hist)


def test_grid_mismatch():
    with pytest.raises(ShapeError):
        train(split_patches(gradient_image(32), 16, 16), CFG8, TrainConfig(epochs=1))


def test_evaluate_self_and_bpp():
    grid = small_grid()
    w = init_weights(CFG8, 1)
    recon = reconstruct(w, CFG8, grid)
    self_grid = split_patches(recon, 8, 8)
    rep = evaluate(w, CFG8, self_grid)
    assert rep.psnr_db == 100.0 and rep.ssim == pytest.approx(1.0)
    assert rep.bpp == 32 * w.total_params / (32 * 32)
    assert evaluate(w, CFG8, grid) == evaluate(w, CFG8, grid)


def test_train_many_matches_sequential():
    jobs = [
        TrainJob(small_grid(gradient_image(32)), CFG8, TrainConfig(epochs=8, seed=1)),
        TrainJob(small_grid(blob_image(32)), CFG8, TrainConfig(epochs=8, seed=2, batch_patches=4)),
    ]
    parallel = train_many(jobs, max_workers=2)
    for job, (w, h) in zip(jobs, parallel):
        ws, hs = train(job.grid, job.net_cfg, job.t_cfg)
        assert w.equal(ws) and h.deterministic_part() == hs.deterministic_part()


@pytest.mark.slow
def test_gradient_image_2000_epochs():
    cfg = make_config()
    grid = split_patches(gradient_image(64), 16, 16)
    _, hist = train(grid, cfg, TrainConfig(epochs=2000, log_every=0))
    assert hist.final_psnr >= 30.0
    losses = [r.loss for r in hist.records]
    assert np.mean(losses[-100:]) <= np.mean(losses[:100])
