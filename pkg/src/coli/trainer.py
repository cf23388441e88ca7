"""Fitting one patch-indexed network per image.

Every epoch visits all patches in shuffled minibatches and updates the
weights with Adam. The predictions produced during the epoch are reused to
score PSNR/SSIM for the history, so metrics cost no extra forward pass.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import metrics
from .errors import NumericError, ShapeError
from .inr_net import NetConfig, Weights, forward_batch, init_weights, loss_and_grad
from .pixel_io import Image, PatchGrid, stitch_array

log = logging.getLogger(__name__)

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 2000
    lr: float = 5e-3
    lr_schedule: bool = True  # cosine decay to zero over all steps
    batch_patches: Optional[int] = None  # None -> all patches per step
    seed: int = 0
    target_psnr: Optional[float] = None
    log_every: int = 100

    def __post_init__(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.batch_patches is not None and self.batch_patches < 1:
            raise ValueError("batch_patches must be >= 1")


@dataclass(frozen=True)
class EpochRecord:
    epoch: int
    loss: float
    psnr_db: float
    ssim: float
    seconds: float


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def final_psnr(self) -> float:
        return self.records[-1].psnr_db

    def epochs_to(self, psnr_db: float) -> Optional[int]:
        """First epoch whose PSNR reached ``psnr_db``, or None."""
        for rec in self.records:
            if rec.psnr_db >= psnr_db:
                return rec.epoch
        return None

    def deterministic_part(self) -> list[tuple[int, float, float, float]]:
        """Records without wall-clock time, for reproducibility checks."""
        return [(r.epoch, r.loss, r.psnr_db, r.ssim) for r in self.records]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["epoch", "loss", "psnr_db", "ssim", "seconds"])
        for r in self.records:
            writer.writerow([r.epoch, repr(r.loss), repr(r.psnr_db), repr(r.ssim), f"{r.seconds:.6f}"])
        return buf.getvalue()


def recon_loss(preds: Sequence[np.ndarray], targets: Sequence[np.ndarray]) -> float:
    """Mean over patches of each patch's mean squared error."""
    if len(preds) != len(targets):
        raise ShapeError(f"{len(preds)} predictions vs {len(targets)} targets")
    if not preds:
        raise ShapeError("empty patch list")
    per_patch = []
    for p, t in zip(preds, targets):
        p, t = np.asarray(p, dtype=np.float64), np.asarray(t, dtype=np.float64)
        if p.shape != t.shape:
            raise ShapeError(f"prediction shape {p.shape} != target shape {t.shape}")
        per_patch.append(np.mean((p - t) ** 2))
    return float(np.mean(per_patch))


def to_uint8(x: np.ndarray) -> np.ndarray:
    """Clamp [0, 1] floats and quantise to 8-bit."""
    return np.rint(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def _stitch_preds(preds: np.ndarray, grid: PatchGrid) -> np.ndarray:
    """``(N, C, P_H, P_W)`` floats -> ``(H, W, C)`` uint8 image array."""
    return stitch_array(
        to_uint8(preds).transpose(0, 2, 3, 1), grid.rows, grid.cols, grid.orig_h, grid.orig_w
    )


def _check_grid(grid: PatchGrid, cfg: NetConfig) -> None:
    if (grid.patch_h, grid.patch_w) != (cfg.patch_h, cfg.patch_w):
        raise ShapeError(
            f"grid patches are {grid.patch_h}x{grid.patch_w} but network emits {cfg.patch_h}x{cfg.patch_w}"
        )
    if grid.channels != cfg.out_channels:
        raise ShapeError(f"grid has {grid.channels} channels, network emits {cfg.out_channels}")


def _original(grid: PatchGrid) -> np.ndarray:
    return stitch_array(grid.patches, grid.rows, grid.cols, grid.orig_h, grid.orig_w)


def _score(pred_img: np.ndarray, orig: np.ndarray) -> tuple[float, float]:
    p = metrics.psnr(orig, pred_img)
    s = metrics.ssim(orig, pred_img) if min(orig.shape[:2]) >= metrics.WIN else float("nan")
    return p, s


def train(
    grid: PatchGrid,
    net_cfg: NetConfig,
    t_cfg: TrainConfig,
    init: Optional[Weights] = None,
    callback: Optional[Callable[[EpochRecord], None]] = None,
) -> tuple[Weights, TrainHistory]:
    """Fit ``net_cfg`` to every patch of ``grid``.

    ``init`` warm-starts from existing weights (copied, never mutated);
    otherwise weights come from :func:`init_weights` with ``t_cfg.seed``.
    """
    _check_grid(grid, net_cfg)
    n = grid.n
    batch = min(t_cfg.batch_patches or n, n)
    if init is not None:
        init.check(net_cfg)
        start = init
    else:
        start = init_weights(net_cfg, t_cfg.seed)

    names = start.names
    master = {k: start[k].astype(np.float64) for k in names}
    m1 = {k: np.zeros_like(v) for k, v in master.items()}
    m2 = {k: np.zeros_like(v) for k, v in master.items()}
    current = Weights({k: master[k].astype(np.float32) for k in names})

    targets = grid.targets(np.float32)
    orig = _original(grid)
    rng = np.random.default_rng([t_cfg.seed, 1])
    steps_per_epoch = math.ceil(n / batch)
    total_steps = t_cfg.epochs * steps_per_epoch
    step = 0
    history = TrainHistory()
    preds = np.empty_like(targets)
    t0 = time.perf_counter()

    for epoch in range(1, t_cfg.epochs + 1):
        order = rng.permutation(n) + 1
        loss_sum = 0.0
        for b0 in range(0, n, batch):
            idx = order[b0 : b0 + batch]
            try:
                loss, grads, out = loss_and_grad(current, net_cfg, idx, n, targets[idx - 1])
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}: {exc}") from exc
            preds[idx - 1] = out
            loss_sum += loss * len(idx)

            step += 1
            lr = t_cfg.lr
            if t_cfg.lr_schedule:
                lr = t_cfg.lr * 0.5 * (1.0 + math.cos(math.pi * (step - 1) / total_steps))
            bc1 = 1.0 - ADAM_BETA1**step
            bc2 = 1.0 - ADAM_BETA2**step
            for k in names:
                g = grads[k].astype(np.float64)
                m1[k] = ADAM_BETA1 * m1[k] + (1.0 - ADAM_BETA1) * g
                m2[k] = ADAM_BETA2 * m2[k] + (1.0 - ADAM_BETA2) * g * g
                master[k] -= lr * (m1[k] / bc1) / (np.sqrt(m2[k] / bc2) + ADAM_EPS)
            current = Weights({k: master[k].astype(np.float32) for k in names})

        mean_loss = loss_sum / n
        psnr_db, ssim_val = _score(_stitch_preds(preds, grid), orig)
        rec = EpochRecord(epoch, mean_loss, psnr_db, ssim_val, time.perf_counter() - t0)
        history.records.append(rec)
        if callback is not None:
            callback(rec)
        if t_cfg.log_every and epoch % t_cfg.log_every == 0:
            log.info("epoch %d loss %.6g psnr %.2f ssim %.4f", epoch, mean_loss, psnr_db, ssim_val)
        if t_cfg.target_psnr is not None and psnr_db >= t_cfg.target_psnr:
            break

    return current, history


def reconstruct(w: Weights, net_cfg: NetConfig, grid: PatchGrid, chunk: int = 256) -> Image:
    """Decode every patch index and stitch, clamped and quantised to 8-bit."""
    n = grid.n
    outs = [
        forward_batch(w, net_cfg, np.arange(s, min(s + chunk, n + 1)), n)
        for s in range(1, n + 1, chunk)
    ]
    return Image.from_array(np.ascontiguousarray(_stitch_preds(np.concatenate(outs), grid)))


def evaluate(
    w: Weights, net_cfg: NetConfig, grid: PatchGrid, payload_bytes: Optional[int] = None
) -> metrics.MetricsReport:
    """Score the network's reconstruction against the grid's image.

    ``payload_bytes`` defaults to raw 32-bit storage of every parameter.
    """
    w.check(net_cfg)
    _check_grid(grid, net_cfg)
    recon = reconstruct(w, net_cfg, grid)
    if payload_bytes is None:
        payload_bytes = 4 * w.total_params
    return metrics.report(_original(grid), recon, payload_bytes)


@dataclass(frozen=True)
class TrainJob:
    grid: PatchGrid
    net_cfg: NetConfig
    t_cfg: TrainConfig
    init: Optional[Weights] = None


def train_many(jobs: Sequence[TrainJob], max_workers: Optional[int] = None) -> list[tuple[Weights, TrainHistory]]:
    """Run independent training jobs concurrently; results keep the input order."""
    with ThreadPoolExecutor(max_workers=max_workers or len(jobs) or 1) as pool:
        futures = [pool.submit(train, j.grid, j.net_cfg, j.t_cfg, j.init) for j in jobs]
        return [f.result() for f in futures]
