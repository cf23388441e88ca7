"""End-to-end operations behind the CLI: compress, decompress, eval, bench."""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Optional

import numpy as np

from . import baselines, hypercodec, metrics
from .container import ImageMeta, Payload, decode_file, encode_file, payload_weights
from .errors import ShapeError
from .inr_net import NetConfig, Weights
from .pixel_io import Image, PatchGrid, split_patches
from .trainer import TrainConfig, TrainHistory, evaluate, reconstruct, train

log = logging.getLogger(__name__)


@dataclass
class CompressResult:
    data: bytes
    report: metrics.MetricsReport
    weights: Weights  # trained weights before any post-training compression
    history: TrainHistory
    net_cfg: NetConfig


def meta_for(img: Image, cfg: NetConfig) -> ImageMeta:
    return ImageMeta(img.width, img.height, img.channels, cfg.patch_h, cfg.patch_w)


def grid_for(img: Image, cfg: NetConfig) -> PatchGrid:
    return split_patches(img, cfg.patch_h, cfg.patch_w)


def load_init(data: bytes, cfg: NetConfig) -> Weights:
    """Warm-start weights from a donor container; its architecture must match ``cfg``."""
    donor = decode_file(data)
    if donor.net_cfg != cfg:
        raise ShapeError(f"donor architecture {donor.net_cfg.to_dict()} does not match {cfg.to_dict()}")
    return payload_weights(donor.payload)


def package(img: Image, cfg: NetConfig, payload: Payload) -> tuple[bytes, metrics.MetricsReport]:
    """Encode ``payload`` into a container and score what a decoder would reconstruct."""
    data = encode_file(meta_for(img, cfg), cfg, payload)
    rep = evaluate(payload_weights(payload), cfg, grid_for(img, cfg), payload_bytes=len(data))
    return data, rep


def compress_image(
    img: Image,
    net_cfg: NetConfig,
    t_cfg: TrainConfig,
    hc: Optional[hypercodec.CodecConfig] = hypercodec.CodecConfig(),
    init: Optional[Weights] = None,
) -> CompressResult:
    """Train on ``img`` then store raw weights (``hc=None``) or a hyper artifact."""
    grid = grid_for(img, net_cfg)
    weights, history = train(grid, net_cfg, t_cfg, init=init)
    payload: Payload = weights if hc is None else hypercodec.compress(weights, hc)
    data, rep = package(img, net_cfg, payload)
    return CompressResult(data, rep, weights, history, net_cfg)


def decompress_bytes(data: bytes) -> Image:
    f = decode_file(data)
    grid_shape = split_shape(f.meta)
    return reconstruct(payload_weights(f.payload), f.net_cfg, grid_shape)


def split_shape(meta: ImageMeta) -> PatchGrid:
    """A pixel-free grid carrying only geometry, for decoding."""
    rows = -(-meta.height // meta.patch_h)
    cols = -(-meta.width // meta.patch_w)
    return PatchGrid(
        patch_h=meta.patch_h,
        patch_w=meta.patch_w,
        rows=rows,
        cols=cols,
        orig_h=meta.height,
        orig_w=meta.width,
        channels=meta.channels,
        patches=np.zeros((rows * cols, meta.patch_h, meta.patch_w, meta.channels), np.uint8),
    )


def eval_bytes(data: bytes, img: Image) -> metrics.MetricsReport:
    f = decode_file(data)
    if (f.meta.width, f.meta.height, f.meta.channels) != (img.width, img.height, img.channels):
        raise ShapeError("reference image does not match the container's image geometry")
    recon = reconstruct(payload_weights(f.payload), f.net_cfg, split_shape(f.meta))
    return metrics.report(img, recon, len(data))


# ---------------------------------------------------------------------------
# Bench
# ---------------------------------------------------------------------------

BENCH_METHODS = ("none", "HC", "P", "LR", "Q", "P+HC", "LR+HC")
BENCH_FIELDS = ("method", "bpp", "psnr_db", "ssim", "ms_ssim", "payload_bytes", "dense_bpp")


@dataclass
class BenchRow:
    method: str
    bpp: float
    psnr_db: float
    ssim: float
    ms_ssim: float
    payload_bytes: int
    dense_bpp: float  # size if zeroed/reduced weights were stored as raw float32


def _payload_for(
    method: str, w: Weights, hc: hypercodec.CodecConfig, prune_ratio: float, rank_frac: float
) -> tuple[Payload, Weights]:
    """Returns the stored payload and the dense weights it represents."""
    if method == "none":
        return w, w
    if method == "HC":
        return hypercodec.compress(w, hc), w
    if method == "Q":
        p = baselines.ptq_int8(w)
        return p, p.to_weights()
    if method == "P":
        pruned = baselines.prune_l1(w, prune_ratio)
        return baselines.SparsePayload(pruned), pruned
    if method == "LR":
        p = baselines.lowrank_compress(w, rank_frac)
        return p, p.to_weights()
    if method == "P+HC":
        pruned = baselines.prune_l1(w, prune_ratio)
        return hypercodec.compress(pruned, hc), pruned
    if method == "LR+HC":
        reduced = baselines.lowrank_weights(w, rank_frac)
        return hypercodec.compress(reduced, hc), reduced
    raise ValueError(f"unknown bench method {method!r}")


def bench_variant(
    method: str,
    img: Image,
    cfg: NetConfig,
    w: Weights,
    hc: hypercodec.CodecConfig = hypercodec.CodecConfig(),
    prune_ratio: float = 0.3,
    rank_frac: float = 0.5,
) -> BenchRow:
    payload, dense = _payload_for(method, w, hc, prune_ratio, rank_frac)
    _, rep = package(img, cfg, payload)
    dense_bytes = len(encode_file(meta_for(img, cfg), cfg, dense))
    return BenchRow(
        method, rep.bpp, rep.psnr_db, rep.ssim, rep.ms_ssim, rep.payload_bytes,
        metrics.bpp(dense_bytes, img.width, img.height),
    )


def run_bench(
    img: Image,
    net_cfg: NetConfig,
    t_cfg: TrainConfig,
    hc: hypercodec.CodecConfig = hypercodec.CodecConfig(),
    prune_ratio: float = 0.3,
    rank_frac: float = 0.5,
    jobs: int = 1,
    weights: Optional[Weights] = None,
    methods: tuple[str, ...] = BENCH_METHODS,
) -> list[BenchRow]:
    """Train once (unless ``weights`` is given) and score every method; rows keep ``methods`` order."""
    if weights is None:
        weights, _ = train(grid_for(img, net_cfg), net_cfg, t_cfg)
    job: Callable[[str], BenchRow] = lambda m: bench_variant(m, img, net_cfg, weights, hc, prune_ratio, rank_frac)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(job, methods))
    return [job(m) for m in methods]


def bench_csv(rows: list[BenchRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BENCH_FIELDS)
    for r in rows:
        writer.writerow([getattr(r, f) for f in BENCH_FIELDS])
    return buf.getvalue()


def bench_json(rows: list[BenchRow]) -> str:
    return json.dumps([asdict(r) for r in rows], indent=2)

