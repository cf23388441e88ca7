"""Large-image compression: patch-indexed INR plus trajectory-coded weights."""

from .container import ColiFile, ImageMeta, decode_file, encode_file
from .hypercodec import CodecConfig, HyperArtifact, compress, decompress
from .inr_net import Block, NetConfig, Weights, init_weights, make_config
from .metrics import MetricsReport, ms_ssim, psnr, ssim
from .pixel_io import Image, PatchGrid, load_image, save_image, split_patches, stitch
from .trainer import TrainConfig, TrainHistory, evaluate, train

__version__ = "0.1.0"

__all__ = [
    "Block",
    "CodecConfig",
    "ColiFile",
    "HyperArtifact",
    "Image",
    "ImageMeta",
    "MetricsReport",
    "NetConfig",
    "PatchGrid",
    "TrainConfig",
    "TrainHistory",
    "Weights",
    "compress",
    "decode_file",
    "decompress",
    "encode_file",
    "evaluate",
    "init_weights",
    "load_image",
    "make_config",
    "ms_ssim",
    "psnr",
    "save_image",
    "split_patches",
    "ssim",
    "stitch",
    "train",
]
