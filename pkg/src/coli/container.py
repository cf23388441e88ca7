"""The ``.coli`` file: one image's network configuration plus its weights.

Layout (little-endian)::

    "COLI" | version u16 | payload_kind u8
    | width u32 | height u32 | channels u8 | patch_h u16 | patch_w u16 | patch_order u8
    | embed_freqs u16 | embed_base f64 | n_fc u8 | fc dims n_fc x u32
    | seed C0,h0,w0 3 x u32 | n_blocks u8 | (out u32, upscale u8, kernel u8) x n_blocks
    | activation u8 | out_channels u8 | head_kernel u8
    | payload_len u64 | payload | crc32 u32 (of every preceding byte)

Payload kinds: 0 raw weights, 1 hyper-compressed, 2 INT8, 3 low-rank,
4 sparse (bitmap pruning). Patch order 0 is row-major, top-left first.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import NamedTuple, Union

from ._binio import Reader, Writer
from .baselines import Int8Payload, LowRankPayload, SparsePayload
from .errors import ChecksumError, FormatError, ShapeError, TruncatedError, VersionError
from .hypercodec import HyperArtifact, decompress
from .inr_net import ACTIVATIONS, Block, NetConfig, Weights

MAGIC = b"COLI"
VERSION = 1
PATCH_ORDER_ROW_MAJOR = 0

KIND_RAW = 0
KIND_HYPER = 1
KIND_INT8 = 2
KIND_LOWRANK = 3
KIND_SPARSE = 4
KIND_NAMES = {
    KIND_RAW: "raw_weights",
    KIND_HYPER: "hyper",
    KIND_INT8: "int8",
    KIND_LOWRANK: "lowrank",
    KIND_SPARSE: "sparse",
}

Payload = Union[Weights, HyperArtifact, Int8Payload, LowRankPayload, SparsePayload]
_PAYLOAD_TYPES = {
    KIND_RAW: Weights,
    KIND_HYPER: HyperArtifact,
    KIND_INT8: Int8Payload,
    KIND_LOWRANK: LowRankPayload,
    KIND_SPARSE: SparsePayload,
}


@dataclass(frozen=True)
class ImageMeta:
    width: int
    height: int
    channels: int
    patch_h: int
    patch_w: int
    patch_order: int = PATCH_ORDER_ROW_MAJOR


class ColiFile(NamedTuple):
    meta: ImageMeta
    net_cfg: NetConfig
    payload: Payload

    @property
    def kind(self) -> int:
        return payload_kind(self.payload)


def payload_kind(payload: Payload) -> int:
    for kind, cls in _PAYLOAD_TYPES.items():
        if isinstance(payload, cls):
            return kind
    raise TypeError(f"unsupported payload type {type(payload).__name__}")


def payload_weights(payload: Payload) -> Weights:
    """Decode any payload to the float32 weights a decoder would run."""
    if isinstance(payload, Weights):
        return payload
    if isinstance(payload, HyperArtifact):
        return decompress(payload)
    return payload.to_weights()


def _write_config(w: Writer, cfg: NetConfig) -> None:
    w.pack("Hd", cfg.embed_freqs, cfg.embed_base)
    w.pack("B", len(cfg.fc_dims))
    w.pack(f"{len(cfg.fc_dims)}I", *cfg.fc_dims)
    w.pack("3I", *cfg.seed_shape)
    w.pack("B", len(cfg.blocks))
    for b in cfg.blocks:
        w.pack("IBB", b.out_channels, b.upscale, b.kernel)
    w.pack("BBB", ACTIVATIONS.index(cfg.activation), cfg.out_channels, cfg.head_kernel)


def _read_config(r: Reader) -> NetConfig:
    embed_freqs, embed_base = r.unpack("Hd")
    n_fc = r.unpack("B")
    fc = r.unpack(f"{n_fc}I") if n_fc else ()
    fc = (fc,) if isinstance(fc, int) else tuple(fc)
    seed = tuple(r.unpack("3I"))
    blocks = tuple(Block(*r.unpack("IBB")) for _ in range(r.unpack("B")))
    act, out_ch, head_k = r.unpack("BBB")
    if act >= len(ACTIVATIONS):
        raise FormatError(f"unknown activation id {act}")
    try:
        return NetConfig(embed_freqs, embed_base, fc, seed, blocks, ACTIVATIONS[act], out_ch, head_k)
    except ShapeError as exc:
        raise FormatError(f"invalid network config: {exc}") from exc


def _check_consistent(meta: ImageMeta, cfg: NetConfig, payload: Payload) -> None:
    if (meta.patch_h, meta.patch_w) != (cfg.patch_h, cfg.patch_w):
        raise ShapeError(f"meta patch {meta.patch_h}x{meta.patch_w} != network patch {cfg.patch_h}x{cfg.patch_w}")
    if meta.channels != cfg.out_channels:
        raise ShapeError(f"meta channels {meta.channels} != network out_channels {cfg.out_channels}")
    if meta.width < 1 or meta.height < 1:
        raise ShapeError("image dimensions must be positive")
    if meta.patch_order != PATCH_ORDER_ROW_MAJOR:
        raise ShapeError(f"unsupported patch order {meta.patch_order}")
    if isinstance(payload, Weights):
        payload.check(cfg)
    elif isinstance(payload, HyperArtifact):
        got = [(rec.name, tuple(rec.shape)) for rec in payload.layers]
        if got != cfg.layer_shapes():
            raise ShapeError("hyper artifact layers do not match network config")


def encode_file(meta: ImageMeta, cfg: NetConfig, payload: Payload) -> bytes:
    kind = payload_kind(payload)
    _check_consistent(meta, cfg, payload)
    w = Writer()
    w.raw(MAGIC)
    w.pack("HB", VERSION, kind)
    w.pack("IIBHHB", meta.width, meta.height, meta.channels, meta.patch_h, meta.patch_w, meta.patch_order)
    _write_config(w, cfg)
    body = payload.to_bytes()
    w.pack("Q", len(body))
    w.raw(body)
    head = w.getvalue()
    return head + (zlib.crc32(head) & 0xFFFFFFFF).to_bytes(4, "little")


def decode_file(data: bytes) -> ColiFile:
    """Parse a container. Raises a distinct error for bad magic, version, truncation and CRC."""
    if len(data) < 4:
        if MAGIC.startswith(bytes(data)):
            raise TruncatedError("unexpected end of stream")
        raise FormatError("not a COLI file")
    if bytes(data[:4]) != MAGIC:
        raise FormatError("not a COLI file")
    r = Reader(data, 4)
    version = r.unpack("H")
    if version != VERSION:
        raise VersionError(f"unsupported version {version}")
    kind = r.unpack("B")
    width, height, channels, p_h, p_w, order = r.unpack("IIBHHB")
    try:
        cfg = _read_config(r)
        cfg_error = None
    except FormatError as exc:
        if isinstance(exc, TruncatedError):
            raise
        cfg, cfg_error = None, exc
    payload_len = r.unpack("Q")
    if r.remaining < payload_len + 4:
        raise TruncatedError("unexpected end of stream")
    body_end = r.pos + payload_len
    stored = int.from_bytes(bytes(data[-4:]), "little")
    if zlib.crc32(bytes(data[:-4])) & 0xFFFFFFFF != stored:
        raise ChecksumError("CRC mismatch: file is corrupted")
    if body_end + 4 != len(data):
        raise FormatError(f"{len(data) - body_end - 4} unexpected bytes after payload")
    if cfg_error is not None:
        raise cfg_error
    if kind not in _PAYLOAD_TYPES:
        raise FormatError(f"unknown payload kind {kind}")
    payload = _PAYLOAD_TYPES[kind].from_bytes(bytes(data[r.pos : body_end]))
    meta = ImageMeta(width, height, channels, p_h, p_w, order)
    try:
        _check_consistent(meta, cfg, payload)
    except ShapeError as exc:
        raise FormatError(f"inconsistent container: {exc}") from exc
    return ColiFile(meta, cfg, payload)
