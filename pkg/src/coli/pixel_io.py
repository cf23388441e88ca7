"""Image loading/saving and the indexed patch grid consumed by the INR.

Patches are enumerated row-major, top-left first. Public patch indices are
1-based (``1..N``); arrays are indexed 0-based, so ``grid.patches[i - 1]``
is patch ``i``.
"""

from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass

import numpy as np

from .errors import FormatError, ShapeError, TruncatedError

MAX_SAMPLES = 1 << 31


@dataclass(frozen=True)
class Image:
    """8-bit image stored as an ``(height, width, channels)`` uint8 array."""

    width: int
    height: int
    channels: int
    data: np.ndarray

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ShapeError(f"image dimensions must be positive, got {self.width}x{self.height}")
        if self.channels not in (1, 3):
            raise ShapeError(f"channels must be 1 or 3, got {self.channels}")
        if self.data.shape != (self.height, self.width, self.channels):
            raise ShapeError(
                f"data shape {self.data.shape} does not match "
                f"{(self.height, self.width, self.channels)}"
            )

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "Image":
        """Wrap an (H, W) or (H, W, C) array; values are clipped and rounded to uint8."""
        arr = np.asarray(arr)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.dtype != np.uint8:
            arr = np.clip(np.rint(arr), 0, 255).astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, data=arr)

    def tobytes(self) -> bytes:
        return self.data.tobytes()

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Image):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.channels == other.channels
            and np.array_equal(self.data, other.data)
        )


@dataclass(frozen=True)
class PatchGrid:
    patch_h: int
    patch_w: int
    rows: int
    cols: int
    orig_h: int
    orig_w: int
    channels: int
    patches: np.ndarray  # (N, patch_h, patch_w, channels) uint8

    @property
    def n(self) -> int:
        return self.rows * self.cols

    def patch(self, i: int) -> np.ndarray:
        """Return patch ``i`` (1-based)."""
        if not 1 <= i <= self.n:
            raise IndexError(f"patch index {i} outside 1..{self.n}")
        return self.patches[i - 1]

    def targets(self, dtype=np.float32) -> np.ndarray:
        """Patches as ``(N, C, P_H, P_W)`` floats in [0, 1]."""
        return (self.patches.transpose(0, 3, 1, 2).astype(dtype) / 255.0).astype(dtype)


def patch_count(height: int, width: int, p_h: int, p_w: int) -> int:
    return math.ceil(height / p_h) * math.ceil(width / p_w)


def split_patches(img: Image, p_h: int, p_w: int) -> PatchGrid:
    """Tile ``img`` into ``ceil(H/p_h) * ceil(W/p_w)`` patches, edge-replicating the margins."""
    if p_h < 1 or p_w < 1:
        raise ValueError(f"patch size must be positive, got {p_h}x{p_w}")
    rows = math.ceil(img.height / p_h)
    cols = math.ceil(img.width / p_w)
    pad_h = rows * p_h - img.height
    pad_w = cols * p_w - img.width
    padded = np.pad(img.data, ((0, pad_h), (0, pad_w), (0, 0)), mode="edge")
    patches = (
        padded.reshape(rows, p_h, cols, p_w, img.channels)
        .transpose(0, 2, 1, 3, 4)
        .reshape(rows * cols, p_h, p_w, img.channels)
    )
    return PatchGrid(
        patch_h=p_h,
        patch_w=p_w,
        rows=rows,
        cols=cols,
        orig_h=img.height,
        orig_w=img.width,
        channels=img.channels,
        patches=np.ascontiguousarray(patches),
    )


def stitch_array(patches: np.ndarray, rows: int, cols: int, orig_h: int, orig_w: int) -> np.ndarray:
    """Reassemble ``(N, P_H, P_W, C)`` patches of any dtype and crop to the original size."""
    n, p_h, p_w, c = patches.shape
    if n != rows * cols:
        raise ShapeError(f"grid has {n} patches but rows*cols = {rows * cols}")
    full = patches.reshape(rows, cols, p_h, p_w, c).transpose(0, 2, 1, 3, 4)
    return full.reshape(rows * p_h, cols * p_w, c)[:orig_h, :orig_w]


def stitch(grid: PatchGrid) -> Image:
    arr = stitch_array(grid.patches, grid.rows, grid.cols, grid.orig_h, grid.orig_w)
    return Image.from_array(np.ascontiguousarray(arr))


# ---------------------------------------------------------------------------
# File formats
# ---------------------------------------------------------------------------

_PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def _read_pnm(raw: bytes) -> Image:
    magic = raw[:2]
    channels = {b"P5": 1, b"P6": 3}[magic]
    pos = 2
    fields: list[int] = []
    while len(fields) < 3:
        # skip whitespace and comments
        while pos < len(raw) and (raw[pos : pos + 1].isspace() or raw[pos : pos + 1] == b"#"):
            if raw[pos : pos + 1] == b"#":
                while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                    pos += 1
            else:
                pos += 1
        start = pos
        while pos < len(raw) and raw[pos : pos + 1].isdigit():
            pos += 1
        if start == pos:
            if pos >= len(raw):
                raise TruncatedError("unexpected end of stream")
            raise FormatError(f"malformed PNM header at byte {pos}")
        fields.append(int(raw[start:pos]))
    if pos >= len(raw):
        raise TruncatedError("unexpected end of stream")
    pos += 1  # single whitespace byte before the raster
    width, height, maxval = fields
    if width < 1 or height < 1:
        raise FormatError(f"invalid PNM dimensions {width}x{height}")
    if not 0 < maxval <= 255:
        raise FormatError(f"unsupported PNM maxval {maxval} (only 8-bit samples)")
    count = width * height * channels
    if count > MAX_SAMPLES:
        raise FormatError(f"image of {width}x{height}x{channels} exceeds sample limit")
    body = raw[pos : pos + count]
    if len(body) < count:
        raise TruncatedError("unexpected end of stream")
    data = np.frombuffer(body, dtype=np.uint8).reshape(height, width, channels).copy()
    if maxval != 255:
        data = np.rint(data.astype(np.float64) * 255.0 / maxval).astype(np.uint8)
    return Image(width=width, height=height, channels=channels, data=data)


def _read_png(raw: bytes) -> Image:
    from PIL import Image as PILImage

    try:
        with PILImage.open(io.BytesIO(raw)) as im:
            im.load()
            if im.width * im.height * 3 > MAX_SAMPLES:
                raise FormatError("PNG exceeds sample limit")
            if im.mode in ("L", "1", "P") and not (im.mode == "P" and "transparency" in im.info):
                conv = im.convert("L") if im.mode != "P" else im.convert("RGB")
            elif im.mode in ("I;16", "I", "I;16B"):
                raise FormatError("16-bit PNG is not supported")
            else:
                conv = im.convert("RGB")
            arr = np.asarray(conv, dtype=np.uint8)
    except (OSError, SyntaxError) as exc:
        if "truncated" in str(exc).lower() or "end of" in str(exc).lower():
            raise TruncatedError("unexpected end of stream") from exc
        raise FormatError(f"unreadable PNG: {exc}") from exc
    return Image.from_array(arr)


def load_image(path: str | os.PathLike) -> Image:
    """Read a binary PGM (P5), PPM (P6) or PNG file."""
    try:
        with open(path, "rb") as fh:
            raw = fh.read()
    except OSError as exc:
        raise FormatError(f"cannot read {path}: {exc}") from exc
    if raw[:2] in (b"P5", b"P6"):
        return _read_pnm(raw)
    if raw[:8] == _PNG_MAGIC:
        return _read_png(raw)
    if len(raw) < 2:
        raise TruncatedError("unexpected end of stream")
    raise FormatError(f"unsupported image format in {path}")


def encode_pnm(img: Image) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    return magic + f"\n{img.width} {img.height}\n255\n".encode("ascii") + img.tobytes()


def save_image(img: Image, path: str | os.PathLike) -> None:
    """Write ``img``; format follows the extension (.png, else PGM/PPM)."""
    path = os.fspath(path)
    if path.lower().endswith(".png"):
        from PIL import Image as PILImage

        arr = img.data[:, :, 0] if img.channels == 1 else img.data
        PILImage.fromarray(arr, mode="L" if img.channels == 1 else "RGB").save(path, format="PNG")
        return
    with open(path, "wb") as fh:
        fh.write(encode_pnm(img))
