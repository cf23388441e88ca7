"""Hyper-Compression of network weights by ergodic trajectory indexing.

Each layer is affinely mapped into ``[lo, hi]``, cut into groups of ``G``
consecutive values, and every group is replaced by one integer ``k`` such
that the torus point ``(frac(k * a_1), ..., frac(k * a_G))`` with
``a_n = 1 / (pi + n)`` is as close as possible to the group. Groups whose
values spread far from their mean are first pulled toward the range
midpoint by a power-of-two factor (the group's *class*), stored in 2 bits.

The search is exhaustive over ``k = 0 .. 2**k_bits - 1``: the trajectory
table is indexed by a KD-tree under the same norm, and the final choice
among near-ties is made by recomputing the exact error, smallest ``k``
first, so the result equals a brute-force scan.

Artifact layout (little-endian)::

    header : G u8 | k_bits u8 | lo f32 | hi f32 | class_factors 4 x f32
             | error_norm u8 | total_params u64 | layer_count u32
    layer  : name (u16 len + utf-8) | rank u8 | dims rank x u32
             | element_count u64 | flags u8 | m f32 | M f32
             | packed records | tail f32 x (count mod G)

Records are ``(k << 2) | class`` values, ``k_bits + 2`` bits each, packed
LSB-first and padded to a byte boundary per layer. Constant layers
(flag bit 0) store no records and no tail.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

from ._binio import Reader, Writer
from .errors import FormatError, NumericError
from .inr_net import Weights

NORMS = ("linf", "l2")
K_BITS_ALLOWED = (8, 12, 16)
FLAG_CONSTANT = 1
HEADER_BYTES = 1 + 1 + 4 + 4 + 16 + 1 + 8 + 4


def _f32(x: float) -> float:
    return float(np.float32(x))


def worker_count() -> int:
    """Thread cap from ``COLI_THREADS`` (default: all cores)."""
    env = os.environ.get("COLI_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


@dataclass(frozen=True)
class CodecConfig:
    group_size: int = 2
    k_bits: int = 16
    target_range: tuple[float, float] = (0.05, 0.95)
    class_factors: tuple[float, float, float, float] = (1.0, 0.5, 0.25, 0.125)
    error_norm: str = "linf"

    def __post_init__(self) -> None:
        # lo/hi/factors are stored as f32; use the stored values everywhere
        lo, hi = (_f32(v) for v in self.target_range)
        object.__setattr__(self, "target_range", (lo, hi))
        object.__setattr__(self, "class_factors", tuple(_f32(f) for f in self.class_factors))
        if not 1 <= self.group_size <= 8:
            raise ValueError(f"group_size must be in 1..8, got {self.group_size}")
        if self.k_bits not in K_BITS_ALLOWED:
            raise ValueError(f"k_bits must be one of {K_BITS_ALLOWED}, got {self.k_bits}")
        if not 0.0 <= lo < hi <= 1.0:
            raise ValueError(f"target_range must satisfy 0 <= lo < hi <= 1, got {self.target_range}")
        if len(self.class_factors) != 4 or not all(0 < f <= 1 for f in self.class_factors):
            raise ValueError("class_factors must be four values in (0, 1]")
        if self.error_norm not in NORMS:
            raise ValueError(f"error_norm must be one of {NORMS}")

    @property
    def k_max(self) -> int:
        return (1 << self.k_bits) - 1

    @property
    def lo(self) -> float:
        return self.target_range[0]

    @property
    def hi(self) -> float:
        return self.target_range[1]

    @property
    def record_bits(self) -> int:
        return self.k_bits + 2


@dataclass
class LayerRecord:
    name: str
    shape: tuple[int, ...]
    element_count: int
    m: float
    M: float
    constant: bool
    k: np.ndarray  # (n_groups,) uint32
    class_id: np.ndarray  # (n_groups,) uint8
    tail: np.ndarray  # (count mod G,) float32
    errors: Optional[np.ndarray] = None  # search error per group; not serialised


@dataclass
class HyperArtifact:
    config: CodecConfig
    layers: list[LayerRecord] = field(default_factory=list)
    total_params: int = 0

    def to_bytes(self) -> bytes:
        w = Writer()
        write_artifact(w, self)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "HyperArtifact":
        r = Reader(data)
        art = read_artifact(r)
        if r.remaining:
            raise FormatError(f"{r.remaining} trailing bytes after artifact")
        return art

    @property
    def nbytes(self) -> int:
        return len(self.to_bytes())


# ---------------------------------------------------------------------------
# Scalar building blocks
# ---------------------------------------------------------------------------


def tau(z):
    """Fractional part ``z - floor(z)``, in [0, 1)."""
    arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise NumericError("tau of non-finite value")
    out = arr - np.floor(arr)
    out = np.where(out >= 1.0, 0.0, out)  # tiny negatives round up to 1.0
    return float(out) if out.ndim == 0 else out


def basis(n):
    """``a_n = 1 / (pi + n)`` for 1-based position ``n``."""
    n_arr = np.asarray(n, dtype=np.float64)
    if np.any(n_arr < 1):
        raise ValueError("basis position must be >= 1")
    out = 1.0 / (math.pi + n_arr)
    return float(out) if out.ndim == 0 else out


@lru_cache(maxsize=None)
def trajectory(group_size: int, k_bits: int) -> np.ndarray:
    """Table of ``frac(k * a_n)`` for every index ``k``; shape ``(2**k_bits, G)``."""
    k = np.arange(1 << k_bits, dtype=np.float64)[:, None]
    z = k * basis(np.arange(1, group_size + 1))[None, :]
    table = z - np.floor(z)
    table.setflags(write=False)
    return table


@lru_cache(maxsize=None)
def _tree(group_size: int, k_bits: int) -> cKDTree:
    return cKDTree(trajectory(group_size, k_bits), balanced_tree=False, compact_nodes=False)


def normalize_layer(values: np.ndarray, cfg: CodecConfig) -> tuple[np.ndarray, float, float, bool]:
    """Affine map of a layer into ``[lo, hi]``.

    Returns ``(normalized, m, M, constant_flag)``; ``m`` and ``M`` are the
    layer's float32 min and max. A constant layer yields an all-``lo`` array.
    """
    v = np.asarray(values, dtype=np.float32).ravel()
    if v.size == 0:
        raise ValueError("cannot normalise an empty layer")
    if not np.all(np.isfinite(v)):
        raise NumericError("non-finite weight")
    m, big_m = float(v.min()), float(v.max())
    if big_m == m:
        return np.full(v.shape, cfg.lo), m, big_m, True
    scale = (cfg.hi - cfg.lo) / (big_m - m)
    return cfg.lo + (v.astype(np.float64) - m) * scale, m, big_m, False


def denormalize_layer(v: np.ndarray, m: float, big_m: float, cfg: CodecConfig) -> np.ndarray:
    return (m + (np.asarray(v, dtype=np.float64) - cfg.lo) * ((big_m - m) / (cfg.hi - cfg.lo))).astype(
        np.float32
    )


def select_class(group: np.ndarray, cfg: CodecConfig):
    """Scaling class for normalised groups (``(G,)`` or ``(n, G)``).

    With ``d`` the largest deviation from the group mean, the class is the
    smallest ``s`` with ``d * class_factors[s] <= (hi - lo) / 4``, else 0.
    """
    g = np.asarray(group, dtype=np.float64)
    single = g.ndim == 1
    g = np.atleast_2d(g)
    d = np.max(np.abs(g - g.mean(axis=1, keepdims=True)), axis=1)
    bound = (cfg.hi - cfg.lo) / 4.0
    cls = np.zeros(len(g), dtype=np.uint8)
    assigned = np.zeros(len(g), dtype=bool)
    for s, f in enumerate(cfg.class_factors):
        ok = ~assigned & (d * f <= bound)
        cls[ok] = s
        assigned |= ok
    return int(cls[0]) if single else cls


def apply_class(v: np.ndarray, factor) -> np.ndarray:
    """Shrink deviations about 0.5 by ``factor``."""
    return 0.5 + (np.asarray(v, dtype=np.float64) - 0.5) * factor


def invert_class(v: np.ndarray, factor) -> np.ndarray:
    return 0.5 + (np.asarray(v, dtype=np.float64) - 0.5) / factor


def group_error(v: np.ndarray, table_rows: np.ndarray, norm: str) -> np.ndarray:
    diff = np.abs(table_rows - v)
    if norm == "linf":
        return diff.max(axis=-1)
    return np.sqrt(np.sum(diff * diff, axis=-1))


def search_theta(groups: np.ndarray, cfg: CodecConfig, workers: Optional[int] = None):
    """Best trajectory index for each group over ``k = 0 .. K_max``.

    Accepts ``(G,)`` (returns ``(k, err)``) or ``(n, G)`` (returns arrays).
    Ties go to the smallest ``k``.
    """
    g = np.asarray(groups, dtype=np.float64)
    single = g.ndim == 1
    g = np.atleast_2d(g)
    if g.shape[1] != cfg.group_size:
        raise ValueError(f"groups must have {cfg.group_size} values, got {g.shape[1]}")
    table = trajectory(cfg.group_size, cfg.k_bits)
    tree = _tree(cfg.group_size, cfg.k_bits)
    p = np.inf if cfg.error_norm == "linf" else 2
    workers = workers or worker_count()
    if len(g) == 0:
        return np.zeros(0, np.uint32), np.zeros(0)
    dist, _ = tree.query(g, k=1, p=p, workers=workers)
    # widen a hair so every index whose exact error ties the minimum is a candidate
    radius = dist * (1.0 + 1e-9) + 1e-12
    candidates = tree.query_ball_point(g, radius, p=p, workers=workers)
    best_k = np.empty(len(g), dtype=np.uint32)
    best_err = np.empty(len(g), dtype=np.float64)
    for row, cand in enumerate(candidates):
        cand = np.sort(np.asarray(cand, dtype=np.int64))
        errs = group_error(g[row], table[cand], cfg.error_norm)
        j = int(np.argmin(errs))  # first minimum -> smallest k
        best_k[row] = cand[j]
        best_err[row] = errs[j]
    if single:
        return int(best_k[0]), float(best_err[0])
    return best_k, best_err


# ---------------------------------------------------------------------------
# Whole-model compression
# ---------------------------------------------------------------------------


def compress_layer(name: str, values: np.ndarray, cfg: CodecConfig, workers: Optional[int] = None) -> LayerRecord:
    arr = np.asarray(values, dtype=np.float32)
    flat = arr.ravel()
    v, m, big_m, constant = normalize_layer(flat, cfg)
    g = cfg.group_size
    n_groups = flat.size // g if not constant else 0
    if constant:
        return LayerRecord(
            name, arr.shape, flat.size, m, big_m, True,
            np.zeros(0, np.uint32), np.zeros(0, np.uint8), np.zeros(0, np.float32), np.zeros(0),
        )
    groups = v[: n_groups * g].reshape(n_groups, g)
    cls = select_class(groups, cfg) if n_groups else np.zeros(0, np.uint8)
    factors = np.asarray(cfg.class_factors)[cls][:, None]
    k, err = search_theta(apply_class(groups, factors), cfg, workers)
    tail = flat[n_groups * g :].astype(np.float32)
    return LayerRecord(name, arr.shape, flat.size, m, big_m, False, k, cls, tail, err)


def compress(w: Weights, cfg: CodecConfig = CodecConfig(), workers: Optional[int] = None) -> HyperArtifact:
    """Compress every tensor of ``w``; deterministic for any worker count."""
    layers = [compress_layer(name, t, cfg, workers) for name, t in w]
    return HyperArtifact(cfg, layers, w.total_params)


def decompress_layer(rec: LayerRecord, cfg: CodecConfig) -> np.ndarray:
    if rec.constant:
        return np.full(rec.shape, rec.m, dtype=np.float32)
    g = cfg.group_size
    n_groups = rec.element_count // g
    if len(rec.k) != n_groups or len(rec.class_id) != n_groups or len(rec.tail) != rec.element_count - n_groups * g:
        raise FormatError(f"layer {rec.name!r}: record counts do not match element_count")
    if np.any(rec.class_id > 3) or np.any(rec.k > cfg.k_max):
        raise FormatError(f"layer {rec.name!r}: record out of range")
    z = rec.k.astype(np.float64)[:, None] * basis(np.arange(1, g + 1))[None, :]
    traj = z - np.floor(z)
    factors = np.asarray(cfg.class_factors)[rec.class_id][:, None]
    v = invert_class(traj, factors)
    body = denormalize_layer(v.ravel(), rec.m, rec.M, cfg)
    return np.concatenate([body, rec.tail.astype(np.float32)]).reshape(rec.shape)


def decompress(art: HyperArtifact) -> Weights:
    return Weights({rec.name: decompress_layer(rec, art.config) for rec in art.layers})


def error_bound(rec: LayerRecord, cfg: CodecConfig) -> np.ndarray:
    """Per-group bound on ``|w - w'|`` implied by the search error."""
    if rec.errors is None:
        raise ValueError("search errors are only available on freshly compressed records")
    factors = np.asarray(cfg.class_factors)[rec.class_id]
    return rec.errors * (rec.M - rec.m) / ((cfg.hi - cfg.lo) * factors)


# ---------------------------------------------------------------------------
# Serialisation
# ---------------------------------------------------------------------------


def pack_records(k: np.ndarray, class_id: np.ndarray, k_bits: int) -> bytes:
    width = k_bits + 2
    vals = (k.astype(np.uint64) << np.uint64(2)) | class_id.astype(np.uint64)
    bits = ((vals[:, None] >> np.arange(width, dtype=np.uint64)) & np.uint64(1)).astype(np.uint8)
    return np.packbits(bits.ravel(), bitorder="little").tobytes()


def unpack_records(data: bytes, n: int, k_bits: int) -> tuple[np.ndarray, np.ndarray]:
    width = k_bits + 2
    bits = np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")[: n * width]
    vals = bits.reshape(n, width).astype(np.uint64) @ (np.uint64(1) << np.arange(width, dtype=np.uint64))
    return (vals >> np.uint64(2)).astype(np.uint32), (vals & np.uint64(3)).astype(np.uint8)


def packed_len(n_groups: int, k_bits: int) -> int:
    return (n_groups * (k_bits + 2) + 7) // 8


def write_artifact(w: Writer, art: HyperArtifact) -> None:
    c = art.config
    w.pack("BBff", c.group_size, c.k_bits, c.lo, c.hi)
    w.pack("4f", *c.class_factors)
    w.pack("BQI", NORMS.index(c.error_norm), art.total_params, len(art.layers))
    for rec in art.layers:
        w.name(rec.name)
        w.pack("B", len(rec.shape))
        w.pack(f"{len(rec.shape)}I", *rec.shape)
        w.pack("QBff", rec.element_count, FLAG_CONSTANT if rec.constant else 0, rec.m, rec.M)
        if not rec.constant:
            w.raw(pack_records(rec.k, rec.class_id, c.k_bits))
            w.f32_array(rec.tail)


def read_artifact(r: Reader) -> HyperArtifact:
    g, k_bits, lo, hi = r.unpack("BBff")
    factors = r.unpack("4f")
    norm_id, total, n_layers = r.unpack("BQI")
    if norm_id >= len(NORMS):
        raise FormatError(f"unknown error norm id {norm_id}")
    try:
        cfg = CodecConfig(g, k_bits, (lo, hi), tuple(factors), NORMS[norm_id])
    except ValueError as exc:
        raise FormatError(f"invalid codec header: {exc}") from exc
    layers = []
    for _ in range(n_layers):
        name = r.name()
        rank = r.unpack("B")
        dims = r.unpack(f"{rank}I") if rank else ()
        shape = (dims,) if isinstance(dims, int) else tuple(dims)
        count, flags, m, big_m = r.unpack("QBff")
        if math.prod(shape) != count:
            raise FormatError(f"layer {name!r}: shape {shape} does not hold {count} elements")
        if flags & FLAG_CONSTANT:
            layers.append(
                LayerRecord(name, shape, count, m, big_m, True,
                            np.zeros(0, np.uint32), np.zeros(0, np.uint8), np.zeros(0, np.float32))
            )
            continue
        n_groups = count // g
        k, cls = unpack_records(r.take(packed_len(n_groups, k_bits)), n_groups, k_bits)
        tail = r.f32_array(count - n_groups * g)
        layers.append(LayerRecord(name, shape, count, m, big_m, False, k, cls, tail))
    return HyperArtifact(cfg, layers, total)


def predicted_size(shapes: list[tuple[str, tuple[int, ...]]], cfg: CodecConfig, constant: Optional[set[str]] = None) -> int:
    """Artifact byte count from tensor shapes alone (matches :meth:`HyperArtifact.to_bytes`).

    ``constant`` names layers whose values are all equal; single-element
    layers are always constant.
    """
    constant = constant or set()
    size = HEADER_BYTES
    for name, shape in shapes:
        count = math.prod(shape)
        size += 2 + len(name.encode("utf-8")) + 1 + 4 * len(shape) + 8 + 1 + 4 + 4
        if name not in constant and count > 1:
            n_groups = count // cfg.group_size
            size += packed_len(n_groups, cfg.k_bits) + 4 * (count - n_groups * cfg.group_size)
    return size
