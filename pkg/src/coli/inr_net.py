"""Index-conditioned patch decoder with hand-written backpropagation.

Architecture::

    patch index i -> [sin/cos embedding, 2L] -> FC+act ... -> FC+act (C0*h0*w0)
      -> reshape (C0, h0, w0)
      -> block: conv(k) -> pixel_shuffle(r) -> act     (repeated)
      -> head conv(k) -> (out_channels, P_H, P_W)

All array operations are batched over patch indices; ``forward`` and
``backward`` are thin single-index wrappers around ``forward_batch`` and
``loss_and_grad``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from ._binio import Reader, Writer
from .errors import FormatError, NumericError, ShapeError

GELU_C = math.sqrt(2.0 / math.pi)
GELU_A = 0.044715
ACTIVATIONS = ("gelu", "relu")


@dataclass(frozen=True)
class Block:
    out_channels: int
    upscale: int = 2
    kernel: int = 3


@dataclass(frozen=True)
class NetConfig:
    """Architecture hyperparameters.

    ``Block.out_channels`` counts channels *after* pixel shuffle; the block's
    convolution therefore emits ``out_channels * upscale**2`` maps.
    """

    embed_freqs: int = 8
    embed_base: float = 2.0
    fc_dims: tuple[int, ...] = (64, 128)
    seed_shape: tuple[int, int, int] = (16, 4, 4)
    blocks: tuple[Block, ...] = (Block(16, 2, 3), Block(16, 2, 3))
    activation: str = "gelu"
    out_channels: int = 1
    head_kernel: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "fc_dims", tuple(int(d) for d in self.fc_dims))
        object.__setattr__(self, "seed_shape", tuple(int(d) for d in self.seed_shape))
        object.__setattr__(
            self, "blocks", tuple(b if isinstance(b, Block) else Block(*b) for b in self.blocks)
        )
        self.validate()

    def validate(self) -> None:
        if self.embed_freqs < 1:
            raise ShapeError("embed_freqs must be >= 1")
        if len(self.seed_shape) != 3 or min(self.seed_shape) < 1:
            raise ShapeError(f"bad seed_shape {self.seed_shape}")
        if any(d < 1 for d in self.fc_dims):
            raise ShapeError(f"bad fc_dims {self.fc_dims}")
        if self.activation not in ACTIVATIONS:
            raise ShapeError(f"unknown activation {self.activation!r}")
        if self.out_channels not in (1, 3):
            raise ShapeError("out_channels must be 1 or 3")
        for b in self.blocks:
            if b.kernel not in (1, 3) or b.upscale < 1 or b.out_channels < 1:
                raise ShapeError(f"bad block {b}")
        if self.head_kernel not in (1, 3):
            raise ShapeError("head_kernel must be 1 or 3")

    @property
    def upscale(self) -> int:
        return math.prod(b.upscale for b in self.blocks)

    @property
    def patch_h(self) -> int:
        return self.seed_shape[1] * self.upscale

    @property
    def patch_w(self) -> int:
        return self.seed_shape[2] * self.upscale

    def layer_shapes(self) -> list[tuple[str, tuple[int, ...]]]:
        shapes: list[tuple[str, tuple[int, ...]]] = []
        dims = [2 * self.embed_freqs, *self.fc_dims, math.prod(self.seed_shape)]
        for j, (d_in, d_out) in enumerate(zip(dims[:-1], dims[1:])):
            shapes.append((f"fc{j}.weight", (d_out, d_in)))
            shapes.append((f"fc{j}.bias", (d_out,)))
        c = self.seed_shape[0]
        for j, b in enumerate(self.blocks):
            shapes.append((f"block{j}.weight", (b.out_channels * b.upscale**2, c, b.kernel, b.kernel)))
            shapes.append((f"block{j}.bias", (b.out_channels * b.upscale**2,)))
            c = b.out_channels
        k = self.head_kernel
        shapes.append(("head.weight", (self.out_channels, c, k, k)))
        shapes.append(("head.bias", (self.out_channels,)))
        return shapes

    @property
    def n_params(self) -> int:
        return sum(math.prod(s) for _, s in self.layer_shapes())

    def to_dict(self) -> dict:
        return {
            "embed_freqs": self.embed_freqs,
            "embed_base": self.embed_base,
            "fc_dims": list(self.fc_dims),
            "seed_shape": list(self.seed_shape),
            "blocks": [[b.out_channels, b.upscale, b.kernel] for b in self.blocks],
            "activation": self.activation,
            "out_channels": self.out_channels,
            "head_kernel": self.head_kernel,
        }


ARCH_BLOCKS = {"small": 2, "medium": 3}


def make_config(arch: str = "small", patch: int = 16, channels: int = 1) -> NetConfig:
    """Preset configs: ``small`` has two r=2 blocks, ``medium`` three.

    The seed feature map side is ``patch / 2**blocks``; ``patch`` must divide evenly.
    """
    if arch not in ARCH_BLOCKS:
        raise ValueError(f"unknown arch {arch!r}; choose from {sorted(ARCH_BLOCKS)}")
    n_blocks = ARCH_BLOCKS[arch]
    up = 2**n_blocks
    if patch % up or patch < up:
        raise ValueError(f"patch size {patch} must be a positive multiple of {up} for arch {arch!r}")
    side = patch // up
    if arch == "small":
        return NetConfig(
            fc_dims=(64, 128),
            seed_shape=(16, side, side),
            blocks=(Block(16, 2, 3), Block(16, 2, 3)),
            out_channels=channels,
        )
    return NetConfig(
        fc_dims=(64, 128),
        seed_shape=(32, side, side),
        blocks=(Block(32, 2, 3), Block(16, 2, 3), Block(16, 2, 3)),
        out_channels=channels,
    )


@dataclass
class Weights:
    """Ordered named tensors. Insertion order is the serialization order."""

    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.tensors[name]

    def __iter__(self) -> Iterator[tuple[str, np.ndarray]]:
        return iter(self.tensors.items())

    def __len__(self) -> int:
        return len(self.tensors)

    @property
    def names(self) -> list[str]:
        return list(self.tensors)

    @property
    def total_params(self) -> int:
        return sum(int(t.size) for t in self.tensors.values())

    def astype(self, dtype) -> "Weights":
        return Weights({k: v.astype(dtype) for k, v in self.tensors.items()})

    def map(self, fn) -> "Weights":
        return Weights({k: fn(k, v) for k, v in self.tensors.items()})

    def flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors.values()])

    def with_flat(self, vec: np.ndarray) -> "Weights":
        out, pos = {}, 0
        for k, t in self.tensors.items():
            out[k] = vec[pos : pos + t.size].reshape(t.shape).astype(t.dtype)
            pos += t.size
        return Weights(out)

    def equal(self, other: "Weights") -> bool:
        """Bit-exact equality of names, shapes, dtypes and values."""
        if self.names != other.names:
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in zip(self.tensors.values(), other.tensors.values())
        )

    def check(self, cfg: NetConfig) -> None:
        expected = cfg.layer_shapes()
        got = [(k, tuple(v.shape)) for k, v in self.tensors.items()]
        if got != expected:
            raise ShapeError(f"weights do not match config: {got} vs {expected}")

    def to_bytes(self) -> bytes:
        w = Writer()
        write_weights(w, self)
        return w.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Weights":
        r = Reader(data)
        out = read_weights(r)
        if r.remaining:
            raise FormatError(f"{r.remaining} trailing bytes after weights")
        return out


def write_weights(w: Writer, weights: Weights) -> None:
    w.pack("I", len(weights))
    for name, t in weights:
        w.name(name)
        w.pack("B", t.ndim)
        w.pack(f"{t.ndim}I", *t.shape)
        w.f32_array(t)


def read_weights(r: Reader) -> Weights:
    count = r.unpack("I")
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        name = r.name()
        rank = r.unpack("B")
        dims = r.unpack(f"{rank}I") if rank else ()
        dims = (dims,) if isinstance(dims, int) else tuple(dims)
        out[name] = r.f32_array(math.prod(dims)).reshape(dims)
    return Weights(out)


# ---------------------------------------------------------------------------
# Primitive layers
# ---------------------------------------------------------------------------


def positional_embed(i, n_total: int, cfg: NetConfig) -> np.ndarray:
    """Interleaved ``[sin(b^j*pi*t), cos(b^j*pi*t)]`` for ``t = i / N``.

    ``i`` may be a scalar (returns shape ``(2L,)``) or an array (``(B, 2L)``).
    """
    i_arr = np.asarray(i, dtype=np.float64)
    if np.any(i_arr < 1) or np.any(i_arr > n_total):
        raise ValueError(f"patch index outside 1..{n_total}")
    t = i_arr / float(n_total)
    freqs = float(cfg.embed_base) ** np.arange(cfg.embed_freqs, dtype=np.float64) * math.pi
    ang = t[..., None] * freqs
    out = np.empty(ang.shape[:-1] + (2 * cfg.embed_freqs,), dtype=np.float64)
    out[..., 0::2] = np.sin(ang)
    out[..., 1::2] = np.cos(ang)
    return out


def _gelu_tanh(x: np.ndarray) -> np.ndarray:
    x2 = x * x
    return np.tanh(GELU_C * x * (1.0 + GELU_A * x2))


def gelu(x: np.ndarray) -> np.ndarray:
    """Tanh approximation: ``0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))``."""
    return 0.5 * x * (1.0 + _gelu_tanh(x))


def gelu_grad(x: np.ndarray, th: np.ndarray | None = None) -> np.ndarray:
    if th is None:
        th = _gelu_tanh(x)
    x2 = x * x
    return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_A * x2)


def _act(name: str, x: np.ndarray):
    """Returns ``(activation, aux)``; ``aux`` is reused by the gradient."""
    if name == "gelu":
        th = _gelu_tanh(x)
        return 0.5 * x * (1.0 + th), th
    return np.maximum(x, 0), None


def _act_grad(name: str, x: np.ndarray, aux) -> np.ndarray:
    return gelu_grad(x, aux) if name == "gelu" else (x > 0).astype(x.dtype)


def pixel_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Rearrange ``(..., C*r*r, h, w)`` into ``(..., C, h*r, w*r)``.

    ``out[c, y*r+dy, x*r+dx] = in[c*r*r + dy*r + dx, y, x]``.
    """
    *lead, c, h, w = x.shape
    if c % (r * r):
        raise ShapeError(f"channel count {c} not divisible by r^2={r * r}")
    c_out = c // (r * r)
    nl = len(lead)
    y = x.reshape(*lead, c_out, r, r, h, w)
    perm = tuple(range(nl)) + tuple(nl + p for p in (0, 3, 1, 4, 2))
    return y.transpose(perm).reshape(*lead, c_out, h * r, w * r)


def pixel_unshuffle(x: np.ndarray, r: int) -> np.ndarray:
    """Inverse of :func:`pixel_shuffle`."""
    *lead, c, hr, wr = x.shape
    if hr % r or wr % r:
        raise ShapeError(f"spatial dims {hr}x{wr} not divisible by {r}")
    h, w = hr // r, wr // r
    nl = len(lead)
    y = x.reshape(*lead, c, h, r, w, r)
    perm = tuple(range(nl)) + tuple(nl + p for p in (0, 2, 4, 1, 3))
    return y.transpose(perm).reshape(*lead, c * r * r, h, w)


def _shuffle_nhwc(x: np.ndarray, r: int) -> np.ndarray:
    b, h, w, c = x.shape
    c_out = c // (r * r)
    return x.reshape(b, h, w, c_out, r, r).transpose(0, 1, 4, 2, 5, 3).reshape(b, h * r, w * r, c_out)


def _unshuffle_nhwc(x: np.ndarray, r: int) -> np.ndarray:
    b, hr, wr, c = x.shape
    h, w = hr // r, wr // r
    return x.reshape(b, h, r, w, r, c).transpose(0, 1, 3, 5, 2, 4).reshape(b, h, w, c * r * r)


def _im2col(x: np.ndarray, k: int) -> np.ndarray:
    """(B, H, W, C) -> (B*H*W, k*k*C), column order (ky, kx, c), zero 'same' padding."""
    b, h, w, c = x.shape
    if k == 1:
        return x.reshape(b * h * w, c)
    p = k // 2
    xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    cols = np.concatenate(
        [xp[:, ky : ky + h, kx : kx + w, :] for ky in range(k) for kx in range(k)], axis=-1
    )
    return cols.reshape(b * h * w, k * k * c)


def _weight_matrix(weight: np.ndarray) -> np.ndarray:
    """(O, C, k, k) -> (k*k*C, O) matching :func:`_im2col` column order."""
    o = weight.shape[0]
    return weight.transpose(2, 3, 1, 0).reshape(-1, o)


def conv2d(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Same-padded stride-1 convolution on NHWC input.

    ``weight`` is ``(out, in, k, k)``. Returns ``(output NHWC, im2col columns)``.
    """
    b, h, w, _ = x.shape
    o = weight.shape[0]
    cols = _im2col(x, weight.shape[2])
    out = cols @ _weight_matrix(weight) + bias
    return out.reshape(b, h, w, o), cols


def conv2d_backward(
    dy: np.ndarray, cols: np.ndarray, x_shape: tuple[int, ...], weight: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients ``(dx, dweight, dbias)`` for :func:`conv2d`; ``dy`` and ``dx`` are NHWC."""
    b, h, w, c = x_shape
    o, _, k, _ = weight.shape
    dyr = dy.reshape(b * h * w, o)
    dw = (cols.T @ dyr).reshape(k, k, c, o).transpose(3, 2, 0, 1)
    db = dyr.sum(axis=0)
    # dx is a same-padded convolution of dy with the spatially flipped, transposed kernel
    flipped = weight[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
    dx = _im2col(dy, k) @ _weight_matrix(flipped)
    return dx.reshape(b, h, w, c), dw, db


# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


def _forward_cached(w: Weights, cfg: NetConfig, indices, n_total: int, dtype):
    idx = np.atleast_1d(np.asarray(indices))
    x = positional_embed(idx, n_total, cfg).astype(dtype)
    cache: list[tuple] = []
    n_fc = len(cfg.fc_dims) + 1
    for j in range(n_fc):
        wt = w[f"fc{j}.weight"].astype(dtype, copy=False)
        z = x @ wt.T + w[f"fc{j}.bias"].astype(dtype, copy=False)
        a, aux = _act(cfg.activation, z)
        cache.append(("fc", j, x, z, aux))
        x = a
    x = x.reshape(len(idx), *cfg.seed_shape).transpose(0, 2, 3, 1)
    for j, blk in enumerate(cfg.blocks):
        wt = w[f"block{j}.weight"].astype(dtype, copy=False)
        z, cols = conv2d(x, wt, w[f"block{j}.bias"].astype(dtype, copy=False))
        cache.append(("block", j, x.shape, cols))
        s = _shuffle_nhwc(z, blk.upscale)
        x, aux = _act(cfg.activation, s)
        cache.append(("act", j, s, aux))
    wt = w["head.weight"].astype(dtype, copy=False)
    y, cols = conv2d(x, wt, w["head.bias"].astype(dtype, copy=False))
    cache.append(("head", 0, x.shape, cols))
    return y.transpose(0, 3, 1, 2), cache


def forward_batch(w: Weights, cfg: NetConfig, indices, n_total: int, dtype=np.float32) -> np.ndarray:
    """Decode a batch of 1-based patch indices to ``(B, out_channels, P_H, P_W)``."""
    return _forward_cached(w, cfg, indices, n_total, dtype)[0]


def forward(w: Weights, cfg: NetConfig, i: int, n_total: int, dtype=np.float32) -> np.ndarray:
    """Decode one patch index to ``(out_channels, P_H, P_W)``."""
    w.check(cfg)
    return forward_batch(w, cfg, [i], n_total, dtype)[0]


def loss_and_grad(
    w: Weights, cfg: NetConfig, indices, n_total: int, targets: np.ndarray, dtype=np.float32
) -> tuple[float, Weights, np.ndarray]:
    """Mean squared error over every sample of the batch and its exact gradient.

    Returns ``(loss, grads, predictions)``.
    """
    with np.errstate(over="ignore", invalid="ignore"):  # divergence is reported below
        pred, cache = _forward_cached(w, cfg, indices, n_total, dtype)
    if targets.shape != pred.shape:
        raise ShapeError(f"target shape {targets.shape} != output shape {pred.shape}")
    diff = pred - targets.astype(dtype, copy=False)
    loss = float(np.mean(diff.astype(np.float64) ** 2))
    if not math.isfinite(loss):
        raise NumericError("non-finite loss in forward pass")
    g = ((2.0 / diff.size) * diff).transpose(0, 2, 3, 1)
    grads: dict[str, np.ndarray] = {}
    for entry in reversed(cache):
        kind, j = entry[0], entry[1]
        if kind == "head":
            _, _, x_shape, cols = entry
            wt = w["head.weight"].astype(dtype, copy=False)
            g, grads["head.weight"], grads["head.bias"] = conv2d_backward(g, cols, x_shape, wt)
        elif kind == "act":
            g = g * _act_grad(cfg.activation, entry[2], entry[3])
            g = _unshuffle_nhwc(g, cfg.blocks[j].upscale)
        elif kind == "block":
            _, _, x_shape, cols = entry
            wt = w[f"block{j}.weight"].astype(dtype, copy=False)
            g, grads[f"block{j}.weight"], grads[f"block{j}.bias"] = conv2d_backward(g, cols, x_shape, wt)
        else:  # fc
            _, _, x_in, z, aux = entry
            if g.ndim == 4:
                g = g.transpose(0, 3, 1, 2)
            g = g.reshape(z.shape) * _act_grad(cfg.activation, z, aux)
            grads[f"fc{j}.weight"] = g.T @ x_in
            grads[f"fc{j}.bias"] = g.sum(axis=0)
            g = g @ w[f"fc{j}.weight"].astype(dtype, copy=False)
    ordered = Weights({name: grads[name] for name, _ in cfg.layer_shapes()})
    for name, t in ordered:
        if not np.all(np.isfinite(t)):
            raise NumericError(f"non-finite gradient in {name}")
    return loss, ordered, pred


def backward(
    w: Weights, cfg: NetConfig, i: int, n_total: int, target: np.ndarray, dtype=np.float32
) -> tuple[float, Weights]:
    """Per-patch MSE loss and gradients with respect to every weight."""
    w.check(cfg)
    loss, grads, _ = loss_and_grad(w, cfg, [i], n_total, np.asarray(target)[None], dtype)
    return loss, grads


def init_weights(cfg: NetConfig, seed: int) -> Weights:
    """Uniform in ``[-sqrt(6/fan_in), sqrt(6/fan_in)]`` for every tensor, biases included."""
    rng = np.random.default_rng(seed)
    out: dict[str, np.ndarray] = {}
    fan_in = 1
    for name, shape in cfg.layer_shapes():
        if name.endswith(".weight"):
            fan_in = math.prod(shape[1:])
        bound = math.sqrt(6.0 / fan_in)
        out[name] = rng.uniform(-bound, bound, size=shape).astype(np.float32)
    return Weights(out)
