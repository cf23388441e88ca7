"""Independent reference implementations used as test oracles.

Written as plain loops straight from the definitions, sharing no code with
the package beyond its public data types.
"""

from __future__ import annotations

import math

import numpy as np

from coli.inr_net import NetConfig, Weights, backward

# ---------------------------------------------------------------------------
# Network
# ---------------------------------------------------------------------------


def ref_embed(i: int, n: int, L: int, b: float) -> list[float]:
    t = i / n
    out = []
    for j in range(L):
        out += [math.sin(b**j * math.pi * t), math.cos(b**j * math.pi * t)]
    return out


def ref_gelu(x):
    return 0.5 * x * (1.0 + np.tanh(math.sqrt(2.0 / math.pi) * (x + 0.044715 * x**3)))


def ref_conv(x: np.ndarray, weight: np.ndarray, bias: np.ndarray) -> np.ndarray:
    """Zero-padded 'same' cross-correlation, (C_in, H, W) -> (C_out, H, W)."""
    c_out, c_in, k, _ = weight.shape
    pad = k // 2
    _, h, w = x.shape
    xp = np.zeros((c_in, h + 2 * pad, w + 2 * pad))
    xp[:, pad : pad + h, pad : pad + w] = x
    out = np.zeros((c_out, h, w))
    for o in range(c_out):
        for y in range(h):
            for xx in range(w):
                out[o, y, xx] = np.sum(xp[:, y : y + k, xx : xx + k] * weight[o]) + bias[o]
    return out


def ref_shuffle(x: np.ndarray, r: int) -> np.ndarray:
    c_r2, h, w = x.shape
    c = c_r2 // (r * r)
    out = np.zeros((c, h * r, w * r), dtype=x.dtype)
    for ch in range(c):
        for y in range(h):
            for xx in range(w):
                for dy in range(r):
                    for dx in range(r):
                        out[ch, y * r + dy, xx * r + dx] = x[ch * r * r + dy * r + dx, y, xx]
    return out


def ref_forward(w: Weights, cfg: NetConfig, i: int, n: int) -> np.ndarray:
    a = np.asarray(ref_embed(i, n, cfg.embed_freqs, cfg.embed_base))
    for j in range(len(cfg.fc_dims) + 1):
        a = ref_gelu(w[f"fc{j}.weight"].astype(np.float64) @ a + w[f"fc{j}.bias"])
    x = a.reshape(cfg.seed_shape)
    for j, blk in enumerate(cfg.blocks):
        x = ref_conv(x, w[f"block{j}.weight"].astype(np.float64), w[f"block{j}.bias"].astype(np.float64))
        x = ref_gelu(ref_shuffle(x, blk.upscale))
    return ref_conv(x, w["head.weight"].astype(np.float64), w["head.bias"].astype(np.float64))


def max_fd_rel_error(w: Weights, cfg: NetConfig, i: int, n: int, target: np.ndarray, step: float = 1e-4) -> float:
    """Worst relative error of analytic gradients against central differences, 64-bit."""
    w64 = w.astype(np.float64)
    _, grads = backward(w64, cfg, i, n, target, dtype=np.float64)
    analytic = grads.flat()
    base = w64.flat()
    worst = 0.0
    for p in range(base.size):
        plus, minus = base.copy(), base.copy()
        plus[p] += step
        minus[p] -= step
        lp, _ = backward(w64.with_flat(plus), cfg, i, n, target, dtype=np.float64)
        lm, _ = backward(w64.with_flat(minus), cfg, i, n, target, dtype=np.float64)
        numeric = (lp - lm) / (2 * step)
        scale = max(abs(analytic[p]), abs(numeric), 1e-7)
        worst = max(worst, abs(analytic[p] - numeric) / scale)
    return worst


# ---------------------------------------------------------------------------
# Codec
# ---------------------------------------------------------------------------


def naive_search(group, k_bits: int, norm: str = "linf") -> tuple[int, float]:
    """Full re-scan of every k; first minimum wins."""
    g = np.asarray(group, dtype=np.float64)
    a = np.array([1.0 / (math.pi + n) for n in range(1, len(g) + 1)])
    ks = np.arange(2**k_bits, dtype=np.float64)
    traj = np.mod(ks[:, None] * a[None, :], 1.0)
    diff = np.abs(traj - g[None, :])
    err = diff.max(axis=1) if norm == "linf" else np.sqrt((diff**2).sum(axis=1))
    k = int(np.argmin(err))
    return k, float(err[k])


def ref_class(group, lo: float, hi: float, factors) -> int:
    vals = [float(v) for v in group]
    mean = sum(vals) / len(vals)
    d = max(abs(v - mean) for v in vals)
    for s, f in enumerate(factors):
        if d * f <= (hi - lo) / 4:
            return s
    return 0


def trajectory_point(k: int, g: int) -> np.ndarray:
    """``[tau(k * a_1), ..., tau(k * a_G)]`` evaluated literally from the definition."""
    out = []
    for n in range(1, g + 1):
        z = k * (1.0 / (math.pi + n))
        out.append(z - math.floor(z))
    return np.array(out)


# ---------------------------------------------------------------------------
# Metrics
# ---------------------------------------------------------------------------

C1 = (0.01 * 255) ** 2
C2 = (0.03 * 255) ** 2


def ref_window() -> np.ndarray:
    ax = np.arange(11) - 5.0
    g2 = np.exp(-(ax[:, None] ** 2 + ax[None, :] ** 2) / (2 * 1.5**2))
    return g2 / g2.sum()


def _local_stats(x: np.ndarray, y: np.ndarray):
    """Weighted window moments by accumulating the 121 shifted, weighted copies."""
    win = ref_window()
    h, w = x.shape
    oh, ow = h - 10, w - 10
    acc = {key: np.zeros((oh, ow)) for key in ("x", "y", "xx", "yy", "xy")}
    for dy in range(11):
        for dx in range(11):
            wt = win[dy, dx]
            xs = x[dy : dy + oh, dx : dx + ow]
            ys = y[dy : dy + oh, dx : dx + ow]
            acc["x"] += wt * xs
            acc["y"] += wt * ys
            acc["xx"] += wt * xs * xs
            acc["yy"] += wt * ys * ys
            acc["xy"] += wt * xs * ys
    return acc


def ref_ssim_terms(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Mean SSIM and mean contrast-structure term for one channel."""
    s = _local_stats(x.astype(np.float64), y.astype(np.float64))
    vx = s["xx"] - s["x"] ** 2
    vy = s["yy"] - s["y"] ** 2
    cxy = s["xy"] - s["x"] * s["y"]
    cs = (2 * cxy + C2) / (vx + vy + C2)
    lum = (2 * s["x"] * s["y"] + C1) / (s["x"] ** 2 + s["y"] ** 2 + C1)
    return float(np.mean(lum * cs)), float(np.mean(cs))


def ref_ssim_loop(x: np.ndarray, y: np.ndarray) -> float:
    """Window-by-window SSIM, the slowest and most literal form."""
    win = ref_window()
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    vals = []
    for i in range(x.shape[0] - 10):
        for j in range(x.shape[1] - 10):
            px, py = x[i : i + 11, j : j + 11], y[i : i + 11, j : j + 11]
            mx, my = np.sum(win * px), np.sum(win * py)
            vx = np.sum(win * (px - mx) ** 2)
            vy = np.sum(win * (py - my) ** 2)
            cxy = np.sum(win * (px - mx) * (py - my))
            vals.append(((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx**2 + my**2 + C1) * (vx + vy + C2)))
    return float(np.mean(vals))


def ref_ms_ssim(x: np.ndarray, y: np.ndarray) -> float:
    weights = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333]
    x = x.astype(np.float64)
    y = y.astype(np.float64)
    scales = 0
    side = min(x.shape)
    while scales < 5 and side >= 11:
        scales += 1
        side //= 2
    used = weights[:scales]
    total = sum(used)
    out = 1.0
    for s in range(scales):
        full, cs = ref_ssim_terms(x, y)
        term = full if s == scales - 1 else cs
        out *= max(term, 0.0) ** (used[s] / total)
        h, w = x.shape[0] // 2 * 2, x.shape[1] // 2 * 2
        x = (x[0:h:2, 0:w:2] + x[1:h:2, 0:w:2] + x[0:h:2, 1:w:2] + x[1:h:2, 1:w:2]) / 4
        y = (y[0:h:2, 0:w:2] + y[1:h:2, 0:w:2] + y[0:h:2, 1:w:2] + y[1:h:2, 1:w:2]) / 4
    return out


def ref_psnr(a: np.ndarray, b: np.ndarray) -> float:
    mse = float(np.mean((a.astype(np.float64) - b.astype(np.float64)) ** 2))
    return 100.0 if mse == 0 else min(100.0, 10 * math.log10(255.0**2 / mse))
