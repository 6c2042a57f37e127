"""Pure-numpy implementations of the hot kernels.

Functionally equivalent to the compiled core in `resotune._core`; selected
at import time by `resotune.native` when the extension is unavailable or
RESOTUNE_PURE_PYTHON is set. Accumulation order differs from the compiled
kernels, which is why the scheduled-conv contract carries a tolerance.
"""

import numpy as np


def luma_bt601(rgb: np.ndarray) -> np.ndarray:
    """BT.601 luma (0.299/0.587/0.114) of an (h, w, 3) uint8 array, float32."""
    r = rgb[..., 0].astype(np.float32)
    g = rgb[..., 1].astype(np.float32)
    b = rgb[..., 2].astype(np.float32)
    return np.float32(0.299) * r + np.float32(0.587) * g + np.float32(0.114) * b


def _axis_plan(src: int, dst: int):
    # Half-pixel-centered source coordinates, edge-clamped.
    x = (np.arange(dst, dtype=np.float64) + 0.5) * (src / dst) - 0.5
    x0 = np.floor(x).astype(np.int64)
    frac = (x - x0).astype(np.float32)
    lo = np.clip(x0, 0, src - 1)
    hi = np.clip(x0 + 1, 0, src - 1)
    return lo, hi, frac


def resize_bilinear_u8(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of (h, w, c) uint8 to (out_h, out_w, c) uint8.

    Half-pixel-centered sampling; values round half away from zero.
    """
    h, w = src.shape[:2]
    y0, y1, fy = _axis_plan(h, out_h)
    x0, x1, fx = _axis_plan(w, out_w)
    a = src.astype(np.float32)
    top = a[y0][:, x0] * (1.0 - fx)[None, :, None] + a[y0][:, x1] * fx[None, :, None]
    bot = a[y1][:, x0] * (1.0 - fx)[None, :, None] + a[y1][:, x1] * fx[None, :, None]
    out = top * (1.0 - fy)[:, None, None] + bot * fy[:, None, None]
    return np.floor(out + 0.5).clip(0, 255).astype(np.uint8)


def resize_luma_u8(src: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Fused resize + luma: identical to luma_bt601(resize_bilinear_u8(...))."""
    resized = resize_bilinear_u8(src, out_h, out_w)
    if resized.shape[2] == 1:
        return resized[:, :, 0].astype(np.float32)
    return luma_bt601(resized)


def _integral(a: np.ndarray) -> np.ndarray:
    c = np.cumsum(np.cumsum(a, axis=0, dtype=np.float64), axis=1, dtype=np.float64)
    out = np.zeros((a.shape[0] + 1, a.shape[1] + 1), dtype=np.float64)
    out[1:, 1:] = c
    return out


def _box(ii: np.ndarray, win: int) -> np.ndarray:
    return ii[win:, win:] - ii[:-win, win:] - ii[win:, :-win] + ii[:-win, :-win]


def ssim_uniform(a: np.ndarray, b: np.ndarray, win: int, c1: float, c2: float) -> float:
    """Mean SSIM over all win x win uniform windows stepped by 1.

    Inputs are single-channel float32; statistics accumulate in float64 so
    the identity and constant-image closed forms hold exactly.
    """
    n = float(win * win)
    sa = _box(_integral(a), win)
    sb = _box(_integral(b), win)
    saa = _box(_integral(a.astype(np.float64) ** 2), win)
    sbb = _box(_integral(b.astype(np.float64) ** 2), win)
    sab = _box(_integral(a.astype(np.float64) * b.astype(np.float64)), win)
    ma = sa / n
    mb = sb / n
    va = saa / n - ma * ma
    vb = sbb / n - mb * mb
    cov = sab / n - ma * mb
    num = (2.0 * ma * mb + c1) * (2.0 * cov + c2)
    den = (ma * ma + mb * mb + c1) * (va + vb + c2)
    return float(np.mean(num / den))


def ssim_gaussian(a: np.ndarray, b: np.ndarray, win: int, sigma: float, c1: float, c2: float) -> float:
    """Gaussian-weighted SSIM (config option; uniform is the default)."""
    half = win // 2
    ax = np.arange(win, dtype=np.float64) - (win - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    kern = np.outer(g, g)
    kern /= kern.sum()

    def filt(x):
        x = x.astype(np.float64)
        out = np.zeros((x.shape[0] - win + 1, x.shape[1] - win + 1))
        for i in range(win):
            for j in range(win):
                out += kern[i, j] * x[i : i + out.shape[0], j : j + out.shape[1]]
        return out

    ma, mb = filt(a), filt(b)
    va = filt(a.astype(np.float64) ** 2) - ma * ma
    vb = filt(b.astype(np.float64) ** 2) - mb * mb
    cov = filt(a.astype(np.float64) * b.astype(np.float64)) - ma * mb
    num = (2.0 * ma * mb + c1) * (2.0 * cov + c2)
    den = (ma * ma + mb * mb + c1) * (va + vb + c2)
    return float(np.mean(num / den)) if num.size else 1.0


def conv2d_reference(inp: np.ndarray, weights: np.ndarray, stride: int, pad: int) -> np.ndarray:
    """Direct convolution, float64 accumulation, float32 output.

    inp: (ic, h, w) float32; weights: (oc, ic, kh, kw) float32.
    """
    ic, h, w = inp.shape
    oc, _, kh, kw = weights.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    x = np.zeros((ic, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    x[:, pad : pad + h, pad : pad + w] = inp
    # Gather all receptive fields: (oh, ow, ic, kh, kw)
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))
    windows = windows[:, ::stride, ::stride]  # (ic, oh, ow, kh, kw)
    out = np.einsum("chwij,ocij->ohw", windows, weights.astype(np.float64), optimize=True)
    return out.astype(np.float32), oh, ow


def conv2d_scheduled(
    inp: np.ndarray,
    weights: np.ndarray,
    stride: int,
    pad: int,
    tile_oc: int,
    tile_oh: int,
    tile_ow: int,
    perm: tuple[int, int, int, int],
    vector_width: int,
    unroll: int,
    channel_blocked: bool,
) -> np.ndarray:
    """Schedule-shaped convolution: tiled loops in `perm` order over
    (oc, oh, ow, ic), float32 accumulation.

    The fallback honors the iteration structure (so results match the
    compiled core within reassociation tolerance) but gains nothing from
    it performance-wise; it exists for hosts without the extension.
    """
    ic, h, w = inp.shape
    oc, _, kh, kw = weights.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    x = np.zeros((ic, h + 2 * pad, w + 2 * pad), dtype=np.float32)
    x[:, pad : pad + h, pad : pad + w] = inp
    out = np.zeros((oc, oh, ow), dtype=np.float32)
    wts = weights.astype(np.float32)

    tiles = {
        0: [(i, min(i + tile_oc, oc)) for i in range(0, oc, tile_oc)],
        1: [(i, min(i + tile_oh, oh)) for i in range(0, oh, tile_oh)],
        2: [(i, min(i + tile_ow, ow)) for i in range(0, ow, tile_ow)],
        3: [(0, ic)],  # reduction dim is never tiled; perm position still matters
    }
    windows = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]

    def visit(level: int, bounds: dict):
        if level == 4:
            (c0, c1), (y0, y1), (x0, x1), _ = (bounds[d] for d in range(4))
            sub = windows[:, y0:y1, x0:x1]  # (ic, th, tw, kh, kw)
            out[c0:c1, y0:y1, x0:x1] += np.einsum(
                "chwij,ocij->ohw", sub, wts[c0:c1], optimize=True
            ).astype(np.float32)
            return
        for rng in tiles[perm[level]]:
            bounds[perm[level]] = rng
            visit(level + 1, bounds)

    visit(0, {})
    return out
