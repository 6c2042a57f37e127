"""Resampling, center cropping, and full-reference quality metrics.

SSIM defaults follow the classic parameterization (k1=0.01, k2=0.03,
L=255) with an 8x8 uniform sliding window stepped by 1; color inputs are
converted to BT.601 luma first. A Gaussian window is available as a
config option, but the uniform default is what calibration runs on.
SSIM for calibration is evaluated post-resize, at the inference
resolution.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import native
from .errors import DimensionMismatch, EmptyTarget, NotProgressive
from .jpegscan import PixelRaster, ScanIndexedImage, decode, truncate_at_scan


@dataclass(frozen=True)
class CropSpec:
    """Center crop retaining `area_ratio` of the image area.

    Linear dimensions scale by sqrt(area_ratio): a 0.25 area crop keeps
    the central half in each dimension.
    """

    area_ratio: float

    def __post_init__(self):
        if not (0.0 < self.area_ratio <= 1.0):
            raise ValueError(f"area_ratio must be in (0, 1], got {self.area_ratio}")

    @property
    def linear_ratio(self) -> float:
        return math.sqrt(self.area_ratio)


@dataclass(frozen=True)
class SsimParams:
    k1: float = 0.01
    k2: float = 0.03
    dynamic_range: float = 255.0
    window_size: int = 8
    window: str = "uniform"  # or "gaussian"
    gaussian_sigma: float = 1.5

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.window not in ("uniform", "gaussian"):
            raise ValueError(f"unknown window {self.window!r}")

    @property
    def c1(self) -> float:
        return (self.k1 * self.dynamic_range) ** 2

    @property
    def c2(self) -> float:
        return (self.k2 * self.dynamic_range) ** 2


DEFAULT_SSIM = SsimParams()


def resize(r: PixelRaster, target: tuple[int, int]) -> PixelRaster:
    """Bilinear resample with half-pixel-centered sampling.

    target is (width, height); output dimensions are exactly target.
    """
    tw, th = target
    if tw < 1 or th < 1:
        raise EmptyTarget(f"target {target} has an empty dimension")
    if (tw, th) == (r.width, r.height):
        return r
    out = native.resize_bilinear_u8(r.samples, th, tw)
    return PixelRaster(width=tw, height=th, channels=r.channels, samples=np.asarray(out))


def center_crop(r: PixelRaster, c: CropSpec) -> PixelRaster:
    """Centered sub-raster; crop dims are floor(linear_ratio * dim),
    offsets floor((dim - crop_dim) / 2)."""
    cw = int(c.linear_ratio * r.width)
    ch = int(c.linear_ratio * r.height)
    if cw < 1 or ch < 1:
        raise EmptyTarget("crop is empty at this ratio")
    if cw == r.width and ch == r.height:
        return r
    ox = (r.width - cw) // 2
    oy = (r.height - ch) // 2
    sub = np.ascontiguousarray(r.samples[oy : oy + ch, ox : ox + cw])
    return PixelRaster(width=cw, height=ch, channels=r.channels, samples=sub)


def _to_luma(r: PixelRaster) -> np.ndarray:
    if r.channels == 1:
        return r.samples[:, :, 0].astype(np.float32)
    return np.asarray(native.luma_bt601(r.samples))


def ssim_luma(la: np.ndarray, lb: np.ndarray, p: SsimParams = DEFAULT_SSIM) -> float:
    """SSIM on precomputed float32 luma planes (the hot calibration path)."""
    if la.shape != lb.shape:
        raise DimensionMismatch(f"{la.shape} vs {lb.shape}")
    if p.window == "uniform":
        return float(native.ssim_uniform(la, lb, p.window_size, p.c1, p.c2))
    return float(native.ssim_gaussian(la, lb, p.window_size, p.gaussian_sigma, p.c1, p.c2))


def resize_to_luma(r: PixelRaster, res: int) -> np.ndarray:
    """luma(resize(r, res x res)) fused; bit-identical to the composition."""
    return np.asarray(native.resize_luma_u8(r.samples, res, res))


def ssim(a: PixelRaster, b: PixelRaster, p: SsimParams = DEFAULT_SSIM) -> float:
    """Mean structural similarity between two equally sized rasters."""
    if (a.width, a.height) != (b.width, b.height):
        raise DimensionMismatch(f"{(a.width, a.height)} vs {(b.width, b.height)}")
    return ssim_luma(_to_luma(a), _to_luma(b), p)


def psnr(a: PixelRaster, b: PixelRaster, peak: float = 255.0) -> float:
    """Peak signal-to-noise ratio in dB; inf when the rasters are identical."""
    if (a.width, a.height, a.channels) != (b.width, b.height, b.channels):
        raise DimensionMismatch(f"{(a.width, a.height)} vs {(b.width, b.height)}")
    diff = a.samples.astype(np.float64) - b.samples.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return math.inf
    return 20.0 * math.log10(peak) - 10.0 * math.log10(mse)


def _pipeline_view(raster: PixelRaster, inference_res: tuple[int, int], crop: CropSpec) -> PixelRaster:
    return resize(center_crop(raster, crop), inference_res)


def quality_at_scan(
    img: ScanIndexedImage,
    k: int,
    inference_res: tuple[int, int],
    crop: CropSpec,
    p: SsimParams = DEFAULT_SSIM,
) -> float:
    """SSIM of the k-scan truncation against the full decode, both taken
    through the same crop + resize to the inference resolution."""
    if not img.progressive:
        raise NotProgressive("<bytes>")
    ref = _pipeline_view(decode(img.data), inference_res, crop)
    cand = _pipeline_view(decode(truncate_at_scan(img, k)), inference_res, crop)
    return ssim(cand, ref, p)
