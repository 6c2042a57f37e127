"""Hermetic synthetic dataset and model backends.

Each image carries one of four shape classes (disc, square, cross, ring)
at a randomized object-to-image scale over textured noise, saved as a
progressive JPEG. The in-process backbone classifies correctly exactly
when the object's apparent pixel size at the inference resolution falls
inside a fixed band and the shape's discriminative detail spans at least
a minimum number of pixels; the scale backend scores each resolution by
the noiseless closed form of the same rule (optionally corrupted by
seeded noise). Both mimic the scale sensitivity of real models, where
higher resolutions do not always improve accuracy.
"""

import hashlib
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .backends import InferenceRequest, ModelBackend
from .dataset import Dataset, LabeledImage
from .errors import BackendFailure
from .jpegscan import index_scans

CLASSES = ("disc", "square", "cross", "ring")

# Fraction of the object size that carries each shape's discriminative
# detail: a square is identifiable from its whole silhouette, a ring only
# from its annulus thickness.
DETAIL_FRACTION = {"disc": 0.6, "square": 1.0, "cross": 0.35, "ring": 0.25}


@dataclass(frozen=True)
class SyntheticConfig:
    n: int = 500
    seed: int = 7
    image_size: int = 256
    jpeg_quality: int = 85
    band_lo: float = 28.0
    band_hi: float = 80.0
    detail_min_px: float = 10.0
    obj_frac_lo: float = 0.08
    obj_frac_hi: float = 0.45
    # log-triangular object-size distribution peaked near the band center
    obj_frac_mode: float = 0.2

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def apparent_size(obj_frac: float, crop_area: float, resolution: int) -> float:
    """Apparent object size in pixels after center-crop and resize.

    The object spans obj_frac of the source; cropping to crop_area keeps
    sqrt(crop_area) of each dimension, and the crop is resized to the
    inference resolution.
    """
    return obj_frac * resolution / math.sqrt(crop_area)


def rule_correct(obj_frac: float, class_name: str, crop_area: float, resolution: int,
                 cfg: SyntheticConfig) -> bool:
    """The band rule: within [lo, hi] apparent pixels and detail survives."""
    s = apparent_size(obj_frac, crop_area, resolution)
    return (
        cfg.band_lo <= s <= cfg.band_hi
        and s * DETAIL_FRACTION[class_name] >= cfg.detail_min_px
    )


def _log_triangular(rng: np.random.Generator, lo: float, hi: float, mode: float) -> float:
    return float(np.exp(rng.triangular(np.log(lo), np.log(mode), np.log(hi))))


def _texture(rng: np.random.Generator, size: int) -> np.ndarray:
    """Smooth low-frequency background plus mild high-frequency grain."""
    coarse = rng.uniform(35, 105, (size // 16 + 2, size // 16 + 2))
    ys = np.linspace(0, coarse.shape[0] - 1.001, size)
    xs = np.linspace(0, coarse.shape[1] - 1.001, size)
    y0 = ys.astype(int)
    x0 = xs.astype(int)
    fy = (ys - y0)[:, None]
    fx = (xs - x0)[None, :]
    base = (
        coarse[y0][:, x0] * (1 - fy) * (1 - fx)
        + coarse[y0][:, x0 + 1] * (1 - fy) * fx
        + coarse[y0 + 1][:, x0] * fy * (1 - fx)
        + coarse[y0 + 1][:, x0 + 1] * fy * fx
    )
    # grain kept mild so early scans carry most of the signal
    return base + rng.normal(0, 2.5, (size, size))


def _shape_mask(class_name: str, size: int, obj_px: float, cx: float, cy: float) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    dx = xx - cx
    dy = yy - cy
    r = obj_px / 2.0
    if class_name == "disc":
        return dx * dx + dy * dy <= r * r
    if class_name == "square":
        return (np.abs(dx) <= r) & (np.abs(dy) <= r)
    if class_name == "cross":
        bar = obj_px * DETAIL_FRACTION["cross"] / 2.0
        horiz = (np.abs(dy) <= bar) & (np.abs(dx) <= r)
        vert = (np.abs(dx) <= bar) & (np.abs(dy) <= r)
        return horiz | vert
    # ring: annulus whose thickness is the discriminative detail
    rr = dx * dx + dy * dy
    inner = r * (1.0 - DETAIL_FRACTION["ring"])
    return (rr <= r * r) & (rr >= inner * inner)


def generate_synthetic_scale_dataset(out_dir: str | Path, cfg: SyntheticConfig) -> Dataset:
    """Write n progressive JPEGs plus manifest.json and return the dataset.

    Deterministic for a fixed config: the same seed yields byte-identical
    files. Classes are assigned round-robin, so counts balance within 1.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(cfg.seed)
    size = cfg.image_size
    records = []
    items = []
    for i in range(cfg.n):
        label = i % len(CLASSES)
        class_name = CLASSES[label]
        obj_frac = _log_triangular(rng, cfg.obj_frac_lo, cfg.obj_frac_hi, cfg.obj_frac_mode)
        obj_px = obj_frac * size
        # keep the object inside the central 0.25-area crop at every ratio
        max_off = max(0.0, size * 0.25 - obj_px / 2.0 - 2.0)
        cx = size / 2.0 + rng.uniform(-max_off, max_off)
        cy = size / 2.0 + rng.uniform(-max_off, max_off)

        canvas = _texture(rng, size)
        mask = _shape_mask(class_name, size, obj_px, cx, cy)
        fill = rng.uniform(200, 235)
        canvas[mask] = fill + rng.normal(0, 3, int(mask.sum()))
        gray = np.clip(canvas, 0, 255).astype(np.uint8)
        hue = rng.uniform(0.85, 1.0, 3)
        rgb = np.clip(gray[:, :, None] * hue[None, None, :], 0, 255).astype(np.uint8)

        buf = io.BytesIO()
        Image.fromarray(rgb).save(buf, "JPEG", progressive=True, quality=cfg.jpeg_quality)
        data = buf.getvalue()
        image_id = f"synth-{i:05d}"
        fname = f"{image_id}.jpg"
        (out_dir / fname).write_bytes(data)
        rec = {
            "id": image_id,
            "file": fname,
            "label": label,
            "class_name": class_name,
            "obj_frac": round(obj_frac, 8),
        }
        records.append(rec)
        items.append(
            LabeledImage(
                image_id=image_id,
                img=index_scans(data),
                label=label,
                meta={"class_name": class_name, "obj_frac": rec["obj_frac"]},
            )
        )
    manifest = {
        "classes": list(CLASSES),
        "config": cfg.to_dict(),
        "images": records,
    }
    manifest_text = json.dumps(manifest, indent=1, sort_keys=True) + "\n"
    (out_dir / "manifest.json").write_text(manifest_text)
    return Dataset(
        items,
        classes=list(CLASSES),
        source=str(out_dir),
        content_id=hashlib.sha256(manifest_text.encode()).hexdigest(),
    )


def _meta_table(dataset: Dataset) -> dict[str, tuple[float, str, int]]:
    return {
        it.image_id: (float(it.meta["obj_frac"]), str(it.meta["class_name"]), it.label)
        for it in dataset
    }


def _pseudo_meta(image_id: str) -> tuple[float, str, int]:
    """Deterministic stand-in metadata for ids outside the dataset, so the
    wire-protocol conformance suite can drive the backend with arbitrary
    requests."""
    digest = hashlib.sha256(image_id.encode()).digest()
    label = digest[0] % len(CLASSES)
    frac = 0.08 + (digest[1] / 255.0) * 0.37
    return frac, CLASSES[label], label


class SyntheticBackbone(ModelBackend):
    """Classifies correctly iff the band rule holds for the request's
    resolution and crop; wrong answers are deterministic (label + 1)."""

    kind = "backbone"
    needs_pixels = False

    def __init__(self, dataset: Dataset, cfg: SyntheticConfig,
                 resolutions: tuple[int, ...] = (112, 168, 224, 280, 336, 392, 448),
                 model_id: str = "synthetic-backbone"):
        self.model_id = model_id
        self.cfg = cfg
        self.supported_resolutions = tuple(resolutions)
        self._meta = _meta_table(dataset)
        self._n_classes = len(CLASSES)

    def _lookup(self, image_id: str) -> tuple[float, str, int]:
        return self._meta.get(image_id) or _pseudo_meta(image_id)

    def classify(self, req: InferenceRequest) -> int:
        if req.resolution not in self.supported_resolutions:
            raise BackendFailure(f"resolution {req.resolution} not advertised")
        obj_frac, class_name, label = self._lookup(req.image_id)
        if rule_correct(obj_frac, class_name, req.crop_area, req.resolution, self.cfg):
            return label
        return (label + 1) % self._n_classes


class SyntheticScale(ModelBackend):
    """Scores each candidate resolution by the noiseless closed form of the
    band rule; optional seeded noise perturbs the scores."""

    kind = "scale"
    needs_pixels = False

    def __init__(self, dataset: Dataset, cfg: SyntheticConfig,
                 resolutions: tuple[int, ...] = (112, 168, 224, 280, 336, 392, 448),
                 noise_sigma: float = 0.0, noise_seed: int = 0,
                 model_id: str = "synthetic-scale"):
        self.model_id = model_id
        self.cfg = cfg
        self.supported_resolutions = tuple(resolutions)
        self.noise_sigma = noise_sigma
        self.noise_seed = noise_seed
        self._meta = _meta_table(dataset)

    def _lookup(self, image_id: str) -> tuple[float, str, int]:
        return self._meta.get(image_id) or _pseudo_meta(image_id)

    def score(self, req: InferenceRequest) -> dict[int, float]:
        if req.resolution not in self.supported_resolutions:
            raise BackendFailure(f"resolution {req.resolution} not advertised")
        obj_frac, class_name, _ = self._lookup(req.image_id)
        scores = {}
        for res in self.supported_resolutions:
            base = 1.0 if rule_correct(obj_frac, class_name, req.crop_area, res, self.cfg) else 0.0
            if self.noise_sigma > 0.0:
                h = hashlib.sha256(f"{self.noise_seed}:{req.image_id}:{res}".encode()).digest()
                u = int.from_bytes(h[:8], "big") / 2**64
                base = min(1.0, max(0.0, base + self.noise_sigma * (u - 0.5) * 2.0))
            scores[res] = base
        return scores
