"""Storage calibration: binary search for the lowest SSIM threshold whose
accuracy loss stays within budget, plus per-image scan selection and
read-savings accounting.

The search keeps the invariant "hi is feasible (or untested ssim_hi), lo
is infeasible-or-untested" and returns hi once the step size drops below
step_epsilon, i.e. the smallest threshold known to satisfy the budget:
lower thresholds mean fewer bytes, which is the storage goal.
"""

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .backends import InferenceRequest, ModelBackend
from .dataset import Dataset, LabeledImage
from .errors import DecodeFailure, EmptyDataset, MissingThreshold, NotProgressive
from .jpegscan import ScanIndexedImage, cumulative_bytes, decode, truncate_at_scan
from .quality import (
    DEFAULT_SSIM,
    CropSpec,
    SsimParams,
    center_crop,
    resize,
    resize_to_luma,
    ssim_luma,
)

DEFAULT_RESOLUTIONS = (112, 168, 224, 280, 336, 392, 448)


@dataclass(frozen=True)
class CalibrationConfig:
    ssim_lo: float = 0.94
    ssim_hi: float = 1.0
    step_epsilon: float = 0.0001
    accuracy_budget: float = 0.0005
    sample_size: int = 10_000
    resolutions: tuple[int, ...] = DEFAULT_RESOLUTIONS
    seed: int = 0

    def __post_init__(self):
        if not self.ssim_lo < self.ssim_hi:
            raise ValueError("ssim_lo must be < ssim_hi")
        if self.step_epsilon <= 0:
            raise ValueError("step_epsilon must be > 0")
        if self.accuracy_budget < 0:
            raise ValueError("accuracy_budget must be >= 0")
        if not self.resolutions or list(self.resolutions) != sorted(set(self.resolutions)):
            raise ValueError("resolutions must be nonempty and strictly increasing")

    @property
    def max_evals(self) -> int:
        return math.ceil(math.log2((self.ssim_hi - self.ssim_lo) / self.step_epsilon))

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        d["resolutions"] = list(self.resolutions)
        return d


def allowed_misses(budget: float, n: int) -> int:
    """Miss-count form of the accuracy budget; the epsilon guards against
    0.0005 * 2000 landing just under 1.0 in floating point."""
    return int(math.floor(budget * n + 1e-9))


class QualityLadders:
    """Per-(image, resolution) SSIM-by-scan ladders, computed lazily.

    Ladder entry k-1 equals quality_at_scan(img, k, res, crop). Extension
    shares prefix decodes across resolutions and never re-decodes a
    (image, scan) pair whose value is already known.
    """

    def __init__(self, dataset: Dataset, resolutions: tuple[int, ...], crop: CropSpec,
                 params: SsimParams = DEFAULT_SSIM):
        self.dataset = dataset
        self.resolutions = tuple(resolutions)
        self.crop = crop
        self.params = params
        self.invalid: list[str] = []
        self._ladders: list[dict[int, list[float]]] = []
        self._failed: list[bool] = [False] * len(dataset)
        for item in dataset:
            if not item.img.progressive:
                raise NotProgressive(item.image_id)
            self._ladders.append({res: [] for res in self.resolutions})

    def _extend(self, i: int, res: int, threshold: float) -> None:
        img = self.dataset[i].img
        ladder = self._ladders[i][res]
        if self._satisfied(ladder, img, threshold):
            return
        try:
            ref_crop = center_crop(decode(img.data), self.crop)
        except DecodeFailure:
            self._mark_failed(i)
            return
        # extend every resolution's ladder in one pass to share decodes;
        # the fused crop/resize/luma path is bit-identical to composing
        # the public ops, which quality_at_scan defines.
        ref_lumas = {r: resize_to_luma(ref_crop, r) for r in self.resolutions}
        pending = {
            r: lad for r in self.resolutions
            if not self._satisfied(lad := self._ladders[i][r], img, threshold)
        }
        start_k = 1 + min(len(lad) for lad in pending.values())
        for k in range(start_k, img.n_scans + 1):
            try:
                cand_crop = center_crop(decode(truncate_at_scan(img, k)), self.crop)
            except DecodeFailure:
                self._mark_failed(i)
                return
            done = []
            for r, lad in pending.items():
                if len(lad) >= k:
                    continue
                lad.append(ssim_luma(resize_to_luma(cand_crop, r), ref_lumas[r], self.params))
                if lad[-1] >= threshold:
                    done.append(r)
            for r in done:
                del pending[r]
            if not pending:
                break

    def _mark_failed(self, i: int) -> None:
        if not self._failed[i]:
            self._failed[i] = True
            self.invalid.append(self.dataset[i].image_id)

    @staticmethod
    def _satisfied(ladder: list[float], img: ScanIndexedImage, threshold: float) -> bool:
        if len(ladder) >= img.n_scans:
            return True
        return bool(ladder) and ladder[-1] >= threshold

    def is_failed(self, i: int) -> bool:
        return self._failed[i]

    def prefetch(self, threshold: float, workers: int = 1,
                 indices: list[int] | None = None) -> None:
        """Extend ladders for many images up to a threshold, optionally in
        parallel (distinct images touch disjoint state; decode and numpy
        release the GIL)."""
        indices = range(len(self.dataset)) if indices is None else indices

        def extend_all(i: int) -> None:
            for res in self.resolutions:
                self._extend(i, res, threshold)

        if workers <= 1:
            for i in indices:
                extend_all(i)
            return
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(extend_all, indices))

    def min_scans(self, i: int, res: int, threshold: float) -> int:
        """Smallest k whose SSIM meets the threshold; the full scan count
        when no truncation reaches it."""
        img = self.dataset[i].img
        self._extend(i, res, threshold)
        if self._failed[i]:
            return img.n_scans
        for k, value in enumerate(self._ladders[i][res], start=1):
            if value >= threshold:
                return k
        return img.n_scans


def min_scans_for_threshold(img: ScanIndexedImage, res: int, crop: CropSpec,
                            threshold: float, params: SsimParams = DEFAULT_SSIM) -> int:
    """Stateless form of QualityLadders.min_scans for a single image."""
    if not img.progressive:
        raise NotProgressive("<bytes>")
    ds = Dataset([LabeledImage("img", img, 0, {})], classes=[])
    return QualityLadders(ds, (res,), crop, params).min_scans(0, res, threshold)


def search_threshold(lo: float, hi: float, step_epsilon: float, feasible) -> tuple[float, int, bool]:
    """Bisect for the smallest feasible threshold.

    `feasible(t)` says whether accuracy loss at threshold t is within
    budget. Returns (threshold, evaluations, any_feasible_seen); when no
    probed midpoint was feasible the original hi comes back flagged.
    """
    evals = 0
    any_feasible = False
    while hi - lo >= step_epsilon:
        t = (lo + hi) / 2.0
        evals += 1
        if feasible(t):
            hi = t
            any_feasible = True
        else:
            lo = t
    return hi, evals, any_feasible


@dataclass
class ResolutionCalibration:
    threshold: float
    evals: int
    flagged: bool  # no feasible midpoint below ssim_hi was found


def _backend_input(item: LabeledImage, k: int, res: int, crop: CropSpec,
                   backend: ModelBackend) -> InferenceRequest:
    pixels = None
    if backend.needs_pixels:
        raster = resize(center_crop(decode(truncate_at_scan(item.img, k)), crop), (res, res))
        arr = raster.samples
        if raster.channels == 1:
            arr = np.repeat(arr, 3, axis=2)
        pixels = arr
    return InferenceRequest(image_id=item.image_id, resolution=res, pixels=pixels,
                            crop_area=crop.area_ratio)


def _correct_at(ladders: QualityLadders, backend: ModelBackend, res: int, crop: CropSpec,
                subset: list[int], threshold: float | None) -> np.ndarray:
    """Correctness vector for the subset; threshold None means full reads.
    Images with decode failures count as incorrect."""
    out = np.zeros(len(subset), dtype=bool)
    for j, i in enumerate(subset):
        item = ladders.dataset[i]
        k = item.img.n_scans if threshold is None else ladders.min_scans(i, res, threshold)
        if ladders.is_failed(i):
            continue
        try:
            label = backend.classify(_backend_input(item, k, res, crop, backend))
        except DecodeFailure:
            ladders._mark_failed(i)
            continue
        out[j] = label == item.label
    return out


def calibration_subset(n: int, cfg: CalibrationConfig) -> list[int]:
    """Seeded sample of at most sample_size indices, in dataset order."""
    rng = np.random.default_rng(cfg.seed)
    take = min(cfg.sample_size, n)
    return sorted(rng.permutation(n)[:take].tolist())


def calibrate_threshold(backend: ModelBackend, res: int, crop: CropSpec, dataset: Dataset,
                        cfg: CalibrationConfig, ladders: QualityLadders | None = None,
                        subset: list[int] | None = None) -> ResolutionCalibration:
    """Binary-search the smallest SSIM threshold whose accuracy loss on the
    calibration subset stays within the budget."""
    if len(dataset) == 0:
        raise EmptyDataset("calibration requires a nonempty dataset")
    if ladders is None:
        ladders = QualityLadders(dataset, cfg.resolutions, crop)
    if subset is None:
        subset = calibration_subset(len(dataset), cfg)
    full = _correct_at(ladders, backend, res, crop, subset, threshold=None)
    full_count = int(full.sum())
    allowed = allowed_misses(cfg.accuracy_budget, len(subset))

    if backend.needs_pixels:
        def feasible(t: float) -> bool:
            count = int(_correct_at(ladders, backend, res, crop, subset, t).sum())
            return full_count - count <= allowed
    else:
        # A backend that never reads pixels cannot change its answer under
        # truncation, so accuracy at any threshold equals the full-read
        # accuracy and the loss is zero by construction.
        def feasible(t: float) -> bool:
            return 0 <= allowed

    threshold, evals, any_feasible = search_threshold(
        cfg.ssim_lo, cfg.ssim_hi, cfg.step_epsilon, feasible
    )
    if not any_feasible:
        # full reads are the safe fallback; flag the resolution
        return ResolutionCalibration(cfg.ssim_hi, evals, flagged=True)
    return ResolutionCalibration(threshold, evals, flagged=False)


@dataclass
class QualityThresholdTable:
    model_id: str
    crop_area: float
    entries: dict[int, float]
    config: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def threshold(self, res: int) -> float:
        if res not in self.entries:
            raise MissingThreshold(f"no threshold for resolution {res}")
        return self.entries[res]

    @property
    def resolutions(self) -> tuple[int, ...]:
        return tuple(sorted(self.entries))

    def to_json(self) -> str:
        body = {
            "model_id": self.model_id,
            "crop": self.crop_area,
            "entries": [
                {"resolution": r, "ssim": self.entries[r]} for r in sorted(self.entries)
            ],
            "config": self.config,
            "provenance": self.provenance,
        }
        return json.dumps(body, indent=1, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def from_json(cls, text: str) -> "QualityThresholdTable":
        body = json.loads(text)
        return cls(
            model_id=body["model_id"],
            crop_area=float(body["crop"]),
            entries={int(e["resolution"]): float(e["ssim"]) for e in body["entries"]},
            config=body.get("config", {}),
            provenance=body.get("provenance", {}),
        )

    @classmethod
    def load(cls, path: str | Path) -> "QualityThresholdTable":
        return cls.from_json(Path(path).read_text())


def build_threshold_table(backend: ModelBackend, resolutions: tuple[int, ...], crop: CropSpec,
                          dataset: Dataset, cfg: CalibrationConfig,
                          ladders: QualityLadders | None = None) -> QualityThresholdTable:
    """Calibrate every resolution independently; any per-resolution abort
    fails the whole build (no partial tables)."""
    cfg_res = tuple(sorted(resolutions))
    if ladders is None:
        ladders = QualityLadders(dataset, cfg_res, crop)
    subset = calibration_subset(len(dataset), cfg)
    entries = {}
    flagged = []
    for res in cfg_res:
        out = calibrate_threshold(backend, res, crop, dataset, cfg, ladders, subset)
        entries[res] = out.threshold
        if out.flagged:
            flagged.append(res)
    cfg_json = json.dumps(cfg.to_dict(), sort_keys=True)
    provenance = {
        "config_sha256": hashlib.sha256(cfg_json.encode()).hexdigest(),
        "dataset": dataset.content_id or dataset.source,
        "sample_size": len(subset),
        "flagged_resolutions": flagged,
        "invalid_images": list(ladders.invalid),
    }
    return QualityThresholdTable(
        model_id=backend.model_id,
        crop_area=crop.area_ratio,
        entries=entries,
        config=cfg.to_dict(),
        provenance=provenance,
    )


@dataclass
class ReadReportRow:
    resolution: int
    accuracy_default: float
    accuracy_calibrated: float
    bytes_default: int
    bytes_calibrated: int

    @property
    def savings(self) -> float:
        return 1.0 - self.bytes_calibrated / self.bytes_default


@dataclass
class ReadReport:
    rows: list[ReadReportRow]
    invalid: list[str] = field(default_factory=list)

    def to_csv(self) -> str:
        lines = ["resolution,default_acc,calibrated_acc,default_bytes,calibrated_bytes,savings_pct"]
        for r in self.rows:
            lines.append(
                f"{r.resolution},{r.accuracy_default:.6g},{r.accuracy_calibrated:.6g},"
                f"{r.bytes_default},{r.bytes_calibrated},{100.0 * r.savings:.6g}"
            )
        return "\n".join(lines) + "\n"


def read_savings(table: QualityThresholdTable, backend: ModelBackend, dataset: Dataset,
                 crop: CropSpec, ladders: QualityLadders | None = None,
                 workers: int = 1) -> ReadReport:
    """Accuracy and total bytes under full reads vs calibrated truncation."""
    if ladders is None:
        ladders = QualityLadders(dataset, table.resolutions, crop)
    if workers > 1:
        ladders.prefetch(max(table.entries.values()), workers=workers)
    subset = list(range(len(dataset)))
    rows = []
    for res in table.resolutions:
        thr = table.threshold(res)
        full = _correct_at(ladders, backend, res, crop, subset, threshold=None)
        cal = _correct_at(ladders, backend, res, crop, subset, threshold=thr)
        bytes_default = sum(item.img.total_bytes for item in dataset)
        bytes_cal = 0
        for i, item in enumerate(dataset):
            k = ladders.min_scans(i, res, thr)
            bytes_cal += cumulative_bytes(item.img, k)
        rows.append(
            ReadReportRow(
                resolution=res,
                accuracy_default=float(full.mean()),
                accuracy_calibrated=float(cal.mean()),
                bytes_default=bytes_default,
                bytes_calibrated=bytes_cal,
            )
        )
    return ReadReport(rows=rows, invalid=list(ladders.invalid))
