"""The two-model dynamic-resolution pipeline and its evaluation harness.

A lightweight scale model scores candidate resolutions from a low-res
input; the argmax resolution is selected (ties break toward the lowest),
calibrated bytes are read, and the backbone classifies at the chosen
resolution. FLOPs are charged from a per-(model, resolution) table.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .backends import ModelBackend
from .calibrate import QualityLadders, QualityThresholdTable
from .dataset import Dataset, LabeledImage
from .errors import (
    DecodeFailure,
    EmptyScores,
    TooFewExamples,
    UnknownEntry,
)
from .jpegscan import cumulative_bytes
from .quality import CropSpec

# Backbone GFLOPs by resolution (ResNet-18 column) and the scale-model
# constant; the synthetic backends are charged per the same columns.
RESNET18_GFLOPS = {112: 0.5, 168: 1.1, 224: 1.8, 280: 2.9, 336: 4.2, 392: 5.8, 448: 7.3}
SCALE_GFLOPS = {112: 0.08}
SCALE_RESOLUTION = 112


@dataclass(frozen=True)
class FlopsTable:
    entries: dict[tuple[str, int], float]

    def __post_init__(self):
        by_model: dict[str, list[tuple[int, float]]] = {}
        for (model, res), g in self.entries.items():
            by_model.setdefault(model, []).append((res, g))
        for model, vals in by_model.items():
            vals.sort()
            flops = [g for _, g in vals]
            if any(b <= a for a, b in zip(flops, flops[1:])):
                raise ValueError(f"GFLOPs not strictly increasing in resolution for {model}")

    def lookup(self, model_id: str, resolution: int) -> float:
        try:
            return self.entries[(model_id, resolution)]
        except KeyError:
            raise UnknownEntry(f"no GFLOPs entry for ({model_id}, {resolution})") from None


def default_flops_table() -> FlopsTable:
    entries: dict[tuple[str, int], float] = {}
    for res, g in RESNET18_GFLOPS.items():
        entries[("resnet18", res)] = g
        entries[("synthetic-backbone", res)] = g
    for res, g in SCALE_GFLOPS.items():
        entries[("scale-mobilenetv2", res)] = g
        entries[("synthetic-scale", res)] = g
    entries[("resnet50", 224)] = 4.1
    return FlopsTable(entries)


def flops_lookup(model_id: str, resolution: int, table: FlopsTable | None = None) -> float:
    return (table or default_flops_table()).lookup(model_id, resolution)


def choose_resolution(scores: dict[int, float]) -> int:
    """Argmax resolution; ties break toward the lowest resolution."""
    if not scores:
        raise EmptyScores("scale model produced no scores")
    for res, s in scores.items():
        if not (0.0 <= s <= 1.0) or math.isnan(s):
            raise ValueError(f"score {s} for resolution {res} outside [0, 1]")
    best_res = None
    best = -1.0
    for res in sorted(scores):
        if scores[res] > best:
            best = scores[res]
            best_res = res
    return best_res


@dataclass
class ResolutionDecision:
    image_id: str
    scores: dict[int, float]
    chosen_resolution: int
    scans_read: int
    bytes_read: int
    flops_charged: float


@dataclass
class EvalRecord:
    image_id: str
    crop_ratio: float
    mode: str  # "static-<res>" or "dynamic"
    correct: bool
    bytes_read: int
    flops: float
    valid: bool = True


class PipelineContext:
    """Shared state for evaluating one dataset: threshold table, quality
    ladders, and the FLOPs table.

    Scan counts (hence bytes read) are a function of resolution and the
    table's calibrated crop only; the evaluation crop shapes what the
    models see, not what is read, since images are not stored pre-cropped.
    """

    def __init__(self, dataset: Dataset, table: QualityThresholdTable, crop: CropSpec,
                 flops: FlopsTable | None = None, read_ladders: QualityLadders | None = None):
        self.dataset = dataset
        self.table = table
        self.crop = crop
        self.flops = flops or default_flops_table()
        self.ladders = read_ladders or QualityLadders(
            dataset, table.resolutions, CropSpec(table.crop_area)
        )

    def min_scans(self, i: int, res: int) -> int:
        return self.ladders.min_scans(i, res, self.table.threshold(res))


def _infer(backend: ModelBackend, item: LabeledImage, k: int, res: int,
           crop: CropSpec) -> int:
    from .calibrate import _backend_input

    return backend.classify(_backend_input(item, k, res, crop, backend))


def run_dynamic(ctx: PipelineContext, i: int, scale: ModelBackend,
                backbone: ModelBackend) -> tuple[ResolutionDecision, int]:
    """Scale stage reads the scans the lowest-resolution threshold needs,
    scores resolutions, then reads forward (never re-reading) to the
    chosen resolution's scans and classifies."""
    from .calibrate import _backend_input

    item = ctx.dataset[i]
    lowest = min(ctx.table.resolutions)
    k_scale = ctx.min_scans(i, lowest)
    req = _backend_input(item, k_scale, SCALE_RESOLUTION, ctx.crop, scale)
    scores = scale.score(req)
    chosen = choose_resolution(scores)
    k_chosen = ctx.min_scans(i, chosen)
    k_final = max(k_scale, k_chosen)
    label = _infer(backbone, item, k_final, chosen, ctx.crop)
    flops = ctx.flops.lookup(scale.model_id, SCALE_RESOLUTION) + ctx.flops.lookup(
        backbone.model_id, chosen
    )
    decision = ResolutionDecision(
        image_id=item.image_id,
        scores=scores,
        chosen_resolution=chosen,
        scans_read=k_final,
        bytes_read=cumulative_bytes(item.img, k_final),
        flops_charged=flops,
    )
    return decision, label


def run_static(ctx: PipelineContext, i: int, backbone: ModelBackend, resolution: int,
               full_read: bool = False) -> EvalRecord:
    """Backbone inference at a fixed resolution; bytes per the calibrated
    threshold unless full_read is set."""
    item = ctx.dataset[i]
    if full_read:
        k = item.img.n_scans
    else:
        k = ctx.min_scans(i, resolution)
    try:
        label = _infer(backbone, item, k, resolution, ctx.crop)
        valid = True
        correct = label == item.label
    except DecodeFailure:
        valid = False
        correct = False
    return EvalRecord(
        image_id=item.image_id,
        crop_ratio=ctx.crop.area_ratio,
        mode=f"static-{resolution}",
        correct=correct,
        bytes_read=cumulative_bytes(item.img, k),
        flops=ctx.flops.lookup(backbone.model_id, resolution),
        valid=valid,
    )


def dynamic_record(ctx: PipelineContext, i: int, scale: ModelBackend,
                   backbone: ModelBackend) -> EvalRecord:
    item = ctx.dataset[i]
    try:
        decision, label = run_dynamic(ctx, i, scale, backbone)
        return EvalRecord(
            image_id=item.image_id,
            crop_ratio=ctx.crop.area_ratio,
            mode="dynamic",
            correct=label == item.label,
            bytes_read=decision.bytes_read,
            flops=decision.flops_charged,
            valid=True,
        )
    except DecodeFailure:
        return EvalRecord(
            image_id=item.image_id,
            crop_ratio=ctx.crop.area_ratio,
            mode="dynamic",
            correct=False,
            bytes_read=item.img.total_bytes,
            flops=ctx.flops.lookup(scale.model_id, SCALE_RESOLUTION),
            valid=False,
        )


@dataclass
class Aggregate:
    crop_ratio: float
    mode: str
    accuracy: float
    mean_gflops: float
    mean_bytes: float
    n: int


@dataclass
class SweepResult:
    records: list[EvalRecord]
    aggregates: list[Aggregate]
    invalid: list[str] = field(default_factory=list)

    def aggregate(self, crop: float, mode: str) -> Aggregate:
        for a in self.aggregates:
            if a.crop_ratio == crop and a.mode == mode:
                return a
        raise KeyError((crop, mode))

    def to_csv(self) -> str:
        lines = ["crop,mode,accuracy,mean_gflops,mean_bytes,n"]
        for a in self.aggregates:
            lines.append(
                f"{a.crop_ratio:.6g},{a.mode},{a.accuracy:.6g},"
                f"{a.mean_gflops:.6g},{a.mean_bytes:.6g},{a.n}"
            )
        return "\n".join(lines) + "\n"


def _mean(values: list[float]) -> float:
    # shifted mean: exact when all values are equal (static-mode FLOPs are
    # a constant per record), well-conditioned otherwise
    base = values[0]
    return math.fsum(v - base for v in values) / len(values) + base


def _aggregate(records: list[EvalRecord], crop: float, mode: str) -> Aggregate:
    sub = [r for r in records if r.crop_ratio == crop and r.mode == mode]
    n = len(sub)
    return Aggregate(
        crop_ratio=crop,
        mode=mode,
        accuracy=sum(r.correct for r in sub) / n,
        mean_gflops=_mean([r.flops for r in sub]),
        mean_bytes=_mean([float(r.bytes_read) for r in sub]),
        n=n,
    )


def crop_sweep(dataset: Dataset, table: QualityThresholdTable, scale: ModelBackend,
               backbone: ModelBackend, crops: tuple[float, ...] = (0.25, 0.56, 0.75, 1.0),
               resolutions: tuple[int, ...] | None = None,
               flops: FlopsTable | None = None,
               read_ladders: QualityLadders | None = None) -> SweepResult:
    """Full cross-product evaluation: every crop x (every static resolution
    + dynamic). Reads (scan counts) are shared across crops."""
    resolutions = resolutions or table.resolutions
    read_ladders = read_ladders or QualityLadders(
        dataset, table.resolutions, CropSpec(table.crop_area)
    )
    records: list[EvalRecord] = []
    invalid: list[str] = []
    for crop_ratio in crops:
        ctx = PipelineContext(dataset, table, CropSpec(crop_ratio), flops,
                              read_ladders=read_ladders)
        for i in range(len(dataset)):
            for res in resolutions:
                records.append(run_static(ctx, i, backbone, res))
            records.append(dynamic_record(ctx, i, scale, backbone))
        invalid.extend(ctx.ladders.invalid)
    modes = [f"static-{r}" for r in resolutions] + ["dynamic"]
    aggregates = [_aggregate(records, c, m) for c in crops for m in modes]
    return SweepResult(records=records, aggregates=aggregates,
                       invalid=sorted(set(invalid + [r.image_id for r in records if not r.valid])))


@dataclass
class ShardPlan:
    dataset_size: int
    num_backbones: int
    shards: list[list[int]]

    def train_indices(self, backbone: int) -> list[int]:
        out: list[int] = []
        for j, shard in enumerate(self.shards):
            if j != backbone:
                out.extend(shard)
        return out

    def held_out(self, backbone: int) -> list[int]:
        return list(self.shards[backbone])

    def to_manifest(self) -> str:
        import json

        body = {
            "dataset_size": self.dataset_size,
            "num_backbones": self.num_backbones,
            "shards": self.shards,
            "train": {str(i): self.train_indices(i) for i in range(self.num_backbones)},
            "scale_pairs": [
                {"backbone": i, "held_out_shard": i} for i in range(self.num_backbones)
            ],
        }
        return json.dumps(body, indent=1, sort_keys=True) + "\n"


def train_shard_plan(dataset_size: int, num_backbones: int = 4) -> ShardPlan:
    """Partition [0, dataset_size) into balanced disjoint shards; backbone i
    trains on every shard except i, and the scale model pairs backbone i
    with held-out shard i."""
    if num_backbones < 2:
        raise ValueError("num_backbones must be >= 2")
    if dataset_size < num_backbones:
        raise TooFewExamples(f"{dataset_size} examples for {num_backbones} shards")
    shards = [list(map(int, part)) for part in np.array_split(np.arange(dataset_size), num_backbones)]
    return ShardPlan(dataset_size=dataset_size, num_backbones=num_backbones, shards=shards)
