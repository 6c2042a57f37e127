"""End-to-end experiment runner: calibrate, sweep, and report.

A single JSON config drives the run; the resolved config is written next
to the outputs so a rerun is reproducible byte-for-byte (reports carry no
timing fields).
"""

import json
from dataclasses import dataclass, field
from pathlib import Path

from .backends import HttpBackend, ModelBackend, ProcessBackend
from .calibrate import (
    CalibrationConfig,
    QualityLadders,
    allowed_misses,
    build_threshold_table,
    calibration_subset,
    read_savings,
)
from .dataset import Dataset, load_dataset
from .errors import ConfigError
from .pipeline import crop_sweep, default_flops_table
from .quality import CropSpec
from .synthetic import SyntheticBackbone, SyntheticConfig, SyntheticScale, generate_synthetic_scale_dataset

DEFAULT_CROPS = (0.25, 0.56, 0.75, 1.0)


@dataclass
class ExperimentConfig:
    dataset: dict
    crops: tuple[float, ...] = DEFAULT_CROPS
    resolutions: tuple[int, ...] = (112, 168, 224, 280, 336, 392, 448)
    scale_backend: str = "synthetic"
    backbone: str = "synthetic"
    calibration_crop: float = 0.75
    calibration: dict = field(default_factory=dict)
    seed: int = 7
    workers: int = 1
    out_dir: str = "out"

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        body = json.loads(Path(path).read_text())
        return cls.from_dict(body)

    @classmethod
    def from_dict(cls, body: dict) -> "ExperimentConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(body) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "dataset" not in body:
            raise ConfigError("config requires a dataset section")
        cfg = cls(**{k: v for k, v in body.items()})
        cfg.crops = tuple(cfg.crops)
        cfg.resolutions = tuple(cfg.resolutions)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if not (("synthetic" in self.dataset) ^ ("path" in self.dataset)):
            raise ConfigError("dataset must specify exactly one of 'synthetic' or 'path'")
        synthetic_models = self.scale_backend == "synthetic" or self.backbone == "synthetic"
        if "path" in self.dataset and synthetic_models:
            raise ConfigError(
                "synthetic backends require the synthetic dataset; "
                "pass backend URIs (cmd:... or http://...) for a real dataset"
            )
        for uri in (self.scale_backend, self.backbone):
            if uri != "synthetic" and not uri.startswith(("cmd:", "http://", "https://")):
                raise ConfigError(f"backend URI {uri!r} must be synthetic, cmd:..., or http(s)://...")

    def resolved(self) -> dict:
        return {
            "dataset": self.dataset,
            "crops": list(self.crops),
            "resolutions": list(self.resolutions),
            "scale_backend": self.scale_backend,
            "backbone": self.backbone,
            "calibration_crop": self.calibration_crop,
            "calibration": self.calibration,
            "seed": self.seed,
            "workers": self.workers,
            "out_dir": self.out_dir,
        }


def _make_backend(uri: str, kind: str, dataset: Dataset, syn_cfg: SyntheticConfig | None,
                  resolutions: tuple[int, ...]) -> ModelBackend:
    if uri == "synthetic":
        if syn_cfg is None:
            raise ConfigError("synthetic backends require the synthetic dataset")
        if kind == "scale":
            return SyntheticScale(dataset, syn_cfg, resolutions)
        return SyntheticBackbone(dataset, syn_cfg, resolutions)
    if uri.startswith("cmd:"):
        return ProcessBackend(uri[4:])
    return HttpBackend(uri)


@dataclass
class ExperimentResult:
    out_dir: Path
    ok: bool
    failures: list[str]


def run_experiment(cfg: ExperimentConfig) -> ExperimentResult:
    """calibrate -> threshold table -> crop sweep (static + dynamic) ->
    read savings; emits thresholds.json, accflops.csv, storage.csv."""
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    syn_cfg = None
    if "synthetic" in cfg.dataset:
        syn_args = dict(cfg.dataset["synthetic"])
        syn_args.setdefault("seed", cfg.seed)
        syn_cfg = SyntheticConfig(**syn_args)
        dataset = generate_synthetic_scale_dataset(out / "dataset", syn_cfg)
    else:
        dataset = load_dataset(cfg.dataset["path"])

    scale = _make_backend(cfg.scale_backend, "scale", dataset, syn_cfg, cfg.resolutions)
    backbone = _make_backend(cfg.backbone, "backbone", dataset, syn_cfg, cfg.resolutions)

    cal_cfg = CalibrationConfig(
        resolutions=cfg.resolutions, seed=cfg.seed, **cfg.calibration
    )
    crop = CropSpec(cfg.calibration_crop)
    ladders = QualityLadders(dataset, cfg.resolutions, crop)
    table = build_threshold_table(backbone, cfg.resolutions, crop, dataset, cal_cfg, ladders)
    (out / "thresholds.json").write_text(table.to_json())

    sweep = crop_sweep(dataset, table, scale, backbone, crops=cfg.crops,
                       resolutions=cfg.resolutions, read_ladders=ladders)
    (out / "accflops.csv").write_text(sweep.to_csv())

    report = read_savings(table, backbone, dataset, crop, ladders, workers=cfg.workers)
    (out / "storage.csv").write_text(report.to_csv())

    failures: list[str] = []
    # Invariant assertions gate the exit status.
    subset = calibration_subset(len(dataset), cal_cfg)
    allowed = allowed_misses(cal_cfg.accuracy_budget, len(subset))
    flops = default_flops_table()
    for row in report.rows:
        if row.bytes_calibrated > row.bytes_default:
            failures.append(f"bytes_calibrated > bytes_default at {row.resolution}")
        if not (0.0 <= row.savings <= 1.0):
            failures.append(f"savings out of range at {row.resolution}")
    for a in sweep.aggregates:
        if not (0.0 <= a.accuracy <= 1.0):
            failures.append(f"accuracy out of range for {a.mode} at crop {a.crop_ratio}")
        if a.mode.startswith("static-"):
            res = int(a.mode.split("-")[1])
            want = flops.lookup(backbone.model_id, res)
            if abs(a.mean_gflops - want) > 1e-9:
                failures.append(f"static FLOPs mismatch for {a.mode}")
    for res in cfg.resolutions:
        if res not in table.entries:
            failures.append(f"threshold table missing resolution {res}")
        elif not (cal_cfg.ssim_lo <= table.entries[res] <= cal_cfg.ssim_hi):
            failures.append(f"threshold out of bounds at {res}")

    run_log = {
        "config": cfg.resolved(),
        "invalid_images": sorted(set(sweep.invalid + report.invalid)),
        "calibration_subset_size": len(subset),
        "allowed_misses": allowed,
        "assertion_failures": failures,
    }
    (out / "run.json").write_text(json.dumps(run_log, indent=1, sort_keys=True) + "\n")
    (out / "config.resolved.json").write_text(
        json.dumps(cfg.resolved(), indent=1, sort_keys=True) + "\n"
    )
    scale.close()
    backbone.close()
    return ExperimentResult(out_dir=out, ok=not failures, failures=failures)
