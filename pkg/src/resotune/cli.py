"""`resotune` command-line entry point.

Every subcommand is a thin wrapper over a module operation; all
randomness flows from the --seed flag (or the experiment config's seed).
CSV output uses '.' decimals and 6 significant digits.
"""

import argparse
import json
import sys
from pathlib import Path

from .autotune import ConvShape, resolution_scaling_report, tune
from .backends import ProcessBackend, run_conformance
from .calibrate import CalibrationConfig, QualityThresholdTable, build_threshold_table, read_savings
from .dataset import load_dataset
from .errors import ResotuneError
from .experiment import ExperimentConfig, run_experiment
from .jpegscan import cumulative_bytes, decode, index_scans, truncate_at_scan
from .pipeline import PipelineContext, run_dynamic
from .quality import CropSpec, SsimParams, quality_at_scan, ssim
from .synthetic import SyntheticBackbone, SyntheticConfig, SyntheticScale, generate_synthetic_scale_dataset


def _read_image(path: str):
    return index_scans(Path(path).read_bytes())


def cmd_index(args) -> int:
    img = _read_image(args.file)
    for i in range(1, img.n_scans + 1):
        print(f"{i},{img.scan_offsets[i - 1]},{cumulative_bytes(img, i)}")
    return 0


def cmd_truncate(args) -> int:
    img = _read_image(args.file)
    Path(args.output).write_bytes(truncate_at_scan(img, args.scans))
    return 0


def cmd_ssim(args) -> int:
    a = decode(Path(args.a).read_bytes())
    b = decode(Path(args.b).read_bytes())
    params = SsimParams(window=args.window)
    print(f"{ssim(a, b, params):.6g}")
    return 0


def cmd_quality_sweep(args) -> int:
    img = _read_image(args.file)
    crop = CropSpec(args.crop)
    print("scan,cumulative_bytes,ssim")
    for k in range(1, img.n_scans + 1):
        s = quality_at_scan(img, k, (args.res, args.res), crop)
        print(f"{k},{cumulative_bytes(img, k)},{s:.6g}")
    return 0


def cmd_synth(args) -> int:
    cfg = SyntheticConfig(n=args.n, seed=args.seed, image_size=args.size,
                          obj_frac_lo=args.obj_frac_lo, obj_frac_hi=args.obj_frac_hi,
                          obj_frac_mode=args.obj_frac_mode)
    ds = generate_synthetic_scale_dataset(args.out, cfg)
    print(f"wrote {len(ds)} images to {args.out}")
    return 0


def _dataset_and_backends(args, resolutions):
    ds = load_dataset(args.dataset)
    syn_cfg = SyntheticConfig(**ds_manifest_config(args.dataset))
    if args.model == "synthetic":
        backbone = SyntheticBackbone(ds, syn_cfg, tuple(resolutions))
    elif args.model.startswith("cmd:"):
        backbone = ProcessBackend(args.model[4:])
    else:
        from .backends import HttpBackend

        backbone = HttpBackend(args.model)
    return ds, syn_cfg, backbone


def ds_manifest_config(root) -> dict:
    manifest = json.loads((Path(root) / "manifest.json").read_text())
    return manifest.get("config", {})


def _parse_resolutions(text: str) -> tuple[int, ...]:
    return tuple(int(r) for r in text.split(","))


def cmd_calibrate(args) -> int:
    resolutions = _parse_resolutions(args.resolutions)
    ds, _, backbone = _dataset_and_backends(args, resolutions)
    cfg = CalibrationConfig(resolutions=resolutions, seed=args.seed,
                            sample_size=args.sample_size)
    table = build_threshold_table(backbone, resolutions, CropSpec(args.crop), ds, cfg)
    table.save(args.out)
    print(f"wrote {args.out}")
    return 0


def cmd_savings(args) -> int:
    table = QualityThresholdTable.load(args.thresholds)
    ds, _, backbone = _dataset_and_backends(args, table.resolutions)
    report = read_savings(table, backbone, ds, CropSpec(table.crop_area))
    Path(args.out).write_text(report.to_csv())
    print(f"wrote {args.out}")
    return 0


def cmd_pipeline(args) -> int:
    table = QualityThresholdTable.load(args.thresholds)
    ds, syn_cfg, backbone = _dataset_and_backends(args, table.resolutions)
    scale = _scale_backend(args.scale, ds, syn_cfg, table.resolutions)
    ctx = PipelineContext(ds, table, CropSpec(args.crop))
    print("image_id,chosen_resolution,scans_read,bytes_read,gflops,label,correct")
    for i, item in enumerate(ds):
        decision, label = run_dynamic(ctx, i, scale, backbone)
        print(
            f"{item.image_id},{decision.chosen_resolution},{decision.scans_read},"
            f"{decision.bytes_read},{decision.flops_charged:.6g},{label},"
            f"{int(label == item.label)}"
        )
    return 0


def _scale_backend(uri, ds, syn_cfg, resolutions):
    if uri == "synthetic":
        return SyntheticScale(ds, syn_cfg, resolutions)
    if uri.startswith("cmd:"):
        return ProcessBackend(uri[4:])
    from .backends import HttpBackend

    return HttpBackend(uri)


def cmd_crop_sweep(args) -> int:
    from .pipeline import crop_sweep

    table = QualityThresholdTable.load(args.thresholds)
    ds, syn_cfg, backbone = _dataset_and_backends(args, table.resolutions)
    scale = _scale_backend(args.scale, ds, syn_cfg, table.resolutions)
    crops = tuple(float(c) for c in args.crops.split(","))
    sweep = crop_sweep(ds, table, scale, backbone, crops=crops)
    Path(args.out).write_text(sweep.to_csv())
    print(f"wrote {args.out}")
    return 0


def cmd_tune(args) -> int:
    ic, oc, h, w, k, stride, pad = (int(x) for x in args.shape.split(","))
    shape = ConvShape(ic, oc, h, w, k, stride, pad)
    result = tune(shape, budget=args.budget, seed=args.seed, strategy=args.strategy)
    Path(args.out).write_text(json.dumps(result.to_dict(), indent=1) + "\n")
    print(
        f"best {result.best_gflops_per_s:.3g} GFLOP/s "
        f"({result.best_seconds * 1e3:.3g} ms) with {result.best_schedule}"
    )
    return 0


def cmd_scaling_report(args) -> int:
    resolutions = list(_parse_resolutions(args.resolutions))
    report = resolution_scaling_report(resolutions, budget=args.budget, seed=args.seed,
                                       reps=args.reps)
    lines = ["resolution,variant,sum_seconds,gflops_per_s,speedup_vs_448"]
    for row in report.rows:
        lines.append(
            f"{row.resolution},{row.variant},{row.sum_seconds:.6g},"
            f"{row.gflops_per_s:.6g},{row.speedup_vs_448:.6g}"
        )
    Path(args.out).write_text("\n".join(lines) + "\n")
    print(
        f"flops-ideal 448/112 {report.flops_ideal_ratio_448_112:.6g}, "
        f"tuned {report.tuned_ratio_448_112:.6g}, default {report.default_ratio_448_112:.6g}"
    )
    return 0


def cmd_serve(args) -> int:
    from .server import serve

    host, port = args.listen.rsplit(":", 1)
    httpd = serve(args.root, args.thresholds, host, int(port))
    print(f"serving {args.root} on {args.listen}")
    try:
        httpd.serve_forever()
    except KeyboardInterrupt:
        pass
    return 0


def cmd_experiment(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    result = run_experiment(cfg)
    for f in result.failures:
        print(f"ASSERTION FAILED: {f}", file=sys.stderr)
    print(f"reports in {result.out_dir}")
    return 0 if result.ok else 1


def cmd_conformance(args) -> int:
    backend = ProcessBackend(args.backend_cmd)
    try:
        result = run_conformance(backend)
    finally:
        backend.close()
    print(result.summary())
    return 0 if result.passed else 1


def cmd_shard_plan(args) -> int:
    from .pipeline import train_shard_plan

    plan = train_shard_plan(args.size, args.backbones)
    Path(args.out).write_text(plan.to_manifest())
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="resotune", description=__doc__)
    p.add_argument("--workers", type=int, default=1, help="worker threads for evaluation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("index", help="list scans: scan_index,byte_offset,cumulative_bytes")
    s.add_argument("file")
    s.set_defaults(fn=cmd_index)

    s = sub.add_parser("truncate", help="truncate a progressive JPEG at a scan boundary")
    s.add_argument("file")
    s.add_argument("--scans", type=int, required=True)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(fn=cmd_truncate)

    s = sub.add_parser("ssim", help="SSIM between two JPEG files")
    s.add_argument("a")
    s.add_argument("b")
    s.add_argument("--window", default="uniform", choices=["uniform", "gaussian"])
    s.set_defaults(fn=cmd_ssim)

    s = sub.add_parser("quality-sweep", help="scan,cumulative_bytes,ssim rows for one image")
    s.add_argument("file")
    s.add_argument("--res", type=int, default=224)
    s.add_argument("--crop", type=float, default=0.75)
    s.set_defaults(fn=cmd_quality_sweep)

    s = sub.add_parser("synth", help="generate the synthetic scale dataset")
    s.add_argument("--n", type=int, default=500)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("--size", type=int, default=256)
    s.add_argument("--obj-frac-lo", type=float, default=0.08)
    s.add_argument("--obj-frac-hi", type=float, default=0.45)
    s.add_argument("--obj-frac-mode", type=float, default=0.2)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_synth)

    s = sub.add_parser("calibrate", help="binary-search per-resolution SSIM thresholds")
    s.add_argument("--model", required=True, help="synthetic | cmd:... | http://...")
    s.add_argument("--dataset", required=True)
    s.add_argument("--crop", type=float, default=0.75)
    s.add_argument("--resolutions", default="112,168,224,280,336,392,448")
    s.add_argument("--sample-size", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_calibrate)

    s = sub.add_parser("savings", help="read-savings report for a threshold table")
    s.add_argument("--thresholds", required=True)
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_savings)

    s = sub.add_parser("pipeline", help="run the dynamic pipeline over a dataset")
    s.add_argument("--thresholds", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", default="synthetic", help="backbone backend")
    s.add_argument("--scale", default="synthetic")
    s.add_argument("--crop", type=float, default=0.75)
    s.set_defaults(fn=cmd_pipeline)

    s = sub.add_parser("crop-sweep", help="accuracy/FLOPs aggregates per crop x mode")
    s.add_argument("--thresholds", required=True)
    s.add_argument("--dataset", required=True)
    s.add_argument("--model", default="synthetic")
    s.add_argument("--scale", default="synthetic")
    s.add_argument("--crops", default="0.25,0.56,0.75,1.0")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_crop_sweep)

    s = sub.add_parser("tune", help="schedule search for one conv shape")
    s.add_argument("--shape", required=True, help="ic,oc,h,w,k,stride,pad")
    s.add_argument("--budget", type=int, default=200)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--strategy", default="random+hill-climb",
                   choices=["random", "random+hill-climb"])
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_tune)

    s = sub.add_parser("scaling-report", help="default vs tuned stack times per resolution")
    s.add_argument("--resolutions", default="112,168,224,280,336,392,448")
    s.add_argument("--budget", type=int, default=50)
    s.add_argument("--seed", type=int, default=1)
    s.add_argument("--reps", type=int, default=3)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_scaling_report)

    s = sub.add_parser("serve", help="serve calibrated partial reads over HTTP")
    s.add_argument("--root", required=True)
    s.add_argument("--thresholds", required=True)
    s.add_argument("--listen", default="127.0.0.1:8080")
    s.set_defaults(fn=cmd_serve)

    s = sub.add_parser("experiment", help="calibrate + sweep + savings from a JSON config")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.add_argument("--seed", type=int, default=None)
    s.set_defaults(fn=cmd_experiment)

    s = sub.add_parser("conformance", help="wire-protocol conformance of a backend command")
    s.add_argument("--backend-cmd", required=True)
    s.set_defaults(fn=cmd_conformance)

    s = sub.add_parser("shard-plan", help="cross-validation shard manifest for model training")
    s.add_argument("--size", type=int, required=True)
    s.add_argument("--backbones", type=int, default=4)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_shard_plan)

    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ResotuneError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
