"""Black-box schedule search by wall-clock measurement.

Every candidate is checked against the reference convolution once before
it is timed; the default schedule is always injected as trial 0, so the
tuned best can never be slower than the default for any budget >= 1.
"""

import random
import statistics
import time
from dataclasses import dataclass, field

from ..errors import InvalidSchedule, NoValidSchedule
from .engine import PreparedKernel, conv_reference, max_abs_rel_error, seeded_operands
from .schedule import (
    DEFAULT_SCHEDULE,
    ConvSchedule,
    ConvShape,
    is_valid,
    mutate_schedule,
    sample_schedules,
)

EQUIV_REL_TOL = 1e-4


@dataclass
class Trial:
    schedule: ConvSchedule
    median_seconds: float


@dataclass
class TuneResult:
    shape: ConvShape
    best_schedule: ConvSchedule
    best_seconds: float
    best_gflops_per_s: float
    ideal_flops: int
    trials: list[Trial] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "shape": {
                "in_channels": self.shape.in_channels,
                "out_channels": self.shape.out_channels,
                "height": self.shape.height,
                "width": self.shape.width,
                "kernel": self.shape.kernel,
                "stride": self.shape.stride,
                "padding": self.shape.padding,
            },
            "best_schedule": self.best_schedule.to_dict(),
            "best_seconds": self.best_seconds,
            "best_gflops_per_s": self.best_gflops_per_s,
            "ideal_flops": self.ideal_flops,
            "trials": [
                {"schedule": t.schedule.to_dict(), "median_seconds": t.median_seconds}
                for t in self.trials
            ],
        }


def _timed_medians(kernel: PreparedKernel, reps: int, warmups: int) -> float:
    for _ in range(warmups):
        kernel.run()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        kernel.run()
        t1 = time.perf_counter_ns()
        samples.append((t1 - t0) * 1e-9)
    return statistics.median(samples)


def measure(shape: ConvShape, sched: ConvSchedule, reps: int = 3, warmups: int = 1,
            seed: int = 0) -> float:
    """Median wall-clock seconds of the scheduled kernel.

    Buffers are allocated and packed before timing; the timed region is
    the kernel alone. reps >= 3 and warmups >= 1 are required.
    """
    if reps < 3:
        raise ValueError("reps must be >= 3")
    if warmups < 1:
        raise ValueError("warmups must be >= 1")
    inp, wts = seeded_operands(shape, seed)
    kernel = PreparedKernel(shape, sched, inp, wts)
    return _timed_medians(kernel, reps, warmups)


def _verify(kernel: PreparedKernel, reference) -> bool:
    return max_abs_rel_error(kernel.run(), reference) <= EQUIV_REL_TOL


def tune(shape: ConvShape, budget: int = 50, seed: int = 0,
         strategy: str = "random+hill-climb", reps: int = 3, warmups: int = 1) -> TuneResult:
    """Search `budget` schedules for the fastest one.

    Trial 0 is always the default schedule (when valid for the shape).
    With "random+hill-climb", the last ~30% of the budget mutates single
    fields of the incumbent best; with "random" the trial sequence is a
    pure function of the seed.
    """
    if budget < 1:
        raise ValueError("budget must be >= 1")
    if strategy not in ("random", "random+hill-climb"):
        raise ValueError(f"unknown strategy {strategy!r}")
    rng = random.Random(seed)
    inp, wts = seeded_operands(shape, seed)
    reference = conv_reference(inp, wts, shape)

    candidates: list[ConvSchedule] = []
    if is_valid(shape, DEFAULT_SCHEDULE):
        candidates.append(DEFAULT_SCHEDULE)
    hill_steps = budget * 3 // 10 if strategy == "random+hill-climb" else 0
    n_random = budget - len(candidates) - hill_steps
    if n_random > 0:
        candidates.extend(sample_schedules(shape, n_random, rng))
    if not candidates:
        raise NoValidSchedule(f"no valid schedule for shape {shape}")

    trials: list[Trial] = []
    seen = set(candidates)

    def run_trial(sched: ConvSchedule) -> Trial | None:
        kernel = PreparedKernel(shape, sched, inp, wts)
        if not _verify(kernel, reference):
            raise InvalidSchedule(
                f"schedule {sched} failed reference equivalence for {shape}"
            )
        t = Trial(sched, _timed_medians(kernel, reps, warmups))
        trials.append(t)
        return t

    for sched in candidates:
        run_trial(sched)

    best = min(trials, key=lambda t: t.median_seconds)
    for _ in range(hill_steps):
        cand = mutate_schedule(shape, best.schedule, rng)
        if cand in seen:
            cand = mutate_schedule(shape, cand, rng)
        if cand in seen:
            continue
        seen.add(cand)
        t = run_trial(cand)
        if t.median_seconds < best.median_seconds:
            best = t

    best = min(trials, key=lambda t: t.median_seconds)
    return TuneResult(
        shape=shape,
        best_schedule=best.schedule,
        best_seconds=best.median_seconds,
        best_gflops_per_s=shape.flops / best.median_seconds / 1e9,
        ideal_flops=shape.flops,
        trials=trials,
    )


# Desk-scale conv stack: ResNet-like 4-stage pyramid with channels
# (16, 32, 64, 128) and spatial extents (28, 14, 8, 4) at the 112
# resolution, scaled linearly with resolution. Extents stay integral for
# every multiple of 56, and FLOPs per stage are equal by construction, so
# the 448 -> 112 FLOPs-ideal ratio is exactly 16.
STACK_BASE = ((16, 28), (32, 14), (64, 8), (128, 4))
STACK_BASE_RESOLUTION = 112


def conv_stack(resolution: int) -> list[ConvShape]:
    """The declared conv stack at a given input resolution (3x3, stride 1, pad 1)."""
    if resolution % (STACK_BASE_RESOLUTION // 2) != 0:
        raise ValueError(f"resolution {resolution} must be a multiple of 56")
    shapes = []
    for ch, ext in STACK_BASE:
        e = ext * resolution // STACK_BASE_RESOLUTION
        shapes.append(ConvShape(in_channels=ch, out_channels=ch, height=e, width=e,
                                kernel=3, stride=1, padding=1))
    return shapes


@dataclass
class ScalingRow:
    resolution: int
    variant: str  # "default" | "tuned"
    sum_seconds: float
    gflops_per_s: float
    speedup_vs_448: float


@dataclass
class ScalingReport:
    rows: list[ScalingRow]
    flops_ideal_ratio_448_112: float
    tuned_ratio_448_112: float
    default_ratio_448_112: float
    best_schedules: dict = field(default_factory=dict)


def resolution_scaling_report(resolutions: list[int] | None = None, budget: int = 50,
                              seed: int = 0, reps: int = 3, warmups: int = 1,
                              stack_fn=conv_stack) -> ScalingReport:
    """Per-resolution stack times for the default schedule vs tuned schedules.

    Reports achieved 448 -> 112 speedup for both variants and the
    analytic FLOPs ratio for comparison.
    """
    if resolutions is None:
        resolutions = [112, 168, 224, 280, 336, 392, 448]
    sums: dict[tuple[int, str], float] = {}
    flops_sum: dict[int, int] = {}
    best_schedules: dict[tuple[int, int], ConvSchedule] = {}
    for res in resolutions:
        shapes = stack_fn(res)
        flops_sum[res] = sum(s.flops for s in shapes)
        d_total = 0.0
        t_total = 0.0
        for i, shape in enumerate(shapes):
            d_total += measure(shape, DEFAULT_SCHEDULE, reps=reps, warmups=warmups, seed=seed)
            result = tune(shape, budget=budget, seed=seed, reps=reps, warmups=warmups)
            t_total += result.best_seconds
            best_schedules[(res, i)] = result.best_schedule
        sums[(res, "default")] = d_total
        sums[(res, "tuned")] = t_total

    rows = []
    for res in resolutions:
        for variant in ("default", "tuned"):
            t = sums[(res, variant)]
            rows.append(ScalingRow(
                resolution=res,
                variant=variant,
                sum_seconds=t,
                gflops_per_s=flops_sum[res] / t / 1e9,
                speedup_vs_448=sums[(max(resolutions), variant)] / t,
            ))
    lo, hi = min(resolutions), max(resolutions)
    return ScalingReport(
        rows=rows,
        flops_ideal_ratio_448_112=flops_sum[hi] / flops_sum[lo],
        tuned_ratio_448_112=sums[(hi, "tuned")] / sums[(lo, "tuned")],
        default_ratio_448_112=sums[(hi, "default")] / sums[(lo, "default")],
        best_schedules=best_schedules,
    )
