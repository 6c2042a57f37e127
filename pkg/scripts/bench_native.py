#!/usr/bin/env python3
"""Benchmark the compiled kernel core against the pure-numpy fallback.

Runs each hot kernel on representative inputs under both implementations
and prints a table of median times plus the speedup. The fallback is
selected per-call here (not via RESOTUNE_PURE_PYTHON) so one process can
compare both.
"""

import statistics
import time

import numpy as np

from resotune import _fallback, native
from resotune.autotune import ConvShape, ConvSchedule, seeded_operands
from resotune.autotune.engine import PreparedKernel


def timed(fn, reps=7):
    for _ in range(2):
        fn()
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        samples.append(time.perf_counter() - t0)
    return statistics.median(samples)


def row(name, compiled_s, fallback_s):
    print(f"{name:<38} {compiled_s * 1e3:>10.3f} {fallback_s * 1e3:>10.3f} "
          f"{fallback_s / compiled_s:>9.1f}x")


def main():
    if not native.have_compiled():
        raise SystemExit("compiled core unavailable; build the extension first")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<38} {'compiled ms':>10} {'fallback ms':>11} {'speedup':>9}")

    src = rng.integers(0, 256, (192, 192, 3), dtype=np.uint8)
    for res in (112, 448):
        row(
            f"resize_bilinear 192->{res}",
            timed(lambda: native.resize_bilinear_u8(src, res, res)),
            timed(lambda: _fallback.resize_bilinear_u8(src, res, res)),
        )
        row(
            f"resize+luma fused 192->{res}",
            timed(lambda: native.resize_luma_u8(src, res, res)),
            timed(lambda: _fallback.resize_luma_u8(src, res, res)),
        )

    for res in (112, 448):
        a = rng.random((res, res), dtype=np.float32) * 255
        b = (a + rng.normal(0, 3, a.shape)).astype(np.float32)
        row(
            f"ssim_uniform {res}x{res}",
            timed(lambda: native.ssim_uniform(a, b, 8, 6.5025, 58.5225)),
            timed(lambda: _fallback.ssim_uniform(a, b, 8, 6.5025, 58.5225)),
        )

    shape = ConvShape(16, 16, 56, 56, 3, 1, 1)
    inp, wts = seeded_operands(shape, 0)
    row(
        "conv2d_reference 16ch 56x56 3x3",
        timed(lambda: native.conv2d_reference(inp, wts, 1, 1), reps=3),
        timed(lambda: _fallback.conv2d_reference(inp, wts, 1, 1), reps=3),
    )

    sched = ConvSchedule(tile_oc=8, tile_oh=8, tile_ow=56, loop_order="oc-oh-ic-ow",
                         vector_width=8, unroll=2, layout="channel_blocked")
    kernel = PreparedKernel(shape, sched, inp, wts)
    fb_args = (inp, wts, 1, 1, 8, 8, 56, sched.perm(), 8, 2, True)
    row(
        "conv2d_scheduled (tuned-style)",
        timed(kernel.run, reps=5),
        timed(lambda: _fallback.conv2d_scheduled(*fb_args), reps=3),
    )

    print("\nbackend selected at import:", native.BACKEND)


if __name__ == "__main__":
    main()
