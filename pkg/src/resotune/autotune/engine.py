"""Execution of reference and scheduled convolutions.

`prepare_scheduled` packs buffers per the schedule's layout once
(outside any timed region) and returns a runner whose call is pure
compute, which is what the tuner times.
"""

import numpy as np

from .. import _fallback, native
from ..errors import ShapeMismatch
from .schedule import ConvSchedule, ConvShape, validate_schedule


def _check_args(inp: np.ndarray, weights: np.ndarray, shape: ConvShape) -> None:
    if inp.shape != (shape.in_channels, shape.height, shape.width):
        raise ShapeMismatch(f"input {inp.shape} != {(shape.in_channels, shape.height, shape.width)}")
    expect_w = (shape.out_channels, shape.in_channels, shape.kernel, shape.kernel)
    if weights.shape != expect_w:
        raise ShapeMismatch(f"weights {weights.shape} != {expect_w}")


def conv_reference(inp: np.ndarray, weights: np.ndarray, shape: ConvShape) -> np.ndarray:
    """Direct convolution oracle: float64 accumulation, float32 output."""
    _check_args(inp, weights, shape)
    inp = np.ascontiguousarray(inp, dtype=np.float32)
    weights = np.ascontiguousarray(weights, dtype=np.float32)
    return np.asarray(native.conv2d_reference(inp, weights, shape.stride, shape.padding))


class PreparedKernel:
    """A scheduled conv with layout-packed buffers; run() is timing-safe."""

    def __init__(self, shape: ConvShape, sched: ConvSchedule,
                 inp: np.ndarray, weights: np.ndarray):
        validate_schedule(shape, sched)
        _check_args(inp, weights, shape)
        self.shape = shape
        self.sched = sched
        ic, h, w = shape.in_channels, shape.height, shape.width
        p = shape.padding
        padded = np.zeros((ic, h + 2 * p, w + 2 * p), dtype=np.float32)
        padded[:, p : p + h, p : p + w] = inp
        wts = np.ascontiguousarray(weights, dtype=np.float32)
        h2, w2 = h + 2 * p, w + 2 * p
        if sched.layout == "channel_major":
            self._x = np.ascontiguousarray(padded).reshape(-1)
            self._w = wts.reshape(-1)
            self._sx = (h2 * w2, w2, 1)
            k = shape.kernel
            self._sw = (ic * k * k, k * k, k, 1)
        else:  # channel_blocked: channels innermost
            self._x = np.ascontiguousarray(padded.transpose(1, 2, 0)).reshape(-1)
            self._w = np.ascontiguousarray(wts.transpose(0, 2, 3, 1)).reshape(-1)
            self._sx = (1, w2 * ic, ic)
            k = shape.kernel
            self._sw = (k * k * ic, 1, k * ic, ic)
        self._out = np.empty((shape.out_channels, shape.out_height, shape.out_width),
                             dtype=np.float32)
        perm = sched.perm()
        tile_of = {0: sched.tile_oc, 1: sched.tile_oh, 2: sched.tile_ow,
                   3: shape.in_channels}
        self._tiles = tuple(tile_of[d] for d in perm)
        self._perm = perm
        self._lanes = sched.vector_width * sched.unroll
        self._kernel = native.scheduled_kernel()
        if self._kernel is None:
            self._fallback_args = (
                np.ascontiguousarray(inp, dtype=np.float32), wts,
                shape.stride, shape.padding,
                sched.tile_oc, sched.tile_oh, sched.tile_ow,
                perm, sched.vector_width, sched.unroll,
                sched.layout == "channel_blocked",
            )

    def run(self) -> np.ndarray:
        s = self.shape
        if self._kernel is None:
            self._out[:] = _fallback.conv2d_scheduled(*self._fallback_args)
            return self._out
        self._kernel(
            self._x, self._w, self._out,
            s.in_channels, s.out_channels, s.out_height, s.out_width,
            s.kernel, s.kernel, s.stride,
            self._sx[0], self._sx[1], self._sx[2],
            self._sw[0], self._sw[1], self._sw[2], self._sw[3],
            self._tiles[0], self._tiles[1], self._tiles[2], self._tiles[3],
            self._perm[0], self._perm[1], self._perm[2], self._perm[3],
            self._lanes,
        )
        return self._out


def conv_scheduled(inp: np.ndarray, weights: np.ndarray, shape: ConvShape,
                   sched: ConvSchedule) -> np.ndarray:
    """One-shot scheduled convolution (packs, runs, returns a copy)."""
    return PreparedKernel(shape, sched, inp, weights).run().copy()


def seeded_operands(shape: ConvShape, seed: int) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng(seed)
    inp = rng.uniform(-1.0, 1.0, (shape.in_channels, shape.height, shape.width)).astype(np.float32)
    wts = rng.uniform(-1.0, 1.0,
                      (shape.out_channels, shape.in_channels, shape.kernel, shape.kernel)
                      ).astype(np.float32)
    return inp, wts


def max_abs_rel_error(got: np.ndarray, want: np.ndarray,
                      abs_floor: float = 1e-6) -> float:
    """Elementwise error relative to max(|element|, output RMS).

    Reassociated float32 accumulation leaves absolute noise of order
    eps * sqrt(n) * scale on every element; near cancellation zeros a
    strictly per-element relative bound is unattainable, so elements are
    judged against the larger of their own magnitude and the output's RMS
    (with an absolute floor for all-zero outputs).
    """
    want64 = want.astype(np.float64)
    rms = float(np.sqrt(np.mean(want64 * want64)))
    denom = np.maximum(np.abs(want64), max(rms, abs_floor))
    return float(np.max(np.abs(got.astype(np.float64) - want64) / denom))
