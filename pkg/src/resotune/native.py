"""Selects the compiled kernel core at import, falling back to numpy.

Set RESOTUNE_PURE_PYTHON=1 to force the fallback (used by the benchmark
script and the fallback test job). `BACKEND` names the active
implementation.
"""

import os

from . import _fallback

if os.environ.get("RESOTUNE_PURE_PYTHON"):
    _impl = None
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = None

BACKEND = "compiled" if _impl is not None else "fallback"

if _impl is not None:
    luma_bt601 = _impl.luma_bt601
    resize_bilinear_u8 = _impl.resize_bilinear_u8
    resize_luma_u8 = _impl.resize_luma_u8
    ssim_uniform = _impl.ssim_uniform
    conv2d_reference = _impl.conv2d_reference
else:
    luma_bt601 = _fallback.luma_bt601
    resize_bilinear_u8 = _fallback.resize_bilinear_u8
    resize_luma_u8 = _fallback.resize_luma_u8
    ssim_uniform = _fallback.ssim_uniform

    def conv2d_reference(inp, weights, stride, pad):
        return _fallback.conv2d_reference(inp, weights, stride, pad)


# Gaussian-window SSIM has no compiled variant; it is a config option off
# the hot path.
ssim_gaussian = _fallback.ssim_gaussian


def have_compiled() -> bool:
    return _impl is not None


def scheduled_kernel():
    """Returns the compiled scheduled-conv entry point or None."""
    return None if _impl is None else _impl.conv2d_scheduled
