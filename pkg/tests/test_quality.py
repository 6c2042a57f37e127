import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from resotune.errors import DimensionMismatch, EmptyTarget, NotProgressive
from resotune.jpegscan import PixelRaster, index_scans
from resotune.quality import (
    CropSpec,
    SsimParams,
    center_crop,
    psnr,
    quality_at_scan,
    resize,
    ssim,
)

from conftest import encode_baseline, photo_array


def raster(arr):
    return PixelRaster.from_array(np.asarray(arr, dtype=np.uint8))


rand_raster = st.integers(0, 2**32 - 1).map(
    lambda seed: raster(np.random.default_rng(seed).integers(0, 256, (24, 31, 3)))
)


class TestResize:
    def test_identity(self):
        r = raster(np.random.default_rng(0).integers(0, 256, (20, 30, 3)))
        assert resize(r, (30, 20)) is r

    def test_constant_stays_constant(self):
        r = raster(np.full((17, 13, 3), 77))
        out = resize(r, (29, 41))
        assert (out.width, out.height) == (29, 41)
        assert np.all(out.samples == 77)

    def test_2x2_to_1x1_half_pixel_center(self):
        # hand evaluation: the half-pixel center samples all four pixels
        # equally, (0 + 255 + 0 + 255) / 4 = 127.5, rounded to 128
        r = raster(np.array([[0, 255], [0, 255]])[:, :, None])
        out = resize(r, (1, 1))
        assert out.samples.ravel().tolist() == [128]

    def test_empty_target(self):
        r = raster(np.zeros((4, 4, 1)))
        with pytest.raises(EmptyTarget):
            resize(r, (0, 3))

    def test_resize_back_constant_identity(self):
        r = raster(np.full((16, 16, 1), 200))
        out = resize(resize(r, (7, 5)), (16, 16))
        assert np.array_equal(out.samples, r.samples)


class TestCenterCrop:
    def test_full_ratio_identity(self):
        r = raster(np.random.default_rng(1).integers(0, 256, (12, 12, 3)))
        assert center_crop(r, CropSpec(1.0)) is r

    def test_quarter_area_of_512(self):
        arr = np.zeros((512, 512, 1), np.uint8)
        arr[128:384, 128:384] = 255  # the exact expected crop window
        out = center_crop(raster(arr), CropSpec(0.25))
        assert (out.width, out.height) == (256, 256)
        assert np.all(out.samples == 255)

    def test_paper_footnote_crop(self):
        # 448 pixels from a 512x512 image corresponds to area (448/512)^2
        # ~= 0.766; at 448x448 input the same ratio keeps 392 pixels.
        out = center_crop(raster(np.zeros((448, 448, 1))), CropSpec((448 / 512) ** 2))
        assert (out.width, out.height) == (392, 392)

    def test_bad_ratio(self):
        with pytest.raises(ValueError):
            CropSpec(0.0)
        with pytest.raises(ValueError):
            CropSpec(1.2)


class TestSsim:
    def test_identity_exactly_one(self):
        r = raster(np.random.default_rng(2).integers(0, 256, (40, 40, 3)))
        assert ssim(r, r) == 1.0

    def test_constant_pair_closed_form(self):
        a = raster(np.zeros((32, 32, 1)))
        b = raster(np.full((32, 32, 1), 255))
        c1 = (0.01 * 255.0) ** 2
        expected = c1 / (255.0**2 + c1)
        assert ssim(a, b) == pytest.approx(expected, abs=1e-9)

    @settings(max_examples=20, deadline=None)
    @given(rand_raster, rand_raster)
    def test_symmetry(self, a, b):
        assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(rand_raster, rand_raster)
    def test_bounded(self, a, b):
        assert -1.0 <= ssim(a, b) <= 1.0

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            ssim(raster(np.zeros((4, 4, 1))), raster(np.zeros((5, 4, 1))))

    def test_gaussian_window_option(self):
        rng = np.random.default_rng(3)
        a = raster(rng.integers(0, 256, (32, 32, 3)))
        b = raster(rng.integers(0, 256, (32, 32, 3)))
        p = SsimParams(window="gaussian", window_size=11)
        assert -1.0 <= ssim(a, b, p) <= 1.0
        assert ssim(a, a, p) == pytest.approx(1.0, abs=1e-12)

    def test_params_validation(self):
        with pytest.raises(ValueError):
            SsimParams(k1=0.0)
        with pytest.raises(ValueError):
            SsimParams(window="hann")


class TestPsnr:
    def test_identical_is_infinite(self):
        r = raster(np.random.default_rng(4).integers(0, 256, (10, 10, 3)))
        assert psnr(r, r) == math.inf

    def test_plus_one_everywhere(self):
        a = raster(np.full((16, 16, 1), 100))
        b = raster(np.full((16, 16, 1), 101))
        # MSE = 1 -> 20 log10(255)
        assert psnr(a, b) == pytest.approx(20 * math.log10(255), abs=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(rand_raster, rand_raster)
    def test_symmetry(self, a, b):
        assert psnr(a, b) == psnr(b, a)

    def test_dimension_mismatch(self):
        with pytest.raises(DimensionMismatch):
            psnr(raster(np.zeros((4, 4, 1))), raster(np.zeros((4, 5, 1))))


class TestQualityAtScan:
    def test_final_scan_is_exactly_one(self, photo_jpeg):
        for res in (112, 224):
            v = quality_at_scan(photo_jpeg, photo_jpeg.n_scans, (res, res), CropSpec(0.75))
            assert v == 1.0

    def test_first_scan_lossy(self, photo_jpeg):
        v = quality_at_scan(photo_jpeg, 1, (224, 224), CropSpec(0.75))
        assert 0.0 < v < 1.0

    def test_non_decreasing_within_tolerance(self, photo_jpeg):
        vals = [
            quality_at_scan(photo_jpeg, k, (160, 160), CropSpec(0.75))
            for k in range(1, photo_jpeg.n_scans + 1)
        ]
        for a, b in zip(vals, vals[1:]):
            assert b >= a - 0.005

    def test_requires_progressive(self):
        img = index_scans(encode_baseline(photo_array(seed=9)))
        with pytest.raises(NotProgressive):
            quality_at_scan(img, 1, (112, 112), CropSpec(1.0))


def test_compiled_and_fallback_agree():
    from resotune import _fallback, native

    if not native.have_compiled():
        pytest.skip("compiled core unavailable")
    rng = np.random.default_rng(5)
    src = rng.integers(0, 256, (60, 44, 3), dtype=np.uint8)
    assert np.array_equal(
        np.asarray(native.resize_bilinear_u8(src, 100, 90)),
        _fallback.resize_bilinear_u8(src, 100, 90),
    )
    a = rng.random((64, 64), dtype=np.float32) * 255
    b = (a + rng.normal(0, 4, a.shape)).astype(np.float32)
    assert native.ssim_uniform(a, b, 8, 6.5025, 58.5225) == pytest.approx(
        _fallback.ssim_uniform(a, b, 8, 6.5025, 58.5225), abs=1e-9
    )
    assert np.array_equal(
        np.asarray(native.luma_bt601(src)), _fallback.luma_bt601(src)
    )
