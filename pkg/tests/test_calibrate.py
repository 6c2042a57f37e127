import json
import math

import pytest

from resotune.calibrate import (
    CalibrationConfig,
    QualityLadders,
    QualityThresholdTable,
    allowed_misses,
    build_threshold_table,
    calibrate_threshold,
    calibration_subset,
    min_scans_for_threshold,
    read_savings,
    search_threshold,
)
from resotune.dataset import Dataset, LabeledImage
from resotune.errors import EmptyDataset, MissingThreshold, NotProgressive
from resotune.jpegscan import index_scans
from resotune.quality import CropSpec, quality_at_scan
from resotune.synthetic import SyntheticBackbone

from conftest import encode_baseline, encode_progressive, photo_array


class TestMinScans:
    def test_matches_linear_scan_oracle(self, photo_jpeg):
        crop = CropSpec(0.75)
        sweep = [
            quality_at_scan(photo_jpeg, k, (168, 168), crop)
            for k in range(1, photo_jpeg.n_scans + 1)
        ]
        for threshold in (0.0, 0.5, sweep[0], sweep[2], 1.0):
            oracle = next(
                (k for k, v in enumerate(sweep, start=1) if v >= threshold),
                photo_jpeg.n_scans,
            )
            got = min_scans_for_threshold(photo_jpeg, 168, crop, threshold)
            assert got == oracle, (threshold, sweep)

    def test_zero_threshold_single_scan(self, photo_jpeg):
        assert min_scans_for_threshold(photo_jpeg, 112, CropSpec(1.0), 0.0) == 1

    def test_threshold_one_needs_full(self, photo_jpeg):
        got = min_scans_for_threshold(photo_jpeg, 224, CropSpec(0.75), 1.0)
        assert got == photo_jpeg.n_scans

    def test_stub_ladder_example(self, photo_jpeg):
        # the spec's worked example: sweep [0.91, 0.95, 0.97, 0.99, 1.0],
        # threshold 0.96 -> smallest satisfying k is 3
        ds = Dataset([LabeledImage("x", photo_jpeg, 0, {})], classes=[])
        ladders = QualityLadders(ds, (224,), CropSpec(0.75))
        ladders._ladders[0][224] = [0.91, 0.95, 0.97, 0.99, 1.0]
        assert ladders.min_scans(0, 224, 0.96) == 3

    def test_non_decreasing_in_threshold(self, photo_jpeg):
        crop = CropSpec(0.75)
        ks = [
            min_scans_for_threshold(photo_jpeg, 224, crop, t)
            for t in (0.2, 0.8, 0.95, 0.99, 1.0)
        ]
        assert ks == sorted(ks)

    def test_requires_progressive(self):
        img = index_scans(encode_baseline(photo_array(seed=21)))
        with pytest.raises(NotProgressive):
            min_scans_for_threshold(img, 112, CropSpec(1.0), 0.5)


class TestSearchThreshold:
    def test_step_oracle_converges_to_097(self):
        threshold, evals, ok = search_threshold(0.94, 1.0, 0.0001, lambda t: t >= 0.97)
        assert abs(threshold - 0.97) <= 0.0001
        assert threshold >= 0.97  # hi stays feasible
        assert evals <= 10
        assert ok

    def test_eval_bound_is_exact_for_defaults(self):
        cfg = CalibrationConfig()
        assert cfg.max_evals == math.ceil(math.log2(0.06 / 0.0001)) == 10
        _, evals, _ = search_threshold(
            cfg.ssim_lo, cfg.ssim_hi, cfg.step_epsilon, lambda t: t >= 0.97
        )
        assert evals == cfg.max_evals

    def test_always_feasible_returns_near_lo(self):
        threshold, _, ok = search_threshold(0.94, 1.0, 0.0001, lambda t: True)
        assert ok and threshold <= 0.94 + 0.0001

    def test_never_feasible_flagged(self):
        threshold, _, ok = search_threshold(0.94, 1.0, 0.0001, lambda t: False)
        assert not ok

    def test_generic_step_positions(self):
        for target in (0.941, 0.9635, 0.98, 0.9999):
            got, _, _ = search_threshold(0.94, 1.0, 0.0001, lambda t: t >= target)
            assert target <= got <= target + 0.0001


class TestBudget:
    def test_miss_count_examples(self):
        assert allowed_misses(0.0005, 2000) == 1
        assert allowed_misses(0.0005, 100) == 0
        assert allowed_misses(0.0, 500) == 0
        assert allowed_misses(0.001, 10_000) == 10

    def test_subset_deterministic_and_capped(self):
        cfg = CalibrationConfig(sample_size=10, seed=3)
        s1 = calibration_subset(50, cfg)
        s2 = calibration_subset(50, cfg)
        assert s1 == s2
        assert len(s1) == 10
        assert calibration_subset(4, cfg) == [0, 1, 2, 3]


@pytest.fixture(scope="module")
def calibrated(small_synth):
    ds, cfg, _ = small_synth
    backbone = SyntheticBackbone(ds, cfg)
    cal = CalibrationConfig(resolutions=(112, 224, 448), seed=1)
    crop = CropSpec(0.75)
    ladders = QualityLadders(ds, cal.resolutions, crop)
    table = build_threshold_table(backbone, cal.resolutions, crop, ds, cal, ladders)
    return ds, cfg, backbone, cal, crop, ladders, table


class TestCalibrateThreshold:
    def test_thresholds_in_bounds_and_eval_budget(self, calibrated):
        ds, cfg, backbone, cal, crop, ladders, table = calibrated
        out = calibrate_threshold(backbone, 224, crop, ds, cal, ladders)
        assert cal.ssim_lo <= out.threshold <= cal.ssim_hi
        assert out.evals <= cal.max_evals
        assert not out.flagged

    def test_empty_dataset(self, calibrated):
        _, cfg, backbone, cal, crop, _, _ = calibrated
        with pytest.raises(EmptyDataset):
            Dataset([], classes=[])


class TestThresholdTable:
    def test_covers_all_resolutions(self, calibrated):
        *_, table = calibrated
        assert table.resolutions == (112, 224, 448)

    def test_permutation_invariance(self, small_synth):
        ds, syn_cfg, out = small_synth
        backbone = SyntheticBackbone(ds, syn_cfg)
        cal = CalibrationConfig(resolutions=(112, 224, 448), seed=1)
        crop = CropSpec(0.75)
        t1 = build_threshold_table(backbone, (112, 224, 448), crop, ds, cal)
        t2 = build_threshold_table(backbone, (448, 112, 224), crop, ds, cal)
        assert t1.entries == t2.entries

    def test_deterministic_json(self, small_synth):
        ds, syn_cfg, _ = small_synth
        backbone = SyntheticBackbone(ds, syn_cfg)
        cal = CalibrationConfig(resolutions=(112, 448), seed=1)
        crop = CropSpec(0.75)
        j1 = build_threshold_table(backbone, (112, 448), crop, ds, cal).to_json()
        j2 = build_threshold_table(backbone, (112, 448), crop, ds, cal).to_json()
        assert j1 == j2

    def test_json_round_trip(self, calibrated):
        *_, table = calibrated
        again = QualityThresholdTable.from_json(table.to_json())
        assert again.entries == table.entries
        assert again.model_id == table.model_id
        assert again.crop_area == table.crop_area

    def test_file_schema(self, calibrated):
        *_, table = calibrated
        body = json.loads(table.to_json())
        assert set(body) >= {"model_id", "crop", "entries", "config"}
        assert all(set(e) == {"resolution", "ssim"} for e in body["entries"])

    def test_missing_threshold(self, calibrated):
        *_, table = calibrated
        with pytest.raises(MissingThreshold):
            table.threshold(999)


class TestReadSavings:
    def test_report_bounds_and_budget(self, calibrated):
        ds, syn_cfg, backbone, cal, crop, ladders, table = calibrated
        report = read_savings(table, backbone, ds, crop, ladders)
        allowed = allowed_misses(cal.accuracy_budget, len(ds))
        for row in report.rows:
            assert row.bytes_calibrated <= row.bytes_default
            assert 0.0 <= row.savings <= 1.0
            loss_count = round((row.accuracy_default - row.accuracy_calibrated) * len(ds))
            assert loss_count <= allowed
        assert report.rows[0].bytes_calibrated < report.rows[0].bytes_default

    def test_scan1_sufficient_savings_formula(self, small_synth):
        # thresholds at 0 force exactly one scan per image; savings must
        # equal 1 - sum(scan-1 bytes) / sum(total bytes) computed from the
        # fixture offsets directly
        ds, syn_cfg, _ = small_synth
        backbone = SyntheticBackbone(ds, syn_cfg, resolutions=(112,))
        table = QualityThresholdTable("synthetic-backbone", 0.75, {112: 0.0})
        report = read_savings(table, backbone, ds, CropSpec(0.75))
        scan1 = sum(item.img.scan_offsets[1] for item in ds)
        total = sum(item.img.total_bytes for item in ds)
        assert report.rows[0].bytes_calibrated == scan1
        assert report.rows[0].savings == pytest.approx(1.0 - scan1 / total)

    def test_full_read_thresholds_zero_savings(self, small_synth):
        ds, syn_cfg, _ = small_synth
        backbone = SyntheticBackbone(ds, syn_cfg, resolutions=(112,))
        table = QualityThresholdTable("synthetic-backbone", 0.75, {112: 1.0})
        report = read_savings(table, backbone, ds, CropSpec(0.75))
        assert report.rows[0].bytes_calibrated == report.rows[0].bytes_default
        assert report.rows[0].savings == 0.0

    def test_csv_shape(self, calibrated):
        ds, syn_cfg, backbone, cal, crop, ladders, table = calibrated
        csv = read_savings(table, backbone, ds, crop, ladders).to_csv()
        lines = csv.strip().split("\n")
        assert lines[0] == "resolution,default_acc,calibrated_acc,default_bytes,calibrated_bytes,savings_pct"
        assert len(lines) == 1 + len(table.resolutions)


def test_rejects_baseline_images_by_name():
    data = encode_baseline(photo_array(seed=30))
    item = LabeledImage("plain-photo", index_scans(data), 0, {})
    prog = LabeledImage("ok", index_scans(encode_progressive(photo_array(seed=31))), 0, {})
    with pytest.raises(NotProgressive, match="plain-photo"):
        QualityLadders(Dataset([prog, item], classes=[]), (112,), CropSpec(1.0))
