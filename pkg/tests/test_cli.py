import json
import sys

import pytest

from resotune.cli import main
from resotune.errors import ConfigError
from resotune.experiment import ExperimentConfig, run_experiment
from resotune.jpegscan import decode, index_scans

from conftest import encode_progressive, photo_array


@pytest.fixture(scope="module")
def jpeg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "photo.jpg"
    path.write_bytes(encode_progressive(photo_array(seed=50)))
    return path


def test_index_lines(jpeg_file, capsys):
    assert main(["index", str(jpeg_file)]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    img = index_scans(jpeg_file.read_bytes())
    assert len(lines) == img.n_scans
    first = lines[0].split(",")
    assert first[0] == "1"
    assert int(first[1]) == img.scan_offsets[0]
    assert int(first[2]) == img.scan_offsets[1]


def test_truncate_writes_decodable(jpeg_file, tmp_path):
    out = tmp_path / "trunc.jpg"
    assert main(["truncate", str(jpeg_file), "--scans", "2", "-o", str(out)]) == 0
    data = out.read_bytes()
    assert data.count(b"\xff\xda") == 2
    decode(data)


def test_ssim_subcommand(jpeg_file, capsys):
    assert main(["ssim", str(jpeg_file), str(jpeg_file)]) == 0
    assert float(capsys.readouterr().out.strip()) == 1.0


def test_quality_sweep_rows(jpeg_file, capsys):
    assert main(["quality-sweep", str(jpeg_file), "--res", "112", "--crop", "0.75"]) == 0
    lines = capsys.readouterr().out.strip().split("\n")
    img = index_scans(jpeg_file.read_bytes())
    assert lines[0] == "scan,cumulative_bytes,ssim"
    assert len(lines) == 1 + img.n_scans
    assert float(lines[-1].split(",")[2]) == 1.0


def test_tune_subcommand(tmp_path, capsys):
    out = tmp_path / "tune.json"
    rc = main(["tune", "--shape", "2,2,8,8,3,1,1", "--budget", "2", "--seed", "0",
               "--out", str(out)])
    assert rc == 0
    body = json.loads(out.read_text())
    assert len(body["trials"]) == 2
    assert body["ideal_flops"] == 2 * 2 * 8 * 8 * 2 * 3 * 3


def test_synth_and_calibrate_and_pipeline(tmp_path, capsys):
    data = tmp_path / "ds"
    assert main(["synth", "--n", "12", "--seed", "3", "--out", str(data)]) == 0
    thr = tmp_path / "thr.json"
    rc = main([
        "calibrate", "--model", "synthetic", "--dataset", str(data),
        "--crop", "0.75", "--resolutions", "112,224", "--out", str(thr),
    ])
    assert rc == 0
    body = json.loads(thr.read_text())
    assert {e["resolution"] for e in body["entries"]} == {112, 224}
    rc = main(["pipeline", "--thresholds", str(thr), "--dataset", str(data)])
    assert rc == 0
    lines = capsys.readouterr().out.strip().split("\n")
    # header + one line per image (last synth/calibrate prints included before)
    assert sum(1 for l in lines if l.startswith("synth-")) == 12


def test_experiment_config_validation():
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"dataset": {"path": "/data"}, "backbone": "synthetic"})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"dataset": {}})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict({"dataset": {"synthetic": {"n": 4}}, "bogus_key": 1})
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(
            {"dataset": {"path": "/data"}, "backbone": "ftp://x", "scale_backend": "cmd:x"}
        )


def test_experiment_runs_and_row_counts(tmp_path):
    cfg = ExperimentConfig.from_dict({
        "dataset": {"synthetic": {"n": 16, "seed": 5}},
        "crops": [0.25, 0.75],
        "resolutions": [112, 224],
        "out_dir": str(tmp_path / "out"),
        "seed": 5,
    })
    result = run_experiment(cfg)
    assert result.ok, result.failures
    acc = (tmp_path / "out" / "accflops.csv").read_text().strip().split("\n")
    assert len(acc) == 1 + 2 * (2 + 1)  # header + crops x (resolutions + dynamic)
    assert (tmp_path / "out" / "thresholds.json").exists()
    assert (tmp_path / "out" / "storage.csv").exists()
    assert (tmp_path / "out" / "config.resolved.json").exists()


def test_conformance_subcommand(small_synth, capsys):
    _, _, data_dir = small_synth
    cmd = (
        f"{sys.executable} -m resotune.backends --kind backbone "
        f"--dataset {data_dir} --resolutions 112,224"
    )
    assert main(["conformance", "--backend-cmd", cmd]) == 0
