import threading

import pytest

requests = pytest.importorskip("requests")

from resotune.calibrate import CalibrationConfig, QualityLadders, QualityThresholdTable, build_threshold_table
from resotune.jpegscan import cumulative_bytes, decode, truncate_at_scan
from resotune.quality import CropSpec
from resotune.server import serve
from resotune.synthetic import SyntheticBackbone


@pytest.fixture(scope="module")
def running_server(small_synth, tmp_path_factory):
    ds, syn_cfg, data_dir = small_synth
    resolutions = (112, 224, 448)
    backbone = SyntheticBackbone(ds, syn_cfg, resolutions)
    cal = CalibrationConfig(resolutions=resolutions, seed=1)
    crop = CropSpec(0.75)
    ladders = QualityLadders(ds, resolutions, crop)
    table = build_threshold_table(backbone, resolutions, crop, ds, cal, ladders)
    thr_path = tmp_path_factory.mktemp("server") / "thresholds.json"
    table.save(thr_path)
    httpd = serve(data_dir, thr_path, "127.0.0.1", 0)
    thread = threading.Thread(target=httpd.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{httpd.server_port}"
    yield base, ds, table
    httpd.shutdown()


def test_fresh_metrics_zero(running_server):
    base, ds, table = running_server
    body = requests.get(f"{base}/metrics").text
    metrics = dict(line.split() for line in body.strip().split("\n"))
    assert metrics["bytes_served_total"] == "0"
    assert metrics["bytes_saved_total"] == "0"


def test_served_bodies_decode_and_headers_match(running_server):
    base, ds, table = running_server
    for item in list(ds)[:6]:
        r = requests.get(f"{base}/image/{item.image_id}", params={"resolution": 224})
        assert r.status_code == 200
        assert r.headers["Content-Type"] == "image/jpeg"
        raster = decode(r.content)  # every body must be decodable
        assert (raster.width, raster.height) == (item.img.width, item.img.height)
        k = int(r.headers["X-Scans-Read"])
        assert int(r.headers["X-Bytes-Total"]) == item.img.total_bytes
        assert int(r.headers["X-Bytes-Read"]) == cumulative_bytes(item.img, k)
        assert r.content == truncate_at_scan(item.img, k)


def test_repeat_requests_identical(running_server):
    base, ds, table = running_server
    url = f"{base}/image/{ds[0].image_id}"
    r1 = requests.get(url, params={"resolution": 112})
    r2 = requests.get(url, params={"resolution": 112})
    assert r1.content == r2.content
    assert r1.headers["X-Scans-Read"] == r2.headers["X-Scans-Read"]


def test_full_quality_threshold_serves_whole_file(running_server, tmp_path):
    base, ds, table = running_server
    # a table with threshold 1.0 forces the full stream
    full_table = QualityThresholdTable(table.model_id, table.crop_area,
                                       {res: 1.0 for res in table.resolutions})
    from resotune.server import ImageStore, ScanServer

    store = ImageStore(ds.source)
    server = ScanServer(store, full_table)
    status, headers, body = server.serve_image(ds[0].image_id, 224, None)
    assert status == 200
    assert body == ds[0].img.data
    assert int(headers["X-Bytes-Read"]) == ds[0].img.total_bytes


def test_serve_more_extends_prefix(running_server):
    base, ds, table = running_server
    item = ds[1]
    r = requests.get(f"{base}/image/{item.image_id}/scans", params={"from": 1, "to": 3})
    assert r.status_code == 200
    prefix = truncate_at_scan(item.img, 1)[:-2]  # drop synthesized EOI
    combined = prefix + r.content + b"\xff\xd9"
    assert combined == truncate_at_scan(item.img, 3)
    decode(combined)


def test_serve_more_partitions_stream(running_server):
    base, ds, table = running_server
    item = ds[2]
    n = item.img.n_scans
    k = 2
    r = requests.get(f"{base}/image/{item.image_id}/scans", params={"from": k, "to": n})
    prefix_len = cumulative_bytes(item.img, k)
    assert prefix_len + len(r.content) == item.img.total_bytes


def test_error_statuses(running_server):
    base, ds, table = running_server
    assert requests.get(f"{base}/image/no-such-id", params={"resolution": 224}).status_code == 404
    assert requests.get(f"{base}/image/{ds[0].image_id}", params={"resolution": 99}).status_code == 400
    assert requests.get(f"{base}/image/{ds[0].image_id}").status_code == 400
    r = requests.get(f"{base}/image/{ds[0].image_id}/scans", params={"from": 2, "to": 2})
    assert r.status_code == 416
    r = requests.get(f"{base}/image/{ds[0].image_id}/scans", params={"from": 1, "to": 99})
    assert r.status_code == 416
    assert requests.get(f"{base}/image/..%2fescape", params={"resolution": 224}).status_code in (400, 404)


def test_non_progressive_file_gets_422(tmp_path, small_synth):
    from conftest import encode_baseline, photo_array
    from resotune.server import ImageStore, ScanServer

    (tmp_path / "plain.jpg").write_bytes(encode_baseline(photo_array(seed=40)))
    table = QualityThresholdTable("m", 0.75, {224: 0.95})
    server = ScanServer(ImageStore(tmp_path), table)
    status, _, _ = server.serve_image("plain", 224, None)
    assert status == 422


def test_crop_fallback_header(running_server):
    base, ds, table = running_server
    r = requests.get(f"{base}/image/{ds[0].image_id}",
                     params={"resolution": 224, "crop": 0.3})
    assert r.status_code == 200
    assert r.headers["X-Crop-Fallback"] == f"{table.crop_area:.6g}"


def test_metrics_accounting_after_session(running_server):
    base, ds, table = running_server
    before = dict(
        line.split() for line in requests.get(f"{base}/metrics").text.strip().split("\n")
    )
    saved = 0
    ids = [item.image_id for item in ds]
    for i in range(30):
        item = ds[i % len(ds)]
        res = (112, 224, 448)[i % 3]
        r = requests.get(f"{base}/image/{item.image_id}", params={"resolution": res})
        saved += int(r.headers["X-Bytes-Total"]) - int(r.headers["X-Bytes-Read"])
    after = dict(
        line.split() for line in requests.get(f"{base}/metrics").text.strip().split("\n")
    )
    assert int(after["bytes_saved_total"]) - int(before["bytes_saved_total"]) == saved
    assert int(after["requests_total"]) > int(before["requests_total"])
