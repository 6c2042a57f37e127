import io

import numpy as np
import pytest
from PIL import Image

from resotune.jpegscan import index_scans

# libjpeg's simple progression script: 10 scans for 3-component YCbCr,
# 6 for grayscale. Both Pillow and OpenCV encode with it.
COLOR_SCANS = 10
GRAY_SCANS = 6


def photo_array(size=(96, 96), seed=0):
    """Natural-looking content: gradients, a few shapes, mild grain."""
    rng = np.random.default_rng(seed)
    h, w = size
    yy, xx = np.mgrid[0:h, 0:w]
    base = 80 + 60 * np.sin(xx / w * 3.1) + 40 * np.cos(yy / h * 2.2)
    base += rng.normal(0, 4, (h, w))
    cy, cx = h // 2, w // 2
    r = min(h, w) // 4
    base[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = 210
    base[h // 8 : h // 4, w // 8 : w // 2] = 40
    gray = np.clip(base, 0, 255).astype(np.uint8)
    rgb = np.stack([gray, np.roll(gray, 3, axis=1), 255 - gray], axis=-1)
    return rgb


def encode_progressive(arr, quality=85, gray=False, subsampling=None, restart_rows=None):
    img = Image.fromarray(arr)
    if gray:
        img = img.convert("L")
    kwargs = {"progressive": True, "quality": quality}
    if subsampling is not None:
        kwargs["subsampling"] = subsampling
    if restart_rows is not None:
        kwargs["restart_marker_rows"] = restart_rows
    buf = io.BytesIO()
    img.save(buf, "JPEG", **kwargs)
    return buf.getvalue()


def encode_baseline(arr, quality=85):
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, "JPEG", progressive=False, quality=quality)
    return buf.getvalue()


def encode_restart_cv2(arr, interval=4, quality=85):
    """Restart markers inside scan data via OpenCV's RST interval option."""
    cv2 = pytest.importorskip("cv2")
    ok, enc = cv2.imencode(
        ".jpg",
        arr[:, :, ::-1],
        [cv2.IMWRITE_JPEG_PROGRESSIVE, 1, cv2.IMWRITE_JPEG_RST_INTERVAL, interval,
         cv2.IMWRITE_JPEG_QUALITY, quality],
    )
    assert ok
    return enc.tobytes()


@pytest.fixture(scope="session")
def photo_jpeg():
    """A progressive color fixture with known scan count."""
    data = encode_progressive(photo_array((96, 96), seed=1))
    return index_scans(data)


@pytest.fixture(scope="session")
def small_synth(tmp_path_factory):
    """A small synthetic dataset shared by pipeline-level tests."""
    from resotune.synthetic import SyntheticConfig, generate_synthetic_scale_dataset

    cfg = SyntheticConfig(n=48, seed=11)
    out = tmp_path_factory.mktemp("synth48")
    ds = generate_synthetic_scale_dataset(out, cfg)
    return ds, cfg, out


def build_marker_stream(n_scans=3, with_rst_in_entropy=False):
    """Hand-built marker skeleton (not decodable): SOI, SOF2, then n SOS
    segments whose entropy bytes include FF00 stuffing and optional RST."""
    out = bytearray(b"\xff\xd8")  # SOI
    # APP0 segment
    out += b"\xff\xe0" + (16).to_bytes(2, "big") + b"JFIF\x00" + bytes(9)
    # SOF2: len 11, precision 8, 7x5, 1 component
    out += b"\xff\xc2" + (11).to_bytes(2, "big") + b"\x08" + (5).to_bytes(2, "big")
    out += (7).to_bytes(2, "big") + b"\x01" + b"\x01\x11\x00"
    for i in range(n_scans):
        out += b"\xff\xda" + (8).to_bytes(2, "big") + b"\x01\x01\x00\x00\x3f\x00"
        entropy = bytearray(b"\x12\x34\xff\x00\x56")  # stuffed FF
        if with_rst_in_entropy:
            entropy += b"\xff\xd0\x9a\xff\x00\x21"  # RST0 inside scan data
        entropy += bytes([0x40 + i, 0x41, 0x42])
        out += entropy
    out += b"\xff\xd9"  # EOI
    return bytes(out)
