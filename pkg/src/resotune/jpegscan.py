"""Progressive JPEG scan indexing, truncation, and decoding.

A progressive JPEG delivers frequency coefficients across multiple scans;
any prefix ending on a scan boundary decodes to a coarser version of the
image. This module parses the marker structure of a stream, records the
byte offset of every SOS marker, and produces decodable truncations.

Marker scanning respects entropy-coded data: a 0xFF followed by 0x00
(byte stuffing) or by an RST marker (0xD0-0xD7) inside scan data is not a
segment boundary.
"""

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import DecodeFailure, NotAJpeg, TruncatedHeader, ZeroScans

SOI = 0xD8
EOI = 0xD9
SOS = 0xDA
TEM = 0x01
DNL = 0xDC
# Frame markers (SOF0..SOF15 minus DHT/JPG/DAC which share the range)
_SOF_MARKERS = frozenset(range(0xC0, 0xD0)) - {0xC4, 0xC8, 0xCC}
_STANDALONE = frozenset(range(0xD0, 0xD8)) | {SOI, EOI, TEM}
_PROGRESSIVE_SOF = {0xC2, 0xCA, 0xC6, 0xCE}


@dataclass(frozen=True)
class ScanIndexedImage:
    """A JPEG byte stream plus the offsets of its scans.

    Offsets point at the 0xFF of each SOS marker; header_end equals the
    first of them. total_bytes counts everything from SOI, header
    included.
    """

    data: bytes
    scan_offsets: tuple[int, ...]
    header_end: int
    total_bytes: int
    width: int
    height: int
    progressive: bool

    @property
    def n_scans(self) -> int:
        return len(self.scan_offsets)


@dataclass(frozen=True)
class PixelRaster:
    """Decoded 8-bit image, row-major, 1 or 3 channels."""

    width: int
    height: int
    channels: int
    samples: np.ndarray  # uint8, shape (height, width, channels)

    def __post_init__(self):
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.samples.shape != (self.height, self.width, self.channels):
            raise ValueError(
                f"samples shape {self.samples.shape} != "
                f"({self.height}, {self.width}, {self.channels})"
            )
        if self.samples.dtype != np.uint8:
            raise ValueError("samples must be uint8")

    @classmethod
    def from_array(cls, arr: np.ndarray) -> "PixelRaster":
        if arr.ndim == 2:
            arr = arr[:, :, None]
        h, w, c = arr.shape
        return cls(width=w, height=h, channels=c, samples=np.ascontiguousarray(arr, dtype=np.uint8))


def _segment_length(data: bytes, pos: int) -> int:
    if pos + 2 > len(data):
        raise TruncatedHeader(f"segment length truncated at byte {pos}")
    return (data[pos] << 8) | data[pos + 1]


def _skip_entropy(data: bytes, pos: int) -> int:
    """Advance past entropy-coded data to the next true marker.

    0xFF 0x00 is a stuffed data byte and 0xFF 0xD0..0xD7 are restart
    markers; both belong to the scan body. 0xFF 0xFF is fill.
    """
    n = len(data)
    while pos < n - 1:
        if data[pos] != 0xFF:
            pos += 1
            continue
        nxt = data[pos + 1]
        if nxt == 0x00 or 0xD0 <= nxt <= 0xD7:
            pos += 2
        elif nxt == 0xFF:
            pos += 1
        else:
            return pos
    return n


def index_scans(data: bytes) -> ScanIndexedImage:
    """Parse a JPEG stream into scan-indexed form.

    Walks the marker structure, recording the byte offset of every SOS
    marker and the frame geometry. Baseline streams index fine (one
    scan, progressive=False); callers that require progressiveness
    enforce the flag themselves.
    """
    if len(data) < 2 or data[0] != 0xFF or data[1] != SOI:
        raise NotAJpeg("stream does not start with SOI (FF D8)")

    scan_offsets: list[int] = []
    width = height = 0
    progressive = False
    saw_frame = False
    pos = 2
    n = len(data)
    while pos < n - 1:
        if data[pos] != 0xFF:
            # Garbage between segments; a conforming stream has none, but
            # fill bytes and trailing data are tolerated.
            pos += 1
            continue
        marker = data[pos + 1]
        if marker == 0xFF:
            pos += 1
            continue
        if marker == EOI:
            break
        if marker in _STANDALONE:
            pos += 2
            continue
        if marker == SOS:
            scan_offsets.append(pos)
            seg = _segment_length(data, pos + 2)
            pos = _skip_entropy(data, pos + 2 + seg)
            continue
        seg = _segment_length(data, pos + 2)
        if marker in _SOF_MARKERS and not saw_frame:
            saw_frame = True
            if pos + 9 > n:
                raise TruncatedHeader(f"SOF segment truncated at byte {pos}")
            height = (data[pos + 5] << 8) | data[pos + 6]
            width = (data[pos + 7] << 8) | data[pos + 8]
            progressive = marker in _PROGRESSIVE_SOF
        pos += 2 + seg

    if not scan_offsets:
        raise TruncatedHeader("stream ends before the first SOS marker")

    return ScanIndexedImage(
        data=data,
        scan_offsets=tuple(scan_offsets),
        header_end=scan_offsets[0],
        total_bytes=n,
        width=width,
        height=height,
        progressive=progressive,
    )


def truncate_at_scan(img: ScanIndexedImage, k: int) -> bytes:
    """Return the stream truncated after its first k scans.

    k at or beyond the scan count returns the original bytes unchanged;
    otherwise the prefix up to scan k's SOS marker gets an EOI appended
    so any conforming decoder accepts it.
    """
    if k <= 0:
        raise ZeroScans("at least one scan must be read")
    if k >= img.n_scans:
        return img.data
    return img.data[: img.scan_offsets[k]] + b"\xff\xd9"


def cumulative_bytes(img: ScanIndexedImage, k: int) -> int:
    """Bytes read from storage to obtain the first k scans (header included).

    Excludes the 2 synthesized EOI bytes of a truncation; k beyond the
    scan count clamps to the full stream, mirroring truncate_at_scan.
    """
    if k <= 0:
        raise ZeroScans("at least one scan must be read")
    if k >= img.n_scans:
        return img.total_bytes
    return img.scan_offsets[k]


def _check_first_scan_nonempty(data: bytes) -> None:
    """Reject streams whose first scan carries no entropy bytes.

    libjpeg decodes such streams leniently (all coefficients zero); the
    artifact treats them as malformed.
    """
    try:
        img = index_scans(data)
    except (NotAJpeg, TruncatedHeader) as exc:
        raise DecodeFailure(str(exc), offset=len(data)) from exc
    first = img.scan_offsets[0]
    seg = _segment_length(data, first + 2)
    body_start = first + 2 + seg
    body_end = _skip_entropy(data, body_start)
    if body_end <= body_start:
        raise DecodeFailure("first scan has no entropy-coded data", offset=body_start)


def decode(data: bytes) -> PixelRaster:
    """Decode a (possibly scan-truncated) JPEG stream to a pixel raster.

    Backed by a conforming progressive decoder; coefficients not yet
    delivered by a truncation are zero, per standard progressive
    semantics. Grayscale streams yield 1 channel, everything else 3.
    """
    _check_first_scan_nonempty(data)
    try:
        im = Image.open(io.BytesIO(data))
        im.load()
    except Exception as exc:
        raise DecodeFailure(f"decoder rejected stream: {exc}", offset=len(data)) from exc
    if im.mode == "L":
        arr = np.asarray(im, dtype=np.uint8)[:, :, None]
    else:
        if im.mode != "RGB":
            im = im.convert("RGB")
        arr = np.asarray(im, dtype=np.uint8)
    h, w, c = arr.shape
    return PixelRaster(width=w, height=h, channels=c, samples=arr)
