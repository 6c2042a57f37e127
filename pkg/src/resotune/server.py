"""HTTP service serving calibrated partial reads of stored progressive
images, metering bytes saved.

Endpoints:
  GET /image/{id}?resolution=R&crop=C   calibrated truncation (image/jpeg)
  GET /image/{id}/scans?from=A&to=B     raw byte range between scan
                                        boundaries, for extending a prefix
  GET /metrics                          plain-text "name value" lines

Responses carry X-Scans-Read, X-Bytes-Total, X-Bytes-Read headers; an
unknown crop falls back to the table's calibrated crop with a warning
header rather than silent reinterpretation.
"""

import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path
from urllib.parse import parse_qs, urlparse

from .calibrate import QualityThresholdTable, min_scans_for_threshold
from .errors import ResotuneError
from .jpegscan import ScanIndexedImage, cumulative_bytes, index_scans, truncate_at_scan
from .quality import CropSpec

_FORBIDDEN = ("/", "\\", "..", "\0")


class ImageStore:
    """Directory of JPEG files addressed by opaque ids (file stems)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._index: dict[str, ScanIndexedImage] = {}
        self._lock = threading.Lock()
        self._ids = sorted(
            p.stem for p in self.root.iterdir() if p.suffix.lower() in (".jpg", ".jpeg")
        )

    def ids(self) -> list[str]:
        return list(self._ids)

    def valid_id(self, image_id: str) -> bool:
        return bool(image_id) and not any(tok in image_id for tok in _FORBIDDEN)

    def get(self, image_id: str) -> ScanIndexedImage | None:
        if image_id not in self._ids:
            return None
        with self._lock:
            cached = self._index.get(image_id)
            if cached is not None:
                return cached
        for suffix in (".jpg", ".jpeg"):
            path = self.root / f"{image_id}{suffix}"
            if path.exists():
                data = path.read_bytes()
                img = index_scans(data)
                if img.total_bytes != path.stat().st_size or img.scan_offsets[-1] + 2 > img.total_bytes:
                    raise ResotuneError(f"stored file {path} fails offset validation")
                with self._lock:
                    self._index[image_id] = img
                return img
        return None


class Metrics:
    def __init__(self):
        self._lock = threading.Lock()
        self.requests = 0
        self.bytes_served = 0
        self.bytes_saved = 0
        self.by_resolution: dict[int, int] = {}

    def record_image(self, resolution: int, bytes_total: int, bytes_read: int) -> None:
        with self._lock:
            self.requests += 1
            self.bytes_served += bytes_read
            self.bytes_saved += bytes_total - bytes_read
            self.by_resolution[resolution] = self.by_resolution.get(resolution, 0) + 1

    def record_other(self) -> None:
        with self._lock:
            self.requests += 1

    def render(self) -> str:
        with self._lock:
            lines = [
                f"requests_total {self.requests}",
                f"bytes_served_total {self.bytes_served}",
                f"bytes_saved_total {self.bytes_saved}",
            ]
            for res in sorted(self.by_resolution):
                lines.append(f"requests_resolution_{res} {self.by_resolution[res]}")
        return "\n".join(lines) + "\n"


class ScanServer:
    """Holds the immutable store/table plus mutable metrics; the HTTP
    handler delegates here so the logic stays unit-testable."""

    def __init__(self, store: ImageStore, table: QualityThresholdTable):
        self.store = store
        self.table = table
        self.metrics = Metrics()
        self._scan_cache: dict[tuple[str, int], int] = {}
        self._cache_lock = threading.Lock()

    def _min_scans(self, image_id: str, img: ScanIndexedImage, resolution: int) -> int:
        key = (image_id, resolution)
        with self._cache_lock:
            if key in self._scan_cache:
                return self._scan_cache[key]
        k = min_scans_for_threshold(
            img, resolution, CropSpec(self.table.crop_area), self.table.threshold(resolution)
        )
        with self._cache_lock:
            self._scan_cache[key] = k
        return k

    def serve_image(self, image_id: str, resolution: int | None,
                    crop: float | None) -> tuple[int, dict, bytes]:
        if not self.store.valid_id(image_id):
            self.metrics.record_other()
            return 400, {}, b"invalid image id\n"
        img = self.store.get(image_id)
        if img is None:
            self.metrics.record_other()
            return 404, {}, b"unknown image id\n"
        if resolution is None or resolution not in self.table.entries:
            self.metrics.record_other()
            return 400, {}, b"unknown resolution\n"
        if not img.progressive:
            self.metrics.record_other()
            return 422, {}, b"stored image is not progressive\n"
        headers = {}
        if crop is not None and crop != self.table.crop_area:
            headers["X-Crop-Fallback"] = f"{self.table.crop_area:.6g}"
        k = self._min_scans(image_id, img, resolution)
        body = truncate_at_scan(img, k)
        bytes_read = cumulative_bytes(img, k)
        headers.update(
            {
                "Content-Type": "image/jpeg",
                "X-Scans-Read": str(k),
                "X-Bytes-Total": str(img.total_bytes),
                "X-Bytes-Read": str(bytes_read),
            }
        )
        self.metrics.record_image(resolution, img.total_bytes, bytes_read)
        return 200, headers, body

    def serve_more(self, image_id: str, from_scan: int, to_scan: int) -> tuple[int, dict, bytes]:
        if not self.store.valid_id(image_id):
            self.metrics.record_other()
            return 400, {}, b"invalid image id\n"
        img = self.store.get(image_id)
        if img is None:
            self.metrics.record_other()
            return 404, {}, b"unknown image id\n"
        if not (1 <= from_scan < to_scan <= img.n_scans):
            self.metrics.record_other()
            return 416, {}, b"invalid scan range\n"
        start = cumulative_bytes(img, from_scan)
        end = cumulative_bytes(img, to_scan)
        body = img.data[start:end]
        self.metrics.record_other()
        return 200, {"Content-Type": "application/octet-stream"}, body


def make_handler(server: ScanServer):
    class Handler(BaseHTTPRequestHandler):
        def log_message(self, fmt, *args):  # quiet by default
            pass

        def _send(self, status: int, headers: dict, body: bytes):
            self.send_response(status)
            for k, v in headers.items():
                self.send_header(k, v)
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)

        def do_GET(self):
            url = urlparse(self.path)
            parts = [p for p in url.path.split("/") if p]
            qs = parse_qs(url.query)
            if url.path == "/metrics":
                body = server.metrics.render().encode()
                self._send(200, {"Content-Type": "text/plain"}, body)
                return
            if len(parts) == 2 and parts[0] == "image":
                res = qs.get("resolution", [None])[0]
                crop = qs.get("crop", [None])[0]
                try:
                    resolution = int(res) if res is not None else None
                    crop_val = float(crop) if crop is not None else None
                except ValueError:
                    self._send(400, {}, b"malformed query\n")
                    return
                status, headers, body = server.serve_image(parts[1], resolution, crop_val)
                self._send(status, headers, body)
                return
            if len(parts) == 3 and parts[0] == "image" and parts[2] == "scans":
                try:
                    from_scan = int(qs.get("from", ["0"])[0])
                    to_scan = int(qs.get("to", ["0"])[0])
                except ValueError:
                    self._send(400, {}, b"malformed query\n")
                    return
                status, headers, body = server.serve_more(parts[1], from_scan, to_scan)
                self._send(status, headers, body)
                return
            self._send(404, {}, b"not found\n")

    return Handler


def serve(root: str | Path, thresholds: str | Path, host: str = "127.0.0.1",
          port: int = 8080) -> ThreadingHTTPServer:
    """Build the HTTP server (caller runs serve_forever)."""
    store = ImageStore(root)
    table = QualityThresholdTable.load(thresholds)
    scan_server = ScanServer(store, table)
    httpd = ThreadingHTTPServer((host, port), make_handler(scan_server))
    httpd.scan_server = scan_server
    return httpd
