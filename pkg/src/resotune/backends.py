"""Model backends and the external backend wire protocol.

A backend is either a scale model (scores candidate resolutions) or a
backbone (classifies at one resolution). External backends speak
newline-delimited JSON over a subprocess's standard I/O or mirror the
same bodies over HTTP POST /infer:

  handshake  {"hello": {"kind": "backbone", "resolutions": [112, ...], "concurrency": 1}}
  request    {"id": N, "resolution": R, "width": W, "height": H, "pixels_b64": "..."}
  response   {"id": N, "label": K}           (backbone)
             {"id": N, "scores": {"112": 0.2, ...}}  (scale)
  error      {"id": N, "error": "..."}       (process must survive)

Pixels are 8-bit RGB, row-major. One request is in flight at a time
unless the handshake advertises concurrency > 1.
"""

import base64
import hashlib
import json
import shlex
import subprocess
from dataclasses import dataclass
from threading import Lock

import numpy as np

from .errors import BackendFailure


@dataclass
class InferenceRequest:
    image_id: str
    resolution: int
    pixels: np.ndarray | None  # (h, w, 3) uint8, None when the backend skips pixels
    crop_area: float = 1.0


class ModelBackend:
    """Base class; in-process backends may opt out of pixel delivery."""

    model_id: str = "backend"
    kind: str = "backbone"  # or "scale"
    supported_resolutions: tuple[int, ...] = ()
    needs_pixels: bool = True

    def classify(self, req: InferenceRequest) -> int:
        raise NotImplementedError

    def score(self, req: InferenceRequest) -> dict[int, float]:
        raise NotImplementedError

    def close(self) -> None:
        pass


def encode_pixels(pixels: np.ndarray) -> str:
    return base64.b64encode(np.ascontiguousarray(pixels, dtype=np.uint8).tobytes()).decode("ascii")


def decode_pixels(b64: str, width: int, height: int) -> np.ndarray:
    raw = base64.b64decode(b64)
    expect = width * height * 3
    if len(raw) != expect:
        raise BackendFailure(f"pixel payload {len(raw)} bytes, expected {expect}")
    return np.frombuffer(raw, dtype=np.uint8).reshape(height, width, 3)


def _request_body(req: InferenceRequest, req_id: int) -> dict:
    if req.pixels is None:
        raise BackendFailure("wire backends require pixels")
    h, w = req.pixels.shape[:2]
    return {
        "id": req_id,
        "resolution": req.resolution,
        "width": w,
        "height": h,
        "pixels_b64": encode_pixels(req.pixels),
    }


def _parse_scores(body: dict) -> dict[int, float]:
    try:
        return {int(k): float(v) for k, v in body["scores"].items()}
    except (KeyError, TypeError, ValueError) as exc:
        raise BackendFailure(f"malformed scale response: {body}") from exc


class ProcessBackend(ModelBackend):
    """Subprocess speaking the ndjson protocol over standard I/O."""

    def __init__(self, command: str | list[str]):
        argv = shlex.split(command) if isinstance(command, str) else command
        try:
            self._proc = subprocess.Popen(
                argv, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True, bufsize=1
            )
        except OSError as exc:
            raise BackendFailure(f"cannot start backend {argv!r}: {exc}") from exc
        self._lock = Lock()
        self._next_id = 0
        hello = self._read_line()
        if "hello" not in hello:
            raise BackendFailure(f"bad handshake: {hello}")
        h = hello["hello"]
        self.kind = h.get("kind", "backbone")
        self.supported_resolutions = tuple(int(r) for r in h.get("resolutions", ()))
        self.concurrency = int(h.get("concurrency", 1))
        self.model_id = h.get("model_id", "process-backend")

    def _read_line(self) -> dict:
        line = self._proc.stdout.readline()
        if not line:
            raise BackendFailure("backend closed its output stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise BackendFailure(f"backend emitted non-JSON line: {line!r}") from exc

    def _roundtrip(self, req: InferenceRequest) -> dict:
        with self._lock:
            self._next_id += 1
            rid = self._next_id
            body = _request_body(req, rid)
            self._proc.stdin.write(json.dumps(body) + "\n")
            self._proc.stdin.flush()
            resp = self._read_line()
        if resp.get("id") != rid:
            raise BackendFailure(f"response id {resp.get('id')} != request id {rid}")
        if "error" in resp:
            raise BackendFailure(f"backend error: {resp['error']}")
        return resp

    def classify(self, req: InferenceRequest) -> int:
        resp = self._roundtrip(req)
        if "label" not in resp:
            raise BackendFailure(f"backbone response missing label: {resp}")
        return int(resp["label"])

    def score(self, req: InferenceRequest) -> dict[int, float]:
        return _parse_scores(self._roundtrip(req))

    def close(self) -> None:
        if self._proc.poll() is None:
            self._proc.stdin.close()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()


class HttpBackend(ModelBackend):
    """HTTP transport: GET /handshake once, then POST /infer per request."""

    def __init__(self, base_url: str):
        import urllib.request

        self._base = base_url.rstrip("/")
        self._urllib = urllib.request
        try:
            h = self._get_json(f"{self._base}/handshake")["hello"]
        except Exception as exc:
            raise BackendFailure(f"handshake with {base_url} failed: {exc}") from exc
        self.kind = h.get("kind", "backbone")
        self.supported_resolutions = tuple(int(r) for r in h.get("resolutions", ()))
        self.concurrency = int(h.get("concurrency", 1))
        self.model_id = h.get("model_id", "http-backend")
        self._lock = Lock()
        self._id_lock = Lock()
        self._next_id = 0

    def _get_json(self, url: str) -> dict:
        with self._urllib.urlopen(url, timeout=30) as resp:
            return json.loads(resp.read())

    def _roundtrip(self, req: InferenceRequest) -> dict:
        import contextlib

        with self._id_lock:
            self._next_id += 1
            rid = self._next_id
        body = json.dumps(_request_body(req, rid)).encode()
        http_req = self._urllib.Request(
            f"{self._base}/infer", data=body, headers={"Content-Type": "application/json"}
        )
        # one in-flight request unless the handshake advertised more
        guard = self._lock if self.concurrency <= 1 else contextlib.nullcontext()
        try:
            with guard, self._urllib.urlopen(http_req, timeout=60) as resp:
                out = json.loads(resp.read())
        except BackendFailure:
            raise
        except Exception as exc:
            raise BackendFailure(f"POST /infer failed: {exc}") from exc
        if out.get("id") != rid:
            raise BackendFailure(f"response id {out.get('id')} != request id {rid}")
        if "error" in out:
            raise BackendFailure(f"backend error: {out['error']}")
        return out

    def classify(self, req: InferenceRequest) -> int:
        resp = self._roundtrip(req)
        if "label" not in resp:
            raise BackendFailure(f"backbone response missing label: {resp}")
        return int(resp["label"])

    def score(self, req: InferenceRequest) -> dict[int, float]:
        return _parse_scores(self._roundtrip(req))


def serve_stdio(backend: ModelBackend, stdin=None, stdout=None) -> None:
    """Expose an in-process backend over the stdio wire protocol.

    Used to serve the synthetic backends to protocol tests and external
    pipelines; loops until EOF. Malformed or unsupported requests get a
    structured error response and the loop survives.
    """
    import sys

    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    hello = {
        "hello": {
            "kind": backend.kind,
            "resolutions": list(backend.supported_resolutions),
            "concurrency": 1,
            "model_id": backend.model_id,
        }
    }
    stdout.write(json.dumps(hello) + "\n")
    stdout.flush()
    for line in stdin:
        line = line.strip()
        if not line:
            continue
        rid = None
        try:
            body = json.loads(line)
            rid = body.get("id")
            res = int(body["resolution"])
            if backend.supported_resolutions and res not in backend.supported_resolutions:
                raise ValueError(f"resolution {res} not advertised")
            pixels = decode_pixels(body["pixels_b64"], int(body["width"]), int(body["height"]))
            # identity for metadata-driven backends: explicit id if the
            # client sent one, else a digest of the payload so identical
            # requests stay deterministic
            image_id = body.get("image_id") or hashlib.sha256(
                body["pixels_b64"].encode()
            ).hexdigest()[:16]
            req = InferenceRequest(image_id=str(image_id), resolution=res, pixels=pixels)
            if backend.kind == "scale":
                scores = backend.score(req)
                resp = {"id": rid, "scores": {str(k): float(v) for k, v in sorted(scores.items())}}
            else:
                resp = {"id": rid, "label": int(backend.classify(req))}
        except Exception as exc:  # protocol requires the process to survive
            resp = {"id": rid, "error": str(exc)}
        stdout.write(json.dumps(resp) + "\n")
        stdout.flush()


def _serve_synthetic_main(argv=None) -> int:
    """`python -m resotune.backends --kind backbone --dataset DIR`: serve the
    synthetic backend for that dataset over the stdio wire protocol."""
    import argparse

    from .dataset import load_dataset
    from .synthetic import SyntheticBackbone, SyntheticConfig, SyntheticScale

    ap = argparse.ArgumentParser()
    ap.add_argument("--kind", choices=["scale", "backbone"], required=True)
    ap.add_argument("--dataset", required=True)
    ap.add_argument("--resolutions", default="112,168,224,280,336,392,448")
    ap.add_argument("--noise", type=float, default=0.0)
    args = ap.parse_args(argv)
    ds = load_dataset(args.dataset)
    import json as _json
    from pathlib import Path as _Path

    manifest = _json.loads((_Path(args.dataset) / "manifest.json").read_text())
    cfg = SyntheticConfig(**manifest.get("config", {}))
    resolutions = tuple(int(r) for r in args.resolutions.split(","))
    if args.kind == "scale":
        backend = SyntheticScale(ds, cfg, resolutions, noise_sigma=args.noise)
    else:
        backend = SyntheticBackbone(ds, cfg, resolutions)
    serve_stdio(backend)
    return 0


@dataclass
class ConformanceResult:
    passed: bool
    checks: list[tuple[str, bool, str]]

    def summary(self) -> str:
        lines = [f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}" for name, ok, detail in self.checks]
        return "\n".join(lines)


def run_conformance(backend: ModelBackend, rng_seed: int = 0) -> ConformanceResult:
    """Protocol conformance checks every backend (in-process, subprocess,
    HTTP, or a model-forge server) must pass."""
    rng = np.random.default_rng(rng_seed)
    checks: list[tuple[str, bool, str]] = []

    def check(name: str, ok: bool, detail: str = ""):
        checks.append((name, bool(ok), detail))

    check("handshake-kind", backend.kind in ("scale", "backbone"), f"kind={backend.kind}")
    resolutions = backend.supported_resolutions
    check("handshake-resolutions", len(resolutions) > 0, f"{list(resolutions)}")

    for res in resolutions[:3]:
        pixels = rng.integers(0, 256, (res, res, 3), dtype=np.uint8)
        req = InferenceRequest(image_id=f"conf-{res}", resolution=res, pixels=pixels)
        try:
            if backend.kind == "scale":
                scores = backend.score(req)
                ok = set(scores) == set(resolutions) and all(0.0 <= v <= 1.0 for v in scores.values())
                check(f"scores@{res}", ok, f"{scores}")
            else:
                label = backend.classify(req)
                check(f"label@{res}", isinstance(label, int) and label >= 0, f"label={label}")
        except BackendFailure as exc:
            check(f"infer@{res}", False, str(exc))

    # Responses must be deterministic for identical requests.
    res = resolutions[0]
    pixels = rng.integers(0, 256, (res, res, 3), dtype=np.uint8)
    req = InferenceRequest(image_id="conf-repeat", resolution=res, pixels=pixels)
    try:
        if backend.kind == "scale":
            same = backend.score(req) == backend.score(req)
        else:
            same = backend.classify(req) == backend.classify(req)
        check("deterministic", same)
    except BackendFailure as exc:
        check("deterministic", False, str(exc))

    # Unadvertised resolution must produce a structured error, and the
    # backend must keep serving afterwards.
    bogus = max(resolutions) + 1
    pixels = rng.integers(0, 256, (bogus, bogus, 3), dtype=np.uint8)
    req = InferenceRequest(image_id="conf-bogus", resolution=bogus, pixels=pixels)
    try:
        if backend.kind == "scale":
            backend.score(req)
        else:
            backend.classify(req)
        check("unadvertised-resolution-error", False, "request unexpectedly succeeded")
    except BackendFailure as exc:
        check("unadvertised-resolution-error", True, str(exc)[:80])
    pixels = rng.integers(0, 256, (res, res, 3), dtype=np.uint8)
    req = InferenceRequest(image_id="conf-after-error", resolution=res, pixels=pixels)
    try:
        if backend.kind == "scale":
            backend.score(req)
        else:
            backend.classify(req)
        check("survives-error", True)
    except BackendFailure as exc:
        check("survives-error", False, str(exc))

    return ConformanceResult(passed=all(ok for _, ok, _ in checks), checks=checks)


if __name__ == "__main__":
    import sys

    sys.exit(_serve_synthetic_main())
