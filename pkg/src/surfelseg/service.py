"""Pose-in/frames-out render service speaking newline-delimited JSON over TCP.

Request::

    {"request_id": "7", "camera": {...}, "channels": ["rgb", "depth", "panoptic"], "top_k": 24}

Response payloads are base64: ``rgb`` is a PNG, ``depth`` a little-endian
float32 raster and ``panoptic`` a little-endian uint32 raster of
``class * 1000 + instance`` (void = 0xFFFFFFFF). Malformed requests get
``{"request_id": ..., "error": "..."}`` and the connection stays open.
"""

from __future__ import annotations

import base64
import json
import logging
import signal
import socket
import socketserver
import threading
import time
from dataclasses import dataclass

from .imageio import depth_bytes, encode_rgb_png, panoptic_bytes
from .raster import RenderConfig, default_threads, render
from .scene import Camera, Scene, ValidationError

log = logging.getLogger(__name__)

SERVICE_CHANNELS = ("rgb", "depth", "panoptic")
POLL_SECONDS = 0.2


class RequestError(ValueError):
    pass


@dataclass(frozen=True)
class RenderRequest:
    request_id: str
    camera: Camera
    channels: tuple[str, ...] = SERVICE_CHANNELS
    top_k: int | None = None

    @classmethod
    def from_dict(cls, d) -> "RenderRequest":
        if not isinstance(d, dict):
            raise RequestError("request must be a JSON object")
        rid = d.get("request_id")
        if rid is None:
            raise RequestError("missing request_id")
        channels = d.get("channels", list(SERVICE_CHANNELS))
        if not isinstance(channels, list) or not channels:
            raise RequestError("no channels")
        bad = [c for c in channels if c not in SERVICE_CHANNELS]
        if bad:
            raise RequestError(f"unknown channels {bad}")
        top_k = d.get("top_k")
        if top_k is not None and (not isinstance(top_k, int) or isinstance(top_k, bool) or top_k < 1):
            raise RequestError("top_k must be a positive integer")
        if "camera" not in d:
            raise RequestError("missing camera")
        try:
            camera = Camera.from_dict(d["camera"])
            camera.check()
        except ValidationError as exc:
            raise RequestError(str(exc)) from exc
        return cls(str(rid), camera, tuple(dict.fromkeys(channels)), top_k)


class RenderService:
    """Holds the immutable scene and the default render configuration."""

    def __init__(self, scene: Scene, mode: str = "accutile", top_k: int | None = None,
                 threads: int | None = None):
        self.scene = scene
        self.mode = mode
        self.top_k = top_k
        self.threads = threads if threads is not None else default_threads()
        RenderConfig(mode=mode, top_k=top_k)  # validate once up front

    def config_for(self, req: RenderRequest) -> RenderConfig:
        top_k = req.top_k if req.top_k is not None else self.top_k
        channels = ("rgb", "depth", "alpha") + (("panoptic",) if "panoptic" in req.channels else ())
        return RenderConfig(mode=self.mode, top_k=top_k, channels=channels)

    def handle(self, request) -> dict:
        """Answer one request (dict or RenderRequest); never raises for bad input."""
        rid = request.get("request_id") if isinstance(request, dict) else getattr(request, "request_id", None)
        try:
            req = request if isinstance(request, RenderRequest) else RenderRequest.from_dict(request)
            return self._render(req)
        except RequestError as exc:
            return {"request_id": rid, "error": str(exc)}

    def _render(self, req: RenderRequest) -> dict:
        start = time.perf_counter()
        bundle = render(self.scene, req.camera, self.config_for(req), threads=self.threads)
        out = {"request_id": req.request_id, "width": req.camera.width, "height": req.camera.height}
        if "rgb" in req.channels:
            out["rgb"] = base64.b64encode(encode_rgb_png(bundle.rgb)).decode("ascii")
        if "depth" in req.channels:
            out["depth"] = base64.b64encode(depth_bytes(bundle.depth)).decode("ascii")
        if "panoptic" in req.channels:
            raw = panoptic_bytes(bundle.panoptic_class, bundle.panoptic_instance)
            out["panoptic"] = base64.b64encode(raw).decode("ascii")
        out["render_ms"] = max((time.perf_counter() - start) * 1000.0, 1e-6)
        s = bundle.stats
        out["stats"] = {"rn_total": s.rn_total, "rn_per_tile": s.rn_per_tile,
                        "feature_mads": s.feature_mads, "wall_time_ms": s.wall_time_ms}
        return out


def handle_render_request(service: RenderService, request) -> dict:
    return service.handle(request)


def handle_line(service: RenderService, line: bytes) -> dict:
    try:
        payload = json.loads(line)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        return {"request_id": None, "error": f"malformed JSON: {exc}"}
    return service.handle(payload)


class _Handler(socketserver.BaseRequestHandler):
    def handle(self):
        server: RenderServer = self.server
        sock: socket.socket = self.request
        sock.settimeout(POLL_SECONDS)
        log.info("connection from %s", self.client_address)
        buf = b""
        while True:
            while b"\n" in buf:
                line, buf = buf.split(b"\n", 1)
                if line.strip():
                    reply = handle_line(server.service, line)
                    sock.sendall(json.dumps(reply).encode() + b"\n")
            if server.stopping.is_set():
                break
            try:
                chunk = sock.recv(65536)
            except socket.timeout:
                continue
            except OSError:
                break
            if not chunk:
                break
            buf += chunk
        log.info("connection from %s closed", self.client_address)


class RenderServer(socketserver.ThreadingTCPServer):
    """Connection-per-thread server; ``close`` waits for in-flight requests."""

    allow_reuse_address = True
    daemon_threads = False
    block_on_close = True

    def __init__(self, service: RenderService, host: str = "127.0.0.1", port: int = 0):
        self.service = service
        self.stopping = threading.Event()
        super().__init__((host, port), _Handler)

    @property
    def port(self) -> int:
        return self.server_address[1]

    def start(self) -> threading.Thread:
        t = threading.Thread(target=self.serve_forever, kwargs={"poll_interval": POLL_SECONDS},
                             daemon=True)
        t.start()
        return t

    def close(self) -> None:
        """Stop accepting, let handlers finish the request they are on, then join them."""
        self.stopping.set()
        self.shutdown()
        self.server_close()


def serve_loop(scene: Scene, port: int, host: str = "127.0.0.1", mode: str = "accutile",
               top_k: int | None = None, threads: int | None = None) -> None:
    """Serve until SIGINT or SIGTERM."""
    server = RenderServer(RenderService(scene, mode, top_k, threads), host, port)
    done = threading.Event()

    def on_signal(signum, frame):
        log.info("signal %d: shutting down", signum)
        done.set()

    old = {s: signal.signal(s, on_signal) for s in (signal.SIGINT, signal.SIGTERM)}
    server.start()
    log.info("listening on %s:%d", host, server.port)
    try:
        done.wait()
    finally:
        server.close()
        for s, h in old.items():
            signal.signal(s, h)


class Client:
    """Minimal blocking client, one request in flight at a time."""

    def __init__(self, host: str, port: int, timeout: float = 60.0):
        self.sock = socket.create_connection((host, port), timeout=timeout)
        self.file = self.sock.makefile("rb")

    def request(self, payload: dict) -> dict:
        self.sock.sendall(json.dumps(payload).encode() + b"\n")
        line = self.file.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return json.loads(line)

    def close(self) -> None:
        self.file.close()
        self.sock.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
