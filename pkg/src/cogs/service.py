"""HTTP/WebSocket render service for a trained model checkpoint.

Stateless protocol: every request carries a full camera (explicit matrix or
orbit parameters) plus either a normalized time (dynamic render) or a vector
of control values (controlled render). Rendering is serialized through a
single executor, so identical requests return byte-identical PNGs and the
checkpoint is never mutated.

WebSocket framing: clients send RenderRequest JSON with an extra "id".
Successful replies are binary: a 4-byte little-endian header length, a JSON
header {"id": ..., "ok": true}, then the PNG bytes. Errors come back as
text frames {"id": ..., "ok": false, "error": ...}.
"""
from __future__ import annotations

import json
import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np
from fastapi import FastAPI, WebSocket, WebSocketDisconnect
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles

from . import raster, sceneio
from .control import SceneModel, apply_controls
from .errors import CogsError, InputError
from .gaussians import Camera
from .training import deform

MAX_DIMENSION = 1024


class RequestError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status
        self.message = message


@dataclass
class RenderRequest:
    """Validated render request; exactly one of time/controls is set."""

    camera: Camera
    time: Optional[float]
    controls: Optional[np.ndarray]


def parse_camera(body: dict) -> Camera:
    width = int(body.get("width", 256))
    height = int(body.get("height", 256))
    if not (0 < width <= MAX_DIMENSION and 0 < height <= MAX_DIMENSION):
        raise RequestError(400, f"width/height must be in (0, {MAX_DIMENSION}]")
    if "camera" in body:
        cam = body["camera"]
        try:
            pose = np.asarray(cam["cam_to_world"], dtype=np.float64).reshape(4, 4)
            camera = Camera(
                width=width, height=height,
                fx=float(cam["fx"]), fy=float(cam["fy"]),
                cx=float(cam["cx"]), cy=float(cam["cy"]),
                cam_to_world=pose,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise RequestError(400, f"bad camera: {exc}") from exc
        try:
            camera.validate()
        except CogsError as exc:
            raise RequestError(400, str(exc)) from exc
        return camera
    orbit = body.get("orbit", {})
    try:
        return Camera.orbit(
            azimuth=float(orbit.get("azimuth", 0.0)),
            elevation=float(orbit.get("elevation", 0.2)),
            radius=float(orbit.get("radius", 4.0)),
            target=orbit.get("target", (0.0, 0.0, 0.0)),
            width=width, height=height,
            fov_x=float(orbit.get("fov_x", 0.69)),
        )
    except (TypeError, ValueError) as exc:
        raise RequestError(400, f"bad orbit parameters: {exc}") from exc


def parse_render_request(body, model: SceneModel) -> RenderRequest:
    if not isinstance(body, dict):
        raise RequestError(400, "request body must be a JSON object")
    has_time = body.get("time") is not None
    has_controls = body.get("controls") is not None
    if has_time == has_controls:
        raise RequestError(400, "exactly one of 'time' or 'controls' must be set")
    camera = parse_camera(body)
    if has_time:
        t = float(body["time"])
        if not (0.0 <= t <= 1.0):
            raise RequestError(400, "time must lie in [0, 1]")
        return RenderRequest(camera=camera, time=t, controls=None)
    if model.rig is None or not model.rig.trained:
        raise RequestError(409, f"model stage is '{model.stage}': controls unavailable")
    controls = np.asarray(body["controls"], dtype=np.float64).reshape(-1)
    if controls.shape[0] != len(model.rig.channels):
        raise RequestError(
            400, f"expected {len(model.rig.channels)} control values, got {controls.shape[0]}"
        )
    if np.any(controls < 0.0) or np.any(controls > 1.0):
        raise RequestError(400, "control values must lie in [0, 1]")
    return RenderRequest(camera=camera, time=None, controls=controls)


def model_info(model: SceneModel) -> dict:
    return {
        "gaussian_count": model.cloud.count,
        "stage": model.stage,
        "attribute_names": model.rig.attribute_names if model.rig else [],
        "attribute_count": len(model.rig.channels) if model.rig else 0,
        "time_range": [0.0, 1.0],
    }


def render_request_png(model: SceneModel, request: RenderRequest,
                       settings: raster.RasterSettings = raster.DEFAULT_SETTINGS) -> bytes:
    if request.time is not None:
        cloud = deform(model.cloud, model.model, request.time)
    else:
        try:
            cloud = apply_controls(model.cloud, model.rig, request.controls)
        except InputError as exc:
            raise RequestError(400, str(exc)) from exc
    out = raster.render(cloud, request.camera, settings=settings)
    return sceneio.png_bytes(np.clip(out.image, 0.0, 1.0))


def create_app(model: SceneModel, ui_dir: Optional[str] = None) -> FastAPI:
    app = FastAPI(title="cogs render service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )
    executor = ThreadPoolExecutor(max_workers=1)  # FIFO render queue

    def render_sync(body) -> bytes:
        request = parse_render_request(body, model)
        return executor.submit(render_request_png, model, request).result()

    @app.get("/api/info")
    def info():
        return model_info(model)

    @app.post("/api/render")
    async def render_endpoint(body: dict):
        try:
            png = render_sync(body)
        except RequestError as exc:
            return JSONResponse(status_code=exc.status, content={"error": exc.message})
        return Response(content=png, media_type="image/png")

    @app.websocket("/api/stream")
    async def stream(ws: WebSocket):
        await ws.accept()
        try:
            while True:
                text = await ws.receive_text()
                try:
                    body = json.loads(text)
                except json.JSONDecodeError:
                    await ws.send_text(json.dumps({"id": None, "ok": False,
                                                   "error": "malformed JSON"}))
                    continue
                req_id = body.get("id") if isinstance(body, dict) else None
                try:
                    png = render_sync(body)
                except RequestError as exc:
                    await ws.send_text(json.dumps({"id": req_id, "ok": False,
                                                   "error": exc.message}))
                    continue
                header = json.dumps({"id": req_id, "ok": True}).encode("utf-8")
                await ws.send_bytes(struct.pack("<I", len(header)) + header + png)
        except WebSocketDisconnect:
            pass

    if ui_dir:
        app.mount("/studio", StaticFiles(directory=ui_dir, html=True), name="studio")

    return app


def decode_stream_frame(data: bytes):
    """Split a binary WS reply into (header dict, png bytes)."""
    (hlen,) = struct.unpack("<I", data[:4])
    header = json.loads(data[4:4 + hlen].decode("utf-8"))
    return header, data[4 + hlen:]


def serve(checkpoint_path: str, host: str = "127.0.0.1", port: int = 8000,
          ui_dir: Optional[str] = None) -> None:
    """Load a checkpoint and serve it until interrupted."""
    import os

    import uvicorn

    model = SceneModel.from_checkpoint(sceneio.load_checkpoint(checkpoint_path))
    app = create_app(model, ui_dir=ui_dir)
    level = os.environ.get("COGS_LOG", "info").lower()
    uvicorn.run(app, host=host, port=port, log_level=level)
