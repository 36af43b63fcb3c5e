"""HTTP/WebSocket rendering service around a trained checkpoint."""

from __future__ import annotations

import asyncio
import io
import json
import os
import struct
import time
from typing import Optional

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.responses import FileResponse, Response
from PIL import Image

from .renderer import STAGES, PinholeCamera, RenderConfig, render_image
from .scene import Scene
from .scene_io import load_checkpoint

MAX_PIXELS = 1920 * 1080


def _parse_camera(payload: dict) -> PinholeCamera:
    required = {"c2w": (4, 4), "fx": None, "fy": None, "cx": None, "cy": None,
                "width": None, "height": None}
    for name in required:
        if name not in payload:
            raise HTTPException(status_code=400, detail=f"missing camera field: {name}")
    extra = set(payload) - set(required) - {"depth"}
    if extra:
        raise HTTPException(status_code=400,
                            detail=f"unknown camera field: {sorted(extra)[0]}")
    try:
        c2w = np.asarray(payload["c2w"], dtype=np.float64)
        if c2w.shape != (4, 4):
            raise ValueError(f"c2w must be 4x4, got {c2w.shape}")
        width = int(payload["width"])
        height = int(payload["height"])
        if width < 1 or height < 1:
            raise ValueError("width and height must be positive")
        camera = PinholeCamera(rotation=c2w[:3, :3], translation=c2w[:3, 3],
                               fx=float(payload["fx"]), fy=float(payload["fy"]),
                               cx=float(payload["cx"]), cy=float(payload["cy"]),
                               width=width, height=height)
    except HTTPException:
        raise
    except Exception as exc:
        raise HTTPException(status_code=400, detail=str(exc))
    if width * height > MAX_PIXELS:
        raise HTTPException(status_code=413,
                            detail=f"image exceeds {MAX_PIXELS} pixels")
    return camera


def _encode_png(image: np.ndarray) -> bytes:
    buf = io.BytesIO()
    arr = (np.clip(image, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


class RenderService:
    """Shared state: the scene, render settings and cumulative statistics."""

    def __init__(self, scene: Scene, bundle_dir: Optional[str] = None):
        self.scene = scene
        self.bundle_dir = bundle_dir
        self.config = RenderConfig(background=scene.background,
                                   use_baked=scene.alpha_textures is not None)
        self.stats = {"requests": 0, "rays": 0, "evaluations": 0,
                      "render_seconds": 0.0, "stream_frames": 0,
                      "stream_dropped": 0, "last_frame": None}

    def render(self, camera: PinholeCamera):
        t0 = time.perf_counter()
        image, depth, stats = render_image(camera, self.scene, self.config)
        wall = time.perf_counter() - t0
        self.stats["requests"] += 1
        self.stats["rays"] += int(stats["rays"])
        self.stats["evaluations"] += int(stats["evaluations"])
        self.stats["render_seconds"] += wall
        self.stats["last_frame"] = {
            "total_seconds": wall,
            "stages": {stage: stats[stage] for stage in STAGES},
            "rays": int(stats["rays"]),
            "evaluations": int(stats["evaluations"]),
        }
        return image, depth, stats


def create_app(checkpoint_path: Optional[str] = None, scene: Optional[Scene] = None,
               bundle_dir: Optional[str] = None,
               static_dir: Optional[str] = None) -> FastAPI:
    if scene is None:
        if checkpoint_path is None:
            raise ValueError("either a checkpoint path or a scene is required")
        scene = load_checkpoint(checkpoint_path).to_scene()
    service = RenderService(scene, bundle_dir)
    app = FastAPI(title="planemix")
    app.state.service = service
    if static_dir is not None:
        from starlette.staticfiles import StaticFiles
        app.mount("/app", StaticFiles(directory=static_dir, html=True),
                  name="viewer")

    @app.get("/scene")
    def get_scene():
        rects = service.scene.rectangles
        return {
            "num_planes": len(rects),
            "background": service.scene.background.tolist(),
            "near": service.scene.t_near,
            "far": service.scene.t_far,
            "baked": service.scene.alpha_textures is not None,
            "bundle": service.bundle_dir is not None,
            "planes": [{
                "center": r.center.tolist(),
                "normal": r.normal.tolist(),
                "up": r.up.tolist(),
                "width": r.width,
                "height": r.height,
                "corners": r.corners().tolist(),
            } for r in rects],
        }

    @app.get("/stats")
    def get_stats():
        return service.stats

    @app.post("/render")
    def post_render(payload: dict):
        camera = _parse_camera(payload)
        image, depth, _ = service.render(camera)
        if payload.get("depth"):
            # Raw frame: little-endian header (width, height) then RGB float32
            # rows and depth float32 rows.
            header = struct.pack("<II", camera.width, camera.height)
            body = image.astype("<f4").tobytes() + depth.astype("<f4").tobytes()
            return Response(content=header + body,
                            media_type="application/octet-stream")
        return Response(content=_encode_png(image), media_type="image/png")

    @app.get("/bundle/{name}")
    def get_bundle(name: str):
        if service.bundle_dir is None:
            raise HTTPException(status_code=404, detail="no bundle exported")
        if "/" in name or name.startswith("."):
            raise HTTPException(status_code=400, detail="bad bundle file name")
        path = os.path.join(service.bundle_dir, name)
        if not os.path.exists(path):
            raise HTTPException(status_code=404, detail=f"no such file: {name}")
        return FileResponse(path)

    @app.websocket("/stream")
    async def stream(ws: WebSocket):
        """Latest-camera-wins streaming: stale queued requests are dropped."""
        await ws.accept()
        try:
            while True:
                message = await ws.receive_text()
                # Drain any newer camera messages before rendering.
                while True:
                    try:
                        message = await asyncio.wait_for(ws.receive_text(), 1e-4)
                        service.stats["stream_dropped"] += 1
                    except asyncio.TimeoutError:
                        break
                try:
                    payload = json.loads(message)
                    camera = _parse_camera(payload)
                except HTTPException as exc:
                    await ws.send_text(json.dumps({"error": exc.detail}))
                    continue
                except json.JSONDecodeError as exc:
                    await ws.send_text(json.dumps({"error": str(exc)}))
                    continue
                image, _, _ = service.render(camera)
                service.stats["stream_frames"] += 1
                await ws.send_bytes(_encode_png(image))
        except WebSocketDisconnect:
            pass

    return app
