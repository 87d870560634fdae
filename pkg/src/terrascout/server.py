"""HTTP + WebSocket front door for the exploration pipeline.

Resources are binary little-endian (layouts in docs/wire.md); only
/api/dataset speaks JSON. Request handlers read engine snapshots; all
state mutation happens on the scheduler, driven by a background runtime
thread. Camera updates arrive over one WebSocket and replace the
scheduler's camera atomically; patch-ready notifications flow back on a
100 ms coalescing tick.
"""

from __future__ import annotations

import asyncio
import glob
import json
import logging
import os
import struct
import threading
import time

import numpy as np
from fastapi import FastAPI, Response
from fastapi.responses import JSONResponse
from starlette.websockets import WebSocket, WebSocketDisconnect

from .engine import Dataset, EngineConfig, ScoutEngine, Stage, Task
from .geometry import CameraState
from .lasio import colors, decode_chunk, ensure_chunk_refs, positions
from .patches import OUTPUT_RES, PATCH_SIZE
from .refiner import load_weights

log = logging.getLogger(__name__)

POINT_RECORD = np.dtype([("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                         ("r", "u1"), ("g", "u1"), ("b", "u1")])
NOTIFY_TICK_S = 0.1


class EngineRuntime:
    """Background loop that executes scheduler tasks until stopped."""

    def __init__(self, engine: ScoutEngine):
        self.engine = engine
        self._stop = threading.Event()
        self._threads: list[threading.Thread] = []
        self.overview_done = threading.Event()

    def start(self):
        t1 = threading.Thread(target=self._overview, daemon=True,
                              name="overview-loader")
        t2 = threading.Thread(target=self._task_loop, daemon=True,
                              name="task-worker")
        self._threads = [t1, t2]
        t1.start()
        t2.start()

    def stop(self):
        self._stop.set()
        for t in self._threads:
            t.join(timeout=5)

    def _overview(self):
        try:
            self.engine.load_overview()
        except Exception:
            log.exception("overview load failed")
        finally:
            self.overview_done.set()

    def _task_loop(self):
        engine = self.engine
        deadline_s = engine.config.batch_deadline_ms / 1000.0
        while not self._stop.is_set():
            tasks = engine.next_tasks(engine.config.batch_max)
            if not tasks:
                self._stop.wait(deadline_s)
                continue
            refines = [t for t in tasks if t.kind == "refine"]
            others = [t for t in tasks if t.kind != "refine"]
            for task in others:
                try:
                    engine.complete_task(task, engine.execute_task(task))
                except Exception:
                    log.exception("task %s failed", task)
                    self._unflag(task)
            if refines:
                try:
                    for task, refined in zip(
                            refines,
                            engine.execute_refine_batch(refines)):
                        engine.complete_task(task, refined)
                except Exception:
                    log.exception("refine batch failed")
                    for task in refines:
                        self._unflag(task)

    def _unflag(self, task: Task):
        with self.engine.lock:
            if task.patch is not None:
                self.engine.patches[task.patch].in_flight = False
            elif task.tile_id is not None:
                self.engine.tiles[task.tile_id].in_flight = False


def _records_blob(xyz: np.ndarray, rgb: np.ndarray | None) -> bytes:
    out = np.zeros(len(xyz), dtype=POINT_RECORD)
    out["x"] = xyz[:, 0]
    out["y"] = xyz[:, 1]
    out["z"] = xyz[:, 2]
    if rgb is not None:
        q = np.clip(np.round(rgb * 255), 0, 255).astype(np.uint8)
        out["r"], out["g"], out["b"] = q[:, 0], q[:, 1], q[:, 2]
    return out.tobytes()


def _parse_camera(payload: dict) -> CameraState:
    return CameraState(
        position=np.asarray(payload["position"], dtype=np.float64),
        direction=np.asarray(payload["direction"], dtype=np.float64),
        fov_y=float(payload.get("fov_y", np.deg2rad(60))),
        viewport=tuple(payload.get("viewport", (1280, 720))),
        near=float(payload.get("near", 1.0)),
        far=float(payload.get("far", 1.0e6)))


def wire_heightmap(engine: ScoutEngine, i: int, j: int) -> bytes | None:
    """Serialize one patch per docs/wire.md; None while nothing is built."""
    with engine.lock:
        patch = engine.refined.get((i, j))
        stage = engine.patches[(i, j)].stage if (i, j) in engine.patches \
            else None
    if patch is None or stage is None:
        return None
    flags = 1 if patch.rgb is not None else 0
    head = struct.pack("<iifBB", i, j, float(patch.key.c_z), int(stage),
                       flags)
    body = patch.heights_rel.astype("<f4").tobytes()
    if flags & 1:
        body += np.clip(np.round(patch.rgb * 255), 0,
                        255).astype(np.uint8).tobytes()
    return head + body


def create_app(engine: ScoutEngine | None,
               runtime: EngineRuntime | None = None,
               autostart: bool = True) -> FastAPI:
    app = FastAPI(title="terrascout")
    app.state.engine = engine
    app.state.runtime = runtime

    if engine is not None and runtime is None and autostart:
        runtime = EngineRuntime(engine)
        app.state.runtime = runtime

        @app.on_event("startup")
        def _start():
            runtime.start()

        @app.on_event("shutdown")
        def _shutdown():
            runtime.stop()

    @app.get("/api/dataset")
    def dataset_meta():
        eng: ScoutEngine = app.state.engine
        if eng is None:
            return JSONResponse({"error": "no dataset loaded"},
                                status_code=404)
        ds = eng.dataset
        with eng.lock:
            return {
                "bbox_min": list(map(float, ds.bbox_min)),
                "bbox_max": list(map(float, ds.bbox_max)),
                "tile_count": len(ds.tiles),
                "patch_grid": {"origin": list(eng.grid.origin),
                               "ni": eng.grid.ni, "nj": eng.grid.nj,
                               "patch_size": PATCH_SIZE,
                               "output_res": OUTPUT_RES},
                "chunk_point_total": eng.index.count,
                "progress": eng.progress(),
                "tiles": [{
                    "id": t.tile_id,
                    "name": os.path.basename(t.path),
                    "bbox_min": list(t.header.bbox_min),
                    "bbox_max": list(t.header.bbox_max),
                    "point_count": t.header.point_count,
                    "chunks": t.num_chunks(),
                } for t in ds.tiles],
            }

    @app.get("/api/patches")
    def patch_stages():
        eng: ScoutEngine = app.state.engine
        with eng.lock:
            return {"patches": [
                {"i": i, "j": j, "stage": int(s.stage)}
                for (i, j), s in sorted(eng.patches.items())]}

    @app.get("/api/chunkpoints")
    def chunkpoints(bbox: str | None = None):
        eng: ScoutEngine = app.state.engine
        with eng.lock:
            xyz, rgb = eng.index.all_points()
            generation = eng.index.count
        if bbox is not None:
            x0, y0, x1, y1 = (float(v) for v in bbox.split(","))
            mask = (xyz[:, 0] >= x0) & (xyz[:, 0] <= x1) & \
                   (xyz[:, 1] >= y0) & (xyz[:, 1] <= y1)
            xyz = xyz[mask]
            rgb = rgb[mask] if rgb is not None else None
        return Response(
            content=_records_blob(xyz, rgb),
            media_type="application/octet-stream",
            headers={"X-Load-Generation": str(generation),
                     "X-Has-Color": "1" if rgb is not None else "0",
                     "X-Record-Count": str(len(xyz))})

    @app.get("/api/patch/{i}/{j}")
    def patch_resource(i: int, j: int):
        eng: ScoutEngine = app.state.engine
        if (i, j) not in eng.patches:
            return JSONResponse({"error": "patch outside grid"},
                                status_code=404)
        blob = wire_heightmap(eng, i, j)
        if blob is None:
            return JSONResponse({"error": "patch not reconstructed yet"},
                                status_code=409)
        return Response(content=blob,
                        media_type="application/octet-stream")

    @app.get("/api/tile/{tile_id}/points")
    def tile_points(tile_id: int, chunk: int = 0):
        eng: ScoutEngine = app.state.engine
        tile = eng._tile_by_id.get(tile_id)
        if tile is None:
            return JSONResponse({"error": "unknown tile"}, status_code=404)
        refs = ensure_chunk_refs(tile)
        if not 0 <= chunk < len(refs):
            return JSONResponse({"error": "chunk index out of range"},
                                status_code=404)
        if tile.is_compressed:
            records = decode_chunk(tile, refs[chunk])
        else:
            from .lasio import load_tile_fullres
            ref = refs[chunk]
            records = load_tile_fullres(tile)[
                ref.chunk_index * tile.chunk_size:
                ref.chunk_index * tile.chunk_size + ref.point_count]
        xyz = positions(records, tile.header)
        rgb = colors(records, tile.header)
        return Response(content=_records_blob(xyz, rgb),
                        media_type="application/octet-stream",
                        headers={"X-Record-Count": str(len(records))})

    @app.websocket("/api/viewpoint")
    async def viewpoint(ws: WebSocket):
        eng: ScoutEngine = app.state.engine
        await ws.accept()
        cursor = 0
        try:
            while True:
                try:
                    msg = await asyncio.wait_for(ws.receive_text(),
                                                 timeout=NOTIFY_TICK_S)
                    try:
                        eng.update_viewpoint(_parse_camera(json.loads(msg)))
                    except Exception as exc:  # malformed: keep connection
                        await ws.send_text(json.dumps(
                            {"error": str(exc)}))
                except asyncio.TimeoutError:
                    pass
                cursor, events = eng.events_since(cursor)
                if events:
                    await ws.send_text(json.dumps({"ready": [
                        {"i": i, "j": j, "stage": int(stage)}
                        for (i, j), stage in events]}))
        except WebSocketDisconnect:
            pass

    return app


def serve(dataset_dir: str, port: int = 8731,
          weights_path: str | None = None,
          config_path: str | None = None, host: str = "127.0.0.1"):
    """Blocking entry point used by the CLI."""
    import uvicorn

    paths = sorted(glob.glob(os.path.join(dataset_dir, "*.la[sz]")))
    engine = None
    if paths:
        config = EngineConfig.load(config_path) if config_path \
            else EngineConfig()
        weights = load_weights(weights_path) if weights_path else None
        engine = ScoutEngine(Dataset.scan(paths), config, weights)
    app = create_app(engine)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def wait_for_stage(engine: ScoutEngine, patch: tuple[int, int],
                   stage: Stage, timeout: float = 30.0) -> bool:
    """Poll helper for scripted sessions and tests."""
    end = time.monotonic() + timeout
    while time.monotonic() < end:
        with engine.lock:
            if engine.patches[patch].stage >= stage:
                return True
        time.sleep(0.01)
    return False
