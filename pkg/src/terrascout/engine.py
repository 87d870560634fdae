"""Viewpoint-prioritized LOD orchestration.

One logical scheduler owns every PatchState/TileResidency mutation;
workers execute immutable task payloads (interpolate, refine, tile load,
bake) and hand results back through complete_task. Patch stages move
monotonically along chunk-points -> interpolated -> refined ->
full-res-baked, and baked texels survive tile eviction as a medium
level of detail.
"""

from __future__ import annotations

import enum
import logging
import threading
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyPatch
from .geometry import CameraState, fit_overview, projected_bbox_area
from .lasio import (TileMeta, colors, load_tile_fullres, positions,
                    read_chunk_points, scan_dataset)
from .patches import (OUTPUT_RES, PATCH_SIZE, TEXEL_SIZE, ChunkPointIndex,
                      PatchKey, RawPatch, patch_grid_for, reconstruct_patch)
from .refiner import (PROV_BAKED, WeightBundle, RefinedPatch,
                      identity_descriptor, refine_batch)

log = logging.getLogger(__name__)


class Stage(enum.IntEnum):
    EMPTY = 0
    CHUNK_POINTS_ONLY = 1
    INTERPOLATED = 2
    REFINED = 3
    FULLRES_BAKED = 4


class TileState(enum.IntEnum):
    COLD = 0
    LOADING = 1
    RESIDENT = 2
    EVICTED = 3


@dataclass
class EngineConfig:
    budget_bytes: int = 4 << 30
    batch_max: int = 10
    batch_deadline_ms: float = 15.0
    fullres_threshold: float = 0.5
    io_workers: int = 4
    reconstruct_workers: int = 4

    @classmethod
    def from_text(cls, text: str) -> "EngineConfig":
        cfg = cls()
        for line in text.splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, _, value = line.partition("=")
            key = key.strip()
            value = value.strip()
            if not hasattr(cfg, key):
                raise ValueError(f"unknown config key {key!r}")
            current = getattr(cfg, key)
            setattr(cfg, key, type(current)(
                float(value) if isinstance(current, float) else int(value)))
        return cfg

    @classmethod
    def load(cls, path: str) -> "EngineConfig":
        with open(path) as fp:
            return cls.from_text(fp.read())


@dataclass
class PatchState:
    key: PatchKey
    stage: Stage = Stage.EMPTY
    priority: float = 0.0
    last_touched: int = 0
    in_flight: bool = False
    no_data: bool = False  # padded square proved empty; tasks are no-ops


@dataclass
class TileResidency:
    tile_id: int
    state: TileState = TileState.COLD
    resident_points: int = 0
    memory_bytes: int = 0
    priority: float = 0.0
    wanted: bool = False
    in_flight: bool = False


@dataclass(frozen=True)
class Task:
    kind: str          # interpolate | refine | load_tile | bake
    patch: tuple[int, int] | None = None
    tile_id: int | None = None
    priority: float = 0.0


@dataclass
class Dataset:
    tiles: list[TileMeta]
    bbox_min: np.ndarray
    bbox_max: np.ndarray

    @classmethod
    def scan(cls, paths: list[str]) -> "Dataset":
        result = scan_dataset(paths)
        for path, exc in result.errors:
            log.warning("skipping %s: %s", path, exc)
        if not result.tiles:
            raise FileNotFoundError("no readable tiles")
        mins, maxs = result.dataset_bbox()
        return cls(tiles=result.tiles, bbox_min=mins, bbox_max=maxs)


class ScoutEngine:
    """Scheduler + pipeline state for one loaded dataset."""

    def __init__(self, dataset: Dataset, config: EngineConfig | None = None,
                 weights: WeightBundle | None = None):
        self.dataset = dataset
        self.config = config or EngineConfig()
        self.weights = weights or WeightBundle(
            format_version=1, tensors={}, descriptor=identity_descriptor())
        self.grid = patch_grid_for(dataset.bbox_min, dataset.bbox_max)
        self.patches: dict[tuple[int, int], PatchState] = {
            (k.i, k.j): PatchState(key=k) for k in self.grid.keys()}
        self.tiles: dict[int, TileResidency] = {
            t.tile_id: TileResidency(tile_id=t.tile_id)
            for t in dataset.tiles}
        self.index = ChunkPointIndex()
        self.raw: dict[tuple[int, int], RawPatch] = {}
        self.refined: dict[tuple[int, int], RefinedPatch] = {}
        self.resident_records: dict[int, np.ndarray] = {}
        self.pending_bakes: dict[tuple[int, int], int] = {}
        self.camera = fit_overview(dataset.bbox_min, dataset.bbox_max,
                                   (1280, 720))
        self.frame = 0
        self.chunk_points_loaded = 0
        self.chunk_points_expected = sum(
            t.num_chunks() for t in dataset.tiles)
        self.ready_events: list[tuple[tuple[int, int], Stage]] = []
        self.lock = threading.RLock()
        self._tile_by_id = {t.tile_id: t for t in dataset.tiles}

    # ---- overview load ----

    def load_overview(self, progress=None):
        """Pull every tile's chunk points into the spatial index."""
        for tile in self.dataset.tiles:
            records = read_chunk_points(tile)
            xyz = positions(records, tile.header)
            rgb = colors(records, tile.header)
            with self.lock:
                start = self.index.count
                self.index.add_points(xyz, rgb)
                tile.chunk_point_range = (start, self.index.count)
                self.chunk_points_loaded += len(records)
            if progress is not None:
                progress(self.chunk_points_loaded,
                         self.chunk_points_expected)
        with self.lock:
            for state in self.patches.values():
                if state.stage == Stage.EMPTY:
                    state.stage = Stage.CHUNK_POINTS_ONLY
        self.update_viewpoint(self.camera)

    # ---- viewpoint / priorities ----

    def _patch_bbox(self, key: PatchKey):
        cx, cy = key.center
        half = PATCH_SIZE / 2
        return ((cx - half, cy - half, self.dataset.bbox_min[2]),
                (cx + half, cy + half, self.dataset.bbox_max[2]))

    def update_viewpoint(self, cam: CameraState):
        with self.lock:
            self.camera = cam
            self.frame += 1
            for state in self.patches.values():
                lo, hi = self._patch_bbox(state.key)
                area, _diag = projected_bbox_area(cam, lo, hi)
                state.priority = area
                state.last_touched = self.frame
            w, h = cam.viewport
            viewport_diag = float(np.hypot(w, h))
            for tile in self.dataset.tiles:
                res = self.tiles[tile.tile_id]
                area, diag = projected_bbox_area(
                    cam, tile.header.bbox_min, tile.header.bbox_max)
                res.priority = area
                res.wanted = diag > self.config.fullres_threshold * \
                    viewport_diag

    # ---- scheduling ----

    def _patch_task_kind(self, state: PatchState) -> str | None:
        if state.no_data or state.in_flight:
            return None
        if state.stage == Stage.CHUNK_POINTS_ONLY:
            return "interpolate"
        if state.stage == Stage.INTERPOLATED:
            return "refine"
        if state.stage == Stage.REFINED and \
                (state.key.i, state.key.j) in self.pending_bakes:
            return "bake"
        return None

    def next_tasks(self, n: int) -> list[Task]:
        """Up to n highest-priority single-stage advances."""
        with self.lock:
            candidates: list[tuple] = []
            for (i, j), state in self.patches.items():
                kind = self._patch_task_kind(state)
                if kind is not None:
                    candidates.append((-state.priority, 0, (i, j), Task(
                        kind=kind, patch=(i, j), priority=state.priority)))
            for tile_id, res in self.tiles.items():
                if res.wanted and not res.in_flight and \
                        res.state in (TileState.COLD, TileState.EVICTED):
                    candidates.append((-res.priority, 1, (tile_id,), Task(
                        kind="load_tile", tile_id=tile_id,
                        priority=res.priority)))
            candidates.sort(key=lambda c: (c[0], c[1], c[2]))
            tasks = []
            for _np, _k, _id, task in candidates[:n]:
                if task.patch is not None:
                    self.patches[task.patch].in_flight = True
                else:
                    self.tiles[task.tile_id].in_flight = True
                    self.tiles[task.tile_id].state = TileState.LOADING
                tasks.append(task)
            return tasks

    # ---- worker-side execution (no scheduler state touched) ----

    def execute_task(self, task: Task):
        if task.kind == "interpolate":
            key = self.grid.key(*task.patch)
            try:
                return reconstruct_patch(key, self.index)
            except EmptyPatch:
                return None
        if task.kind == "refine":
            raws = [self.raw[task.patch]]
            return refine_batch(raws, self.weights)[0]
        if task.kind == "load_tile":
            return load_tile_fullres(self._tile_by_id[task.tile_id],
                                     max_workers=self.config.io_workers)
        if task.kind == "bake":
            return self._bake_one(task.patch)
        raise ValueError(f"unknown task kind {task.kind}")

    def execute_refine_batch(self, tasks: list[Task]):
        """Batched variant used by the runtime to amortize inference."""
        raws = [self.raw[t.patch] for t in tasks]
        return refine_batch(raws, self.weights)

    def _bake_one(self, patch_id: tuple[int, int]):
        tile_id = self.pending_bakes.get(patch_id)
        if tile_id is None or tile_id not in self.resident_records:
            return None
        tile = self._tile_by_id[tile_id]
        records = self.resident_records[tile_id]
        xyz = positions(records, tile.header)
        rgb = colors(records, tile.header)
        base = self.refined.get(patch_id)
        if base is None:
            return None
        key = self.grid.key(*patch_id, c_z=base.key.c_z)
        return bake_fullres(xyz, rgb, [base], [key])[0]

    # ---- completion (scheduler state transitions) ----

    def complete_task(self, task: Task, result):
        with self.lock:
            if task.kind in ("interpolate", "refine", "bake"):
                state = self.patches[task.patch]
                state.in_flight = False
                if task.kind == "interpolate":
                    if result is None:
                        state.no_data = True
                        return
                    self.raw[task.patch] = result
                    ident = WeightBundle(1, {}, identity_descriptor())
                    self.refined[task.patch] = refine_batch(
                        [result], ident)[0]
                    self._advance(state, Stage.INTERPOLATED)
                elif task.kind == "refine":
                    self.refined[task.patch] = result
                    self._advance(state, Stage.REFINED)
                else:
                    if result is not None:
                        self.refined[task.patch] = result
                        self._advance(state, Stage.FULLRES_BAKED)
                    self.pending_bakes.pop(task.patch, None)
            elif task.kind == "load_tile":
                res = self.tiles[task.tile_id]
                res.in_flight = False
                res.state = TileState.RESIDENT
                res.resident_points = len(result)
                res.memory_bytes = result.nbytes
                self.resident_records[task.tile_id] = result
                tile = self._tile_by_id[task.tile_id]
                for pid in self._patches_touching(tile):
                    st = self.patches[pid]
                    if st.stage in (Stage.REFINED, Stage.INTERPOLATED) and \
                            not st.no_data:
                        self.pending_bakes.setdefault(pid, task.tile_id)
                self.evict(self.config.budget_bytes)

    def _advance(self, state: PatchState, new_stage: Stage):
        if new_stage <= state.stage:
            return  # stages never move backward
        state.stage = new_stage
        self.ready_events.append(((state.key.i, state.key.j), new_stage))

    def _patches_touching(self, tile: TileMeta):
        out = []
        for (i, j), _state in self.patches.items():
            key = self.grid.key(i, j)
            lo, hi = self._patch_bbox(key)
            if lo[0] < tile.header.bbox_max[0] and \
                    hi[0] > tile.header.bbox_min[0] and \
                    lo[1] < tile.header.bbox_max[1] and \
                    hi[1] > tile.header.bbox_min[1]:
                out.append((i, j))
        return out

    # ---- eviction ----

    def evict(self, budget: int) -> list[int]:
        """Drop lowest-priority resident tiles until under budget."""
        with self.lock:
            resident = [r for r in self.tiles.values()
                        if r.state == TileState.RESIDENT]
            total = sum(r.memory_bytes for r in resident)
            evicted = []
            resident.sort(key=lambda r: (r.wanted, r.priority, r.tile_id))
            for res in resident:
                if total <= budget:
                    break
                res.state = TileState.EVICTED
                total -= res.memory_bytes
                res.memory_bytes = 0
                res.resident_points = 0
                self.resident_records.pop(res.tile_id, None)
                evicted.append(res.tile_id)
            return evicted

    # ---- synchronous driver (tests, offline rendering) ----

    def run_until_idle(self, max_tasks: int = 100_000) -> int:
        """Execute tasks to quiescence; returns the task count."""
        done = 0
        while done < max_tasks:
            tasks = self.next_tasks(self.config.batch_max)
            if not tasks:
                break
            refines = [t for t in tasks if t.kind == "refine"]
            others = [t for t in tasks if t.kind != "refine"]
            if refines:
                for task, refined in zip(
                        refines, self.execute_refine_batch(refines)):
                    self.complete_task(task, refined)
                    done += 1
            for task in others:
                self.complete_task(task, self.execute_task(task))
                done += 1
        return done

    # ---- snapshot helpers (server reads) ----

    def progress(self) -> dict:
        with self.lock:
            n = len(self.patches) or 1
            stages = [s.stage for s in self.patches.values()]
            return {
                "chunk_points": (self.chunk_points_loaded /
                                 self.chunk_points_expected
                                 if self.chunk_points_expected else 1.0),
                "interpolated": sum(s >= Stage.INTERPOLATED
                                    for s in stages) / n,
                "refined": sum(s >= Stage.REFINED for s in stages) / n,
            }

    def events_since(self, cursor: int):
        """Coalesced patch-ready events after cursor plus the new cursor.

        The log only grows, so each consumer keeps its own cursor; stage
        monotonicity makes replays harmless.
        """
        with self.lock:
            events = self.ready_events[cursor:]
            new_cursor = len(self.ready_events)
        latest: dict[tuple[int, int], Stage] = {}
        for pid, stage in events:
            if stage > latest.get(pid, Stage.EMPTY):
                latest[pid] = stage
        return new_cursor, sorted(latest.items())

    def drain_ready(self) -> list[tuple[tuple[int, int], Stage]]:
        _cursor, events = self.events_since(0)
        return events


def bake_fullres(points_xyz: np.ndarray, rgb: np.ndarray | None,
                 patches: list[RefinedPatch],
                 keys: list[PatchKey]) -> list[RefinedPatch]:
    """Overwrite covered texels with per-texel means of full-res points.

    Texels no point falls on keep their prior values; output provenance
    is always fullres-baked.
    """
    out = []
    for base, key in zip(patches, keys):
        res = OUTPUT_RES
        x0 = key.center[0] - PATCH_SIZE / 2
        y0 = key.center[1] - PATCH_SIZE / 2
        ix = np.floor((points_xyz[:, 0] - x0) / TEXEL_SIZE).astype(np.int64)
        iy = np.floor((points_xyz[:, 1] - y0) / TEXEL_SIZE).astype(np.int64)
        mask = (ix >= 0) & (ix < res) & (iy >= 0) & (iy < res)
        heights = base.heights_rel.astype(np.float64) + base.key.c_z
        new_rgb = None if base.rgb is None else base.rgb.copy()
        if mask.any():
            flat = iy[mask] * res + ix[mask]
            counts = np.bincount(flat, minlength=res * res)
            sums = np.bincount(flat, weights=points_xyz[mask, 2],
                               minlength=res * res)
            covered = counts > 0
            mean = np.zeros(res * res)
            mean[covered] = sums[covered] / counts[covered]
            heights.ravel()[covered] = mean[covered]
            if new_rgb is not None and rgb is not None:
                for c in range(3):
                    csum = np.bincount(flat, weights=rgb[mask, c],
                                       minlength=res * res)
                    chan = new_rgb[:, :, c].ravel()
                    chan[covered] = (csum[covered] /
                                     counts[covered]).astype(np.float32)
                    new_rgb[:, :, c] = chan.reshape(res, res)
        out.append(RefinedPatch(
            key=key,
            heights_rel=(heights - key.c_z).astype(np.float32),
            rgb=new_rgb,
            provenance=PROV_BAKED))
    return out
