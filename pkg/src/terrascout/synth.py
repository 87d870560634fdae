"""Procedural terrain and synthetic LAS/LAZ corpus generation.

Everything the test suite runs on comes from here: seeded fractal
terrain with an analytic height function, sampled at configurable
density, quantized exactly like the files store it, and written as LAS
or chunked LAZ tiles.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .lasio import record_dtype, write_las, write_laz

DEFAULT_SCALE = (0.01, 0.01, 0.01)


@dataclass
class FractalTerrain:
    """Sum-of-cosines value noise; smooth, deterministic, cheap to query."""
    seed: int = 0
    octaves: int = 5
    base_wavelength: float = 2200.0
    amplitude: float = 90.0
    base_height: float = 120.0

    def __post_init__(self):
        rng = np.random.default_rng(self.seed)
        self._freqs = []
        self._phases = []
        self._amps = []
        # normalize so the worst-case wave sum stays within `amplitude`
        norm = sum(3.0 / (2.0 ** o) for o in range(self.octaves))
        for o in range(self.octaves):
            wl = self.base_wavelength / (2.0 ** o)
            amp = self.amplitude / (2.0 ** o) / norm
            # a few plane waves per octave with random directions
            for _ in range(3):
                theta = rng.uniform(0, 2 * np.pi)
                k = 2 * np.pi / wl
                self._freqs.append((k * np.cos(theta), k * np.sin(theta)))
                self._phases.append(rng.uniform(0, 2 * np.pi))
                self._amps.append(amp * rng.uniform(0.6, 1.0))
        self._freqs = np.array(self._freqs)
        self._phases = np.array(self._phases)
        self._amps = np.array(self._amps)

    def height(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        phase = (x[..., None] * self._freqs[:, 0] +
                 y[..., None] * self._freqs[:, 1] + self._phases)
        return self.base_height + (np.cos(phase) * self._amps).sum(axis=-1)

    def color(self, x, y):
        """Height/slope driven palette, [0,1] float per channel."""
        h = self.height(x, y)
        t = np.clip((h - self.base_height + self.amplitude) /
                    (2 * self.amplitude), 0, 1)
        low = np.array([0.24, 0.42, 0.16])
        high = np.array([0.58, 0.52, 0.38])
        rgb = low + t[..., None] * (high - low)
        ripple = 0.05 * np.cos(x / 37.0)[..., None]
        return np.clip(rgb + ripple, 0.0, 1.0)


def quantize(values, scale, offset):
    return np.round((np.asarray(values) - offset) / scale).astype(np.int64)


def sample_tile_records(terrain: FractalTerrain, x0: float, y0: float,
                        extent: float, n_points: int, point_format: int,
                        rng: np.random.Generator,
                        scale=DEFAULT_SCALE, offset=(0.0, 0.0, 0.0),
                        z_noise: float = 0.05) -> np.ndarray:
    """Sample one tile footprint into raw integer records."""
    xs = rng.uniform(x0, x0 + extent, n_points)
    ys = rng.uniform(y0, y0 + extent, n_points)
    zs = terrain.height(xs, ys) + rng.normal(0, z_noise, n_points)

    dtype = record_dtype(point_format)
    rec = np.zeros(n_points, dtype=dtype)
    rec["x"] = quantize(xs, scale[0], offset[0]).astype(np.int32)
    rec["y"] = quantize(ys, scale[1], offset[1]).astype(np.int32)
    rec["z"] = quantize(zs, scale[2], offset[2]).astype(np.int32)
    rec["intensity"] = rng.integers(0, 4096, n_points).astype(np.uint16)
    # single-return pulses with occasional multi-return groups
    nret = np.where(rng.random(n_points) < 0.15, 2, 1).astype(np.uint8)
    ret = np.minimum(1, nret).astype(np.uint8)
    rec["bitfield"] = (ret | (nret << 3)).astype(np.uint8)
    rec["classification"] = rng.choice(
        [1, 2, 2, 2, 5], size=n_points).astype(np.uint8)
    rec["scan_angle"] = rng.integers(0, 30, n_points).astype(np.uint8)
    rec["point_source_id"] = 7
    if point_format in (1, 3):
        t = np.sort(rng.uniform(1.0e5, 1.0e5 + 60.0, n_points))
        rec["gps_time"] = t.view(np.uint64)
    if point_format in (2, 3):
        rgb = terrain.color(xs, ys)
        rgb16 = np.clip(np.round(rgb * 65535), 0, 65535).astype(np.uint16)
        rec["red"] = rgb16[:, 0]
        rec["green"] = rgb16[:, 1]
        rec["blue"] = rgb16[:, 2]
    return rec


def plane_records(a: float, b: float, d: float, x0: float, y0: float,
                  extent: float, n_points: int, seed: int = 0,
                  point_format: int = 2,
                  scale=DEFAULT_SCALE) -> np.ndarray:
    """Points sampled exactly from the plane z = a*x + b*y + d."""
    rng = np.random.default_rng(seed)
    xs = rng.uniform(x0, x0 + extent, n_points)
    ys = rng.uniform(y0, y0 + extent, n_points)
    zs = a * xs + b * ys + d
    dtype = record_dtype(point_format)
    rec = np.zeros(n_points, dtype=dtype)
    rec["x"] = quantize(xs, scale[0], 0.0).astype(np.int32)
    rec["y"] = quantize(ys, scale[1], 0.0).astype(np.int32)
    rec["z"] = quantize(zs, scale[2], 0.0).astype(np.int32)
    rec["bitfield"] = 1 | (1 << 3)
    if point_format in (2, 3):
        rec["red"] = 20000
        rec["green"] = 30000
        rec["blue"] = 10000
    return rec


def generate_corpus(out_dir: str, n_tiles: int, points_per_tile: int,
                    seed: int = 0, point_format: int = 2,
                    tile_extent: float = 640.0, chunk_size: int = 512,
                    compressed: bool = True, grid_cols: int | None = None,
                    terrain: FractalTerrain | None = None) -> dict:
    """Write a grid of synthetic tiles plus a manifest; returns manifest."""
    os.makedirs(out_dir, exist_ok=True)
    terrain = terrain or FractalTerrain(seed=seed)
    rng = np.random.default_rng(seed + 1)
    cols = grid_cols or int(np.ceil(np.sqrt(n_tiles)))
    ext = "laz" if compressed else "las"
    tiles = []
    for i in range(n_tiles):
        cx, cy = i % cols, i // cols
        x0, y0 = cx * tile_extent, cy * tile_extent
        rec = sample_tile_records(terrain, x0, y0, tile_extent,
                                  points_per_tile, point_format, rng)
        path = os.path.join(out_dir, f"tile_{cx:03d}_{cy:03d}.{ext}")
        if compressed:
            write_laz(path, rec, point_format, chunk_size=chunk_size)
        else:
            write_las(path, rec, point_format)
        tiles.append({"path": os.path.basename(path), "x0": x0, "y0": y0})
    manifest = {
        "seed": seed,
        "point_format": point_format,
        "tile_extent": tile_extent,
        "chunk_size": chunk_size,
        "points_per_tile": points_per_tile,
        "terrain": {"seed": terrain.seed, "octaves": terrain.octaves,
                    "base_wavelength": terrain.base_wavelength,
                    "amplitude": terrain.amplitude,
                    "base_height": terrain.base_height},
        "tiles": tiles,
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fp:
        json.dump(manifest, fp, indent=2)
    return manifest


def terrain_from_manifest(manifest: dict) -> FractalTerrain:
    t = manifest["terrain"]
    return FractalTerrain(seed=t["seed"], octaves=t["octaves"],
                          base_wavelength=t["base_wavelength"],
                          amplitude=t["amplitude"],
                          base_height=t["base_height"])
