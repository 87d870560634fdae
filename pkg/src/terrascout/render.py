"""Deterministic CPU rasterizer for points and heightmap meshes.

Every fragment is a 64-bit key: monotone depth in the high 32 bits,
packed RGBA color in the low 32. A framebuffer cell keeps the minimum
key ever written, so submission order (and worker count) cannot change
the resolved image; equal-depth ties resolve to the smaller packed
color. Heightmap triangles take one of two code paths by projected
bounding-box size, both evaluating identical per-pixel arithmetic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .geometry import CameraState, depth_key, project
from .patches import OUTPUT_RES, PATCH_SIZE, TEXEL_SIZE
from .refiner import RefinedPatch

EMPTY_KEY = np.uint64(0xFFFFFFFFFFFFFFFF)
LARGE_TRIANGLE_PIXELS = 1024


@dataclass
class Framebuffer:
    width: int
    height: int
    cells: np.ndarray = field(init=False)

    def __post_init__(self):
        self.cells = np.full((self.height, self.width), EMPTY_KEY,
                             dtype=np.uint64)

    def merge_min(self, py: np.ndarray, px: np.ndarray, keys: np.ndarray):
        np.minimum.at(self.cells, (py, px), keys)

    def merge_buffer(self, other: "Framebuffer"):
        np.minimum(self.cells, other.cells, out=self.cells)


def pack_color(rgb: np.ndarray) -> np.ndarray:
    """Linear-light [0,1] floats -> packed 0xRRGGBBAA u32 (as u64)."""
    q = np.clip(np.asarray(rgb) * 255.0 + 0.5, 0, 255).astype(np.uint64)
    return (q[..., 0] << np.uint64(24)) | (q[..., 1] << np.uint64(16)) | \
           (q[..., 2] << np.uint64(8)) | np.uint64(0xFF)


def _keys(cam: CameraState, depth: np.ndarray,
          packed_rgb: np.ndarray) -> np.ndarray:
    return (depth_key(cam, depth) << np.uint64(32)) | packed_rgb


def rasterize_points(points_xyz: np.ndarray, rgb: np.ndarray | None,
                     cam: CameraState, fb: Framebuffer,
                     chunk_size: int = 50_000, workers: int = 1):
    """One fragment per in-frustum point, min-key merged.

    Points are processed in chunk-sized groups; groups are independent,
    so any worker count produces the same framebuffer.
    """
    n = len(points_xyz)
    if n == 0:
        return
    if rgb is None:
        packed = np.full(n, pack_color(np.array([0.85, 0.85, 0.85])),
                         dtype=np.uint64)
    else:
        packed = pack_color(rgb)
    groups = [slice(s, min(s + chunk_size, n))
              for s in range(0, n, chunk_size)]

    def raster_group(sl, target: Framebuffer):
        px, py, ze = project(cam, points_xyz[sl])
        mask = (ze > cam.near) & (ze <= cam.far)
        px, py, ze = px[mask], py[mask], ze[mask]
        xi = np.floor(px).astype(np.int64)
        yi = np.floor(py).astype(np.int64)
        inb = (xi >= 0) & (xi < fb.width) & (yi >= 0) & (yi < fb.height)
        if not inb.any():
            return
        keys = _keys(cam, ze[inb], packed[sl][mask][inb])
        target.merge_min(yi[inb], xi[inb], keys)

    if workers <= 1 or len(groups) == 1:
        for sl in groups:
            raster_group(sl, fb)
        return
    partials = [Framebuffer(fb.width, fb.height) for _ in range(workers)]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [
            pool.submit(raster_group, sl, partials[i % workers])
            for i, sl in enumerate(groups)]
        for f in futures:
            f.result()
    for part in partials:
        fb.merge_buffer(part)


def patch_mesh(patch: RefinedPatch):
    """Vertex grid at texel centers plus per-quad colors.

    Returns (vertices (64*64,3), triangles (2*63*63,3), packed color per
    triangle).
    """
    res = OUTPUT_RES
    key = patch.key
    x0 = key.center[0] - PATCH_SIZE / 2
    y0 = key.center[1] - PATCH_SIZE / 2
    coords = x0 + (np.arange(res) + 0.5) * TEXEL_SIZE
    coords_y = y0 + (np.arange(res) + 0.5) * TEXEL_SIZE
    gx, gy = np.meshgrid(coords, coords_y)
    hm = patch.hm
    verts = np.stack([gx.ravel(), gy.ravel(), hm.ravel()], axis=1)

    idx = np.arange(res * res).reshape(res, res)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    tris = np.concatenate([np.stack([a, b, c], axis=1),
                           np.stack([b, d, c], axis=1)])

    if patch.rgb is not None:
        quad_rgb = patch.rgb[:-1, :-1].reshape(-1, 3)
        packed = pack_color(quad_rgb)
    else:
        shade = np.clip(0.35 + 0.5 *
                        (hm[:-1, :-1] - hm.min()) /
                        max(np.ptp(hm), 1e-9), 0, 1)
        packed = pack_color(np.stack([shade] * 3, axis=-1).reshape(-1, 3))
    packed = np.concatenate([packed, packed])
    return verts, tris, packed


class _TriangleRaster:
    """Screen-space setup for one triangle.

    Both fill paths call _row for the actual per-pixel arithmetic, so a
    triangle produces identical fragments regardless of which path
    handled it; the paths differ only in iteration strategy.
    """

    def __init__(self, vx, vy, vz_inv, bbox):
        self.vx, self.vy, self.vz_inv = vx, vy, vz_inv
        self.x0, self.x1, self.y0, self.y1 = bbox
        self.d = (vy[1] - vy[2]) * (vx[0] - vx[2]) + \
                 (vx[2] - vx[1]) * (vy[0] - vy[2])
        self.xs = np.arange(self.x0, self.x1 + 1, dtype=np.float64) + 0.5

    def _row(self, py):
        """Fragments of one pixel row; py is the pixel-center y."""
        vx, vy, vz_inv = self.vx, self.vy, self.vz_inv
        px = self.xs
        w0 = ((vy[1] - vy[2]) * (px - vx[2]) +
              (vx[2] - vx[1]) * (py - vy[2])) / self.d
        w1 = ((vy[2] - vy[0]) * (px - vx[2]) +
              (vx[0] - vx[2]) * (py - vy[2])) / self.d
        w2 = 1.0 - w0 - w1
        inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
        if not inside.any():
            return None
        inv_z = w0 * vz_inv[0] + w1 * vz_inv[1] + w2 * vz_inv[2]
        inside &= inv_z > 0
        if not inside.any():
            return None
        (ix,) = np.nonzero(inside)
        return ix + self.x0, 1.0 / inv_z[ix]

    def fill_small(self, emit):
        """Scalar walk over rows, like one thread iterating the bbox."""
        for yi in range(self.y0, self.y1 + 1):
            frag = self._row(yi + 0.5)
            if frag is not None:
                ix, depth = frag
                emit(np.full(len(ix), yi, dtype=np.int64), ix, depth)

    def fill_large(self, emit):
        """Data-parallel fill of the whole bbox at once."""
        rows = []
        for yi in range(self.y0, self.y1 + 1):
            frag = self._row(yi + 0.5)
            rows.append((yi, frag))
        ys = [np.full(len(f[0]), yi, dtype=np.int64)
              for yi, f in rows if f is not None]
        if not ys:
            return
        xs = [f[0] for _yi, f in rows if f is not None]
        ds = [f[1] for _yi, f in rows if f is not None]
        emit(np.concatenate(ys), np.concatenate(xs), np.concatenate(ds))


def rasterize_heightmaps(patches: list[RefinedPatch], cam: CameraState,
                         fb: Framebuffer):
    """Triangle-grid rasterization with small/large code paths.

    Triangles whose projected bbox covers < 1024 pixels are filled
    immediately; larger ones are queued and filled afterwards.
    """
    for patch in patches:
        if not np.isfinite(patch.heights_rel).all():
            raise ValueError("non-finite heightmap cannot be rasterized")
        verts, tris, colors = patch_mesh(patch)
        px, py, ze = project(cam, verts)
        front = ze > cam.near
        inv_z = np.where(front, 1.0 / np.maximum(ze, 1e-12), -1.0)

        tri_front = front[tris].all(axis=1)
        txs = px[tris]
        tys = py[tris]

        x_lo = np.maximum(np.floor(txs.min(axis=1)), 0).astype(np.int64)
        x_hi = np.minimum(np.ceil(txs.max(axis=1)) - 1,
                          fb.width - 1).astype(np.int64)
        y_lo = np.maximum(np.floor(tys.min(axis=1)), 0).astype(np.int64)
        y_hi = np.minimum(np.ceil(tys.max(axis=1)) - 1,
                          fb.height - 1).astype(np.int64)
        valid = tri_front & (x_hi >= x_lo) & (y_hi >= y_lo)
        bbox_pixels = (x_hi - x_lo + 1) * (y_hi - y_lo + 1)

        queue = []
        for t in np.nonzero(valid)[0]:
            raster = _TriangleRaster(
                txs[t], tys[t], inv_z[tris[t]],
                (x_lo[t], x_hi[t], y_lo[t], y_hi[t]))
            if raster.d == 0:
                continue
            ckey = colors[t]

            def emit(iy, ix, depth, _ckey=ckey):
                fb.merge_min(iy, ix, _keys(cam, depth, np.uint64(_ckey)))

            if bbox_pixels[t] < LARGE_TRIANGLE_PIXELS:
                raster.fill_small(emit)
            else:
                queue.append((raster, emit))
        for raster, emit in queue:
            raster.fill_large(emit)


_SRGB_LUT = None


def _srgb_lut() -> np.ndarray:
    global _SRGB_LUT
    if _SRGB_LUT is None:
        lin = np.arange(256) / 255.0
        srgb = np.where(lin <= 0.0031308, lin * 12.92,
                        1.055 * lin ** (1 / 2.4) - 0.055)
        _SRGB_LUT = np.clip(np.round(srgb * 255), 0, 255).astype(np.uint8)
    return _SRGB_LUT


def resolve(fb: Framebuffer, background=(0.12, 0.12, 0.15)) -> np.ndarray:
    """Extract low 32 bits as color, sRGB-encode, return (H,W,4) uint8."""
    cells = fb.cells
    color = (cells & np.uint64(0xFFFFFFFF)).astype(np.uint32)
    r = ((color >> 24) & 0xFF).astype(np.uint8)
    g = ((color >> 16) & 0xFF).astype(np.uint8)
    b = ((color >> 8) & 0xFF).astype(np.uint8)
    lut = _srgb_lut()
    img = np.stack([lut[r], lut[g], lut[b],
                    np.full_like(r, 255)], axis=-1)
    bg = np.clip(np.round(np.asarray(background) * 255), 0,
                 255).astype(np.uint8)
    bg = np.array([lut[bg[0]], lut[bg[1]], lut[bg[2]], 255], dtype=np.uint8)
    empty = cells == EMPTY_KEY
    img[empty] = bg
    return img


def save_png(path: str, image: np.ndarray):
    from PIL import Image
    Image.fromarray(image, mode="RGBA").save(path)
