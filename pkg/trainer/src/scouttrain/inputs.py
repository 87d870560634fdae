"""Patch input rasters and ground truth for training samples.

Implements the same reconstruction contract as the viewer core (96x96
NN + linear rasters in patch space, padding corners, NN fallback
outside the real triangulation, c_z re-centered on the linear raster's
center cell) but through scipy point location instead of the core's
flood-fill rasterizer; the test suite diffs the two against each other.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

PATCH_SIZE = 640.0
TEXEL_SIZE = 10.0
RASTER_RES = 96
OUTPUT_RES = 64
PAD_RADIUS = RASTER_RES * TEXEL_SIZE / 2.0
CROP = (RASTER_RES - OUTPUT_RES) // 2


@dataclass
class TrainingSample:
    center: tuple
    c_z: float
    hm_nn: np.ndarray              # (96,96) float32 patch space
    hm_lin: np.ndarray
    rgb_nn: np.ndarray | None      # (96,96,3) float32
    rgb_lin: np.ndarray | None
    gt_hm: np.ndarray              # (64,64) float32 patch space, NaN gaps
    gt_rgb: np.ndarray | None      # (64,64,3) float32, NaN like gt_hm
    chunk_point_count: int


def raster_grid(res: int = RASTER_RES) -> np.ndarray:
    coords = -1.0 + (np.arange(res) + 0.5) * (2.0 / res)
    gx, gy = np.meshgrid(coords, coords)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def build_rasters(xy: np.ndarray, h: np.ndarray, rgb: np.ndarray | None):
    """96x96 NN and linear rasters over [-1,1]^2 from patch-space points."""
    res = RASTER_RES
    grid = raster_grid(res)
    tree = cKDTree(xy)
    _d, nn = tree.query(grid)
    hm_nn = h[nn].reshape(res, res)
    rgb_nn = rgb[nn].reshape(res, res, 3) if rgb is not None else None

    hm_lin = hm_nn.copy()
    rgb_lin = rgb_nn.copy() if rgb_nn is not None else None
    corners = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])
    all_xy = np.vstack([xy, corners])
    try:
        tri = Delaunay(all_xy)
    except QhullError:
        return hm_nn, hm_lin, rgb_nn, rgb_lin
    simplex = tri.find_simplex(grid)
    pad = (tri.simplices >= len(xy)).any(axis=1)
    usable = (simplex >= 0) & ~pad[np.maximum(simplex, 0)]
    if usable.any():
        idx = np.nonzero(usable)[0]
        t = simplex[idx]
        transform = tri.transform[t]
        bary2 = np.einsum("ijk,ik->ij", transform[:, :2],
                          grid[idx] - transform[:, 2])
        w = np.column_stack([bary2, 1.0 - bary2.sum(axis=1)])
        verts = tri.simplices[t]
        h_all = np.concatenate([h, [np.nan] * 4])
        hm_lin.ravel()[idx] = (w * h_all[verts]).sum(axis=1)
        if rgb_lin is not None:
            rgb_all = np.vstack([rgb, np.full((4, 3), np.nan)])
            vals = (w[:, :, None] * rgb_all[verts]).sum(axis=1)
            rgb_lin.reshape(-1, 3)[idx] = vals
    return hm_nn, hm_lin, rgb_nn, rgb_lin


def ground_truth(xyz, rgb, center, c_z):
    """64x64 per-texel means in patch space; NaN where nothing falls."""
    res = OUTPUT_RES
    x0 = center[0] - PATCH_SIZE / 2
    y0 = center[1] - PATCH_SIZE / 2
    ix = np.floor((xyz[:, 0] - x0) / TEXEL_SIZE).astype(np.int64)
    iy = np.floor((xyz[:, 1] - y0) / TEXEL_SIZE).astype(np.int64)
    m = (ix >= 0) & (ix < res) & (iy >= 0) & (iy < res)
    flat = iy[m] * res + ix[m]
    counts = np.bincount(flat, minlength=res * res)
    covered = counts > 0
    hm = np.full(res * res, np.nan, dtype=np.float32)
    sums = np.bincount(flat, weights=xyz[m, 2], minlength=res * res)
    hm[covered] = ((sums[covered] / counts[covered]) - c_z) / PAD_RADIUS
    out_rgb = None
    if rgb is not None:
        out_rgb = np.full((res * res, 3), np.nan, dtype=np.float32)
        for c in range(3):
            s = np.bincount(flat, weights=rgb[m, c], minlength=res * res)
            out_rgb[covered, c] = s[covered] / counts[covered]
        out_rgb = out_rgb.reshape(res, res, 3)
    return hm.reshape(res, res), out_rgb


def build_sample(full_xyz: np.ndarray, full_rgb: np.ndarray | None,
                 sub_xyz: np.ndarray, sub_rgb: np.ndarray | None,
                 center) -> TrainingSample | None:
    """One training sample from full-res points + their sparse subsample."""
    cx, cy = center
    near = (np.abs(sub_xyz[:, 0] - cx) <= PAD_RADIUS) & \
           (np.abs(sub_xyz[:, 1] - cy) <= PAD_RADIUS)
    if not near.any():
        return None
    pts = sub_xyz[near]
    rgb = sub_rgb[near] if sub_rgb is not None else None
    d2 = (pts[:, 0] - cx) ** 2 + (pts[:, 1] - cy) ** 2
    c_z = float(pts[np.argmin(d2), 2])
    xy = (pts[:, :2] - np.array([cx, cy])) / PAD_RADIUS
    h = (pts[:, 2] - c_z) / PAD_RADIUS

    hm_nn, hm_lin, rgb_nn, rgb_lin = build_rasters(xy, h, rgb)
    # re-center on the linear raster's center cell, like the core
    shift = float(hm_lin[RASTER_RES // 2, RASTER_RES // 2])
    hm_nn = hm_nn - shift
    hm_lin = hm_lin - shift
    c_z = c_z + shift * PAD_RADIUS

    gt_hm, gt_rgb = ground_truth(full_xyz, full_rgb, center, c_z)
    if np.isnan(gt_hm).all():
        return None
    return TrainingSample(
        center=(float(cx), float(cy)), c_z=c_z,
        hm_nn=hm_nn.astype(np.float32), hm_lin=hm_lin.astype(np.float32),
        rgb_nn=None if rgb_nn is None else rgb_nn.astype(np.float32),
        rgb_lin=None if rgb_lin is None else rgb_lin.astype(np.float32),
        gt_hm=gt_hm, gt_rgb=gt_rgb, chunk_point_count=int(near.sum()))
