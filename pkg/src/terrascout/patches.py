"""Patch-space heightmap reconstruction from sparse chunk points.

A patch covers 640 m x 640 m at 10 m/texel (64x64 output); rasters are
built at 96x96 so a later 64x64 center crop has 16 texels of context on
every side. Reconstruction works in patch space: coordinates and heights
divided by the padded radius r = 480 m.

The face map is built by flood-filling triangle ids from triangle
centroids (8-connected), with a second bounding-box pass that catches
cells of slender triangles the first pass cannot reach. Cells covered
only by triangles that touch a padding corner fall back to
nearest-neighbor values.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from .errors import EmptyPatch, EmptySet

PATCH_SIZE = 640.0
TEXEL_SIZE = 10.0
RASTER_RES = 96
OUTPUT_RES = 64
PAD_RADIUS = RASTER_RES * TEXEL_SIZE / 2.0  # 480 m
BARY_TOL = 1e-9


@dataclass(frozen=True)
class PatchKey:
    i: int
    j: int
    center: tuple[float, float]
    c_z: float = 0.0

    def with_cz(self, c_z: float) -> "PatchKey":
        return PatchKey(self.i, self.j, self.center, c_z)


@dataclass
class PatchGrid:
    origin: tuple[float, float]
    ni: int
    nj: int

    def key(self, i: int, j: int, c_z: float = 0.0) -> PatchKey:
        cx = self.origin[0] + (i + 0.5) * PATCH_SIZE
        cy = self.origin[1] + (j + 0.5) * PATCH_SIZE
        return PatchKey(i, j, (cx, cy), c_z)

    def keys(self) -> list[PatchKey]:
        return [self.key(i, j) for j in range(self.nj)
                for i in range(self.ni)]

    def contains(self, i: int, j: int) -> bool:
        return 0 <= i < self.ni and 0 <= j < self.nj


def patch_grid_for(bbox_min, bbox_max) -> PatchGrid:
    """Patch keys covering the dataset bbox on a 640 m-aligned grid."""
    if bbox_min[0] >= bbox_max[0] or bbox_min[1] >= bbox_max[1]:
        raise ValueError("degenerate bbox")
    ox = np.floor(bbox_min[0] / PATCH_SIZE) * PATCH_SIZE
    oy = np.floor(bbox_min[1] / PATCH_SIZE) * PATCH_SIZE
    ni = int(np.ceil((bbox_max[0] - ox) / PATCH_SIZE))
    nj = int(np.ceil((bbox_max[1] - oy) / PATCH_SIZE))
    return PatchGrid(origin=(ox, oy), ni=ni, nj=nj)


@dataclass
class PatchSpacePoints:
    xy: np.ndarray                 # (N,2) in [-1,1]^2
    h: np.ndarray                  # (N,) patch-space heights
    rgb: np.ndarray | None         # (N,3) in [0,1] or None
    c_z: float = 0.0               # provisional center height, meters


@dataclass
class FaceMap:
    res: int
    cells: np.ndarray              # (res,res) int32; -1 outside, >=0 face id


@dataclass
class RawPatch:
    key: PatchKey
    hm_nn: np.ndarray              # (res,res) float32, patch space
    hm_lin: np.ndarray
    rgb_nn: np.ndarray | None      # (res,res,3) float32
    rgb_lin: np.ndarray | None
    face_map: FaceMap
    chunk_point_count: int


class ChunkPointIndex:
    """Append-only uniform grid (640 m cells) over loaded chunk points."""

    def __init__(self):
        self._xyz: list[np.ndarray] = []
        self._rgb: list[np.ndarray | None] = []
        self._cells: dict[tuple[int, int], list[tuple[int, np.ndarray]]] = \
            defaultdict(list)
        self._block = 0
        self.count = 0
        self.has_rgb: bool | None = None

    def add_points(self, xyz: np.ndarray, rgb: np.ndarray | None):
        if len(xyz) == 0:
            return
        if self.has_rgb is None:
            self.has_rgb = rgb is not None
        xyz = np.asarray(xyz, dtype=np.float64)
        self._xyz.append(xyz)
        self._rgb.append(rgb)
        ci = np.floor(xyz[:, 0] / PATCH_SIZE).astype(np.int64)
        cj = np.floor(xyz[:, 1] / PATCH_SIZE).astype(np.int64)
        order = np.lexsort((cj, ci))
        sorted_ci, sorted_cj = ci[order], cj[order]
        boundaries = np.nonzero((np.diff(sorted_ci) != 0) |
                                (np.diff(sorted_cj) != 0))[0] + 1
        for seg in np.split(order, boundaries):
            cell = (int(ci[seg[0]]), int(cj[seg[0]]))
            self._cells[cell].append((self._block, seg))
        self._block += 1
        self.count += len(xyz)

    def query_square(self, center, radius):
        """All points with |x-cx|<=radius and |y-cy|<=radius."""
        cx, cy = center
        ci0 = int(np.floor((cx - radius) / PATCH_SIZE))
        ci1 = int(np.floor((cx + radius) / PATCH_SIZE))
        cj0 = int(np.floor((cy - radius) / PATCH_SIZE))
        cj1 = int(np.floor((cy + radius) / PATCH_SIZE))
        xyz_parts = []
        rgb_parts = []
        for ci in range(ci0, ci1 + 1):
            for cj in range(cj0, cj1 + 1):
                for block, rows in self._cells.get((ci, cj), ()):
                    xyz_parts.append(self._xyz[block][rows])
                    if self.has_rgb:
                        rgb_parts.append(self._rgb[block][rows])
        if not xyz_parts:
            return (np.empty((0, 3)),
                    np.empty((0, 3), np.float32) if self.has_rgb else None)
        xyz = np.concatenate(xyz_parts)
        mask = (np.abs(xyz[:, 0] - cx) <= radius) & \
               (np.abs(xyz[:, 1] - cy) <= radius)
        rgb = np.concatenate(rgb_parts)[mask] if self.has_rgb else None
        return xyz[mask], rgb

    def all_points(self):
        if not self._xyz:
            return np.empty((0, 3)), None
        xyz = np.concatenate(self._xyz)
        rgb = np.concatenate(self._rgb) if self.has_rgb else None
        return xyz, rgb


def gather_and_normalize(key: PatchKey,
                         index: ChunkPointIndex) -> PatchSpacePoints:
    """Chunk points in the padded square, transformed to patch space.

    The provisional center height is the gathered point nearest the patch
    center; interpolate_patch re-centers afterwards.
    """
    xyz, rgb = index.query_square(key.center, PAD_RADIUS)
    if len(xyz) == 0:
        raise EmptyPatch(f"no chunk points near patch ({key.i},{key.j})")
    d2 = (xyz[:, 0] - key.center[0]) ** 2 + (xyz[:, 1] - key.center[1]) ** 2
    c_z = float(xyz[int(np.argmin(d2)), 2])
    xy = (xyz[:, :2] - np.asarray(key.center)) / PAD_RADIUS
    h = (xyz[:, 2] - c_z) / PAD_RADIUS
    return PatchSpacePoints(xy=xy, h=h, rgb=rgb, c_z=c_z)


def _nn_assign(xy: np.ndarray, queries: np.ndarray) -> np.ndarray:
    """Nearest input index per query; distance ties go to the lowest index."""
    if len(xy) == 0:
        raise EmptySet("no points for nearest-neighbor query")
    if len(xy) == 1:
        return np.zeros(len(queries), dtype=np.int64)
    tree = cKDTree(xy)
    dist, idx = tree.query(queries, k=2)
    out = idx[:, 0].astype(np.int64)
    lower = idx.min(axis=1)
    tied = (dist[:, 0] == dist[:, 1]) & (out != lower)
    out[tied] = lower[tied]
    maybe_more = dist[:, 0] == dist[:, 1]
    for q in np.nonzero(maybe_more)[0]:
        ball = tree.query_ball_point(queries[q], dist[q, 0] * (1 + 1e-12))
        near = [b for b in ball
                if np.hypot(*(xy[b] - queries[q])) <= dist[q, 0]]
        if near:
            out[q] = min(near)
    return out


def nearest_neighbor_query(pts: PatchSpacePoints, q) -> int:
    """Index of the point closest to q; ties resolved to the lowest index."""
    return int(_nn_assign(pts.xy, np.asarray(q, dtype=np.float64)
                          .reshape(1, 2))[0])


def grid_cell_centers(res: int = RASTER_RES) -> np.ndarray:
    """(res*res, 2) cell-centered sample positions over [-1,1]^2."""
    coords = -1.0 + (np.arange(res) + 0.5) * (2.0 / res)
    gx, gy = np.meshgrid(coords, coords)  # row-major: row = y
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def _ccw(simplices: np.ndarray, pts: np.ndarray) -> np.ndarray:
    a = pts[simplices[:, 0]]
    b = pts[simplices[:, 1]]
    c = pts[simplices[:, 2]]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - \
          (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
    flipped = simplices.copy()
    neg = det < 0
    flipped[neg, 1], flipped[neg, 2] = simplices[neg, 2], simplices[neg, 1]
    return flipped


class _TriGeom:
    """Per-triangle barycentric transforms over one vertex array."""

    def __init__(self, pts: np.ndarray, triangles: np.ndarray):
        self.triangles = triangles
        self.a = pts[triangles[:, 0]]
        ab = pts[triangles[:, 1]] - self.a
        ac = pts[triangles[:, 2]] - self.a
        self.ab = ab
        self.ac = ac
        det = ab[:, 0] * ac[:, 1] - ab[:, 1] * ac[:, 0]
        det[det == 0] = np.inf  # degenerate slivers never contain cells
        self.inv_det = 1.0 / det

    def bary(self, t: int, pxy: np.ndarray):
        """Barycentric coords (w0,w1,w2) of points pxy in triangle t."""
        px = pxy[..., 0] - self.a[t, 0]
        py = pxy[..., 1] - self.a[t, 1]
        w1 = (px * self.ac[t, 1] - py * self.ac[t, 0]) * self.inv_det[t]
        w2 = (self.ab[t, 0] * py - self.ab[t, 1] * px) * self.inv_det[t]
        return 1.0 - w1 - w2, w1, w2

    def contains(self, t: int, pxy: np.ndarray):
        w0, w1, w2 = self.bary(t, pxy)
        lo, hi = -BARY_TOL, 1.0 + BARY_TOL
        return (w0 >= lo) & (w0 <= hi) & (w1 >= lo) & (w1 <= hi) & \
               (w2 >= lo) & (w2 <= hi)


def _flood_fill(seed: int, t: int, face_flat: np.ndarray, geom: _TriGeom,
                centers: np.ndarray, res: int):
    if face_flat[seed] != -2:
        return
    stack = [seed]
    while stack:
        j = stack.pop()
        if face_flat[j] != -2:
            continue
        if not geom.contains(t, centers[j]):
            continue
        face_flat[j] = t
        y, x = divmod(j, res)
        for dy in (-1, 0, 1):
            ny = y + dy
            if ny < 0 or ny >= res:
                continue
            base = ny * res
            for dx in (-1, 0, 1):
                nx = x + dx
                if nx < 0 or nx >= res or (dx == 0 and dy == 0):
                    continue
                nj = base + nx
                if face_flat[nj] == -2:
                    stack.append(nj)


def _cell_range(lo: float, hi: float, res: int):
    """Grid index span whose cell centers fall inside [lo, hi]."""
    first = int(np.ceil((lo + 1.0) * res / 2.0 - 0.5))
    last = int(np.floor((hi + 1.0) * res / 2.0 - 0.5))
    return max(first, 0), min(last, res - 1)


def interpolate_patch(pts: PatchSpacePoints,
                      res: int = RASTER_RES,
                      key: PatchKey | None = None) -> RawPatch:
    """Rasterize patch-space points into NN and linear heightmaps.

    Follows the centroid-seeded flood fill with a bounding-box second
    pass, removes faces that touch the four NaN padding corners, fills
    the hull interior barycentrically and everything else from the
    nearest neighbor. When a key is given, heights are re-centered so
    the stored c_z equals the model-space height of the linear raster's
    center cell.
    """
    n_real = len(pts.xy)
    if n_real < 1:
        raise EmptyPatch("interpolate_patch requires at least one point")

    centers = grid_cell_centers(res)
    nn_idx = _nn_assign(pts.xy, centers)
    hm_nn = pts.h[nn_idx].reshape(res, res)
    rgb_nn = pts.rgb[nn_idx].reshape(res, res, 3) if pts.rgb is not None \
        else None

    face_flat = np.full(res * res, -2, dtype=np.int32)
    hm_lin = hm_nn.copy()
    rgb_lin = rgb_nn.copy() if rgb_nn is not None else None

    corners = np.array([[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]])
    all_xy = np.vstack([pts.xy, corners])
    try:
        tri = Delaunay(all_xy)
    except QhullError:
        # degenerate input; whole patch falls back to nearest neighbor
        face_flat[:] = -1
        return _finish(pts, key, hm_nn, hm_lin, rgb_nn, rgb_lin, face_flat,
                       res, n_real)

    triangles = _ccw(tri.simplices.astype(np.int64), all_xy)
    geom = _TriGeom(all_xy, triangles)
    n_tri = len(triangles)

    # pass 1: flood fill from the cell nearest each centroid
    for t in range(n_tri):
        cx, cy = all_xy[triangles[t]].mean(axis=0)
        gx = min(max(int(np.round((cx + 1.0) * res / 2.0 - 0.5)), 0), res - 1)
        gy = min(max(int(np.round((cy + 1.0) * res / 2.0 - 0.5)), 0), res - 1)
        _flood_fill(gy * res + gx, t, face_flat, geom, centers, res)

    # pass 2: rescue disconnected cells inside each triangle's bbox
    for t in range(n_tri):
        txy = all_xy[triangles[t]]
        x0, x1 = _cell_range(max(txy[:, 0].min(), -1.0),
                             min(txy[:, 0].max(), 1.0), res)
        y0, y1 = _cell_range(max(txy[:, 1].min(), -1.0),
                             min(txy[:, 1].max(), 1.0), res)
        for gy in range(y0, y1 + 1):
            base = gy * res
            for gx in range(x0, x1 + 1):
                j = base + gx
                if face_flat[j] == -2 and geom.contains(t, centers[j]):
                    _flood_fill(j, t, face_flat, geom, centers, res)

    # padding triangles do not interpolate; their cells fall back to NN
    touches_padding = (triangles >= n_real).any(axis=1)
    covered = face_flat >= 0
    pad_cells = covered & touches_padding[np.where(covered, face_flat, 0)]
    face_flat[pad_cells] = -1
    face_flat[face_flat == -2] = -1  # outside every triangle (shouldn't
    #                                  happen with corner padding, but the
    #                                  contract bans surviving -2 cells)

    inside = np.nonzero(face_flat >= 0)[0]
    if len(inside):
        tids = face_flat[inside]
        a = geom.a[tids]
        ab = geom.ab[tids]
        ac = geom.ac[tids]
        inv_det = geom.inv_det[tids]
        p = centers[inside] - a
        w1 = (p[:, 0] * ac[:, 1] - p[:, 1] * ac[:, 0]) * inv_det
        w2 = (ab[:, 0] * p[:, 1] - ab[:, 1] * p[:, 0]) * inv_det
        w0 = 1.0 - w1 - w2
        v = triangles[tids]
        h = pts.h
        vals = w0 * h[v[:, 0]] + w1 * h[v[:, 1]] + w2 * h[v[:, 2]]
        hm_lin.ravel()[inside] = vals
        if rgb_lin is not None:
            rgbv = pts.rgb
            cvals = (w0[:, None] * rgbv[v[:, 0]] +
                     w1[:, None] * rgbv[v[:, 1]] +
                     w2[:, None] * rgbv[v[:, 2]])
            rgb_lin.reshape(-1, 3)[inside] = cvals

    return _finish(pts, key, hm_nn, hm_lin, rgb_nn, rgb_lin, face_flat,
                   res, n_real)


def _finish(pts, key, hm_nn, hm_lin, rgb_nn, rgb_lin, face_flat, res,
            n_real) -> RawPatch:
    c_z = pts.c_z
    if key is not None:
        shift = float(hm_lin[res // 2, res // 2])
        hm_lin = hm_lin - shift
        hm_nn = hm_nn - shift
        c_z = pts.c_z + shift * PAD_RADIUS
        key = key.with_cz(c_z)
    else:
        key = PatchKey(0, 0, (0.0, 0.0), c_z)
    return RawPatch(
        key=key,
        hm_nn=hm_nn.astype(np.float32),
        hm_lin=hm_lin.astype(np.float32),
        rgb_nn=rgb_nn.astype(np.float32) if rgb_nn is not None else None,
        rgb_lin=rgb_lin.astype(np.float32) if rgb_lin is not None else None,
        face_map=FaceMap(res=res, cells=face_flat.reshape(res, res)),
        chunk_point_count=n_real,
    )


def reconstruct_patch(key: PatchKey, index: ChunkPointIndex,
                      res: int = RASTER_RES) -> RawPatch:
    """gather_and_normalize + interpolate_patch with final re-centering."""
    pts = gather_and_normalize(key, index)
    return interpolate_patch(pts, res=res, key=key)
