"""Ground truth, metrics, and baseline reconstructors for method comparison.

Ground truth is the per-texel mean of all full-resolution points on the
64x64 output footprint (NaN where nothing falls); chunk points are
simulated by independent per-point selection. RMSE is reported in
meters over non-NaN texels, PSNR in dB against a peak of 1.0 on
normalized colors (identical predictions are capped at 99 dB).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CloughTocher2DInterpolator
from scipy.spatial import QhullError

from .errors import DegenerateTriangulation
from .patches import (OUTPUT_RES, PAD_RADIUS, PATCH_SIZE, RASTER_RES,
                      TEXEL_SIZE, PatchKey, PatchSpacePoints, _nn_assign,
                      interpolate_patch)
from .refiner import WeightBundle, identity_descriptor, refine_batch

log = logging.getLogger(__name__)

DEFAULT_RATE = 1.0 / 50_000
PSNR_CAP = 99.0

CROP = (RASTER_RES - OUTPUT_RES) // 2
# patch-space extent of the 64x64 output region
OUT_HALF = OUTPUT_RES / RASTER_RES  # 2/3


@dataclass
class GtPatch:
    key: PatchKey
    hm: np.ndarray                 # (64,64) float64 meters, NaN = no data
    rgb: np.ndarray | None         # (64,64,3) float32, NaN-masked like hm


@dataclass
class EvalRow:
    dataset: str
    method: str
    rmse_mean: float
    rmse_std: float
    psnr_mean: float
    psnr_std: float
    n: int


def make_ground_truth(xyz: np.ndarray, rgb: np.ndarray | None,
                      key: PatchKey) -> GtPatch:
    """Per-texel means over the patch's 64x64 output footprint."""
    res = OUTPUT_RES
    x0 = key.center[0] - PATCH_SIZE / 2
    y0 = key.center[1] - PATCH_SIZE / 2
    ix = np.floor((xyz[:, 0] - x0) / TEXEL_SIZE).astype(np.int64)
    iy = np.floor((xyz[:, 1] - y0) / TEXEL_SIZE).astype(np.int64)
    mask = (ix >= 0) & (ix < res) & (iy >= 0) & (iy < res)
    flat = iy[mask] * res + ix[mask]
    counts = np.bincount(flat, minlength=res * res)
    hm = np.full(res * res, np.nan)
    covered = counts > 0
    sums = np.bincount(flat, weights=xyz[mask, 2], minlength=res * res)
    hm[covered] = sums[covered] / counts[covered]
    out_rgb = None
    if rgb is not None:
        out_rgb = np.full((res * res, 3), np.nan, dtype=np.float32)
        for c in range(3):
            csum = np.bincount(flat, weights=rgb[mask, c],
                               minlength=res * res)
            out_rgb[covered, c] = csum[covered] / counts[covered]
        out_rgb = out_rgb.reshape(res, res, 3)
    return GtPatch(key=key, hm=hm.reshape(res, res), rgb=out_rgb)


def subsample_mask(n: int, rate: float,
                   rng: np.random.Generator) -> np.ndarray:
    """Independent keep/drop decisions, one per point."""
    return rng.random(n) < rate


def simulate_chunk_points(xyz: np.ndarray, rgb: np.ndarray | None = None,
                          rate: float = DEFAULT_RATE, seed: int = 0):
    """Random 1-in-50000 selection emulating LAZ chunk points."""
    rng = np.random.default_rng(seed)
    mask = subsample_mask(len(xyz), rate, rng)
    return xyz[mask], (rgb[mask] if rgb is not None else None)


def split_centers(centers: list[PatchKey]):
    """Train/test split at the 70th percentile of center x coordinates."""
    if len(centers) < 2:
        raise ValueError("need at least 2 centers to split")
    xs = np.array([k.center[0] for k in centers])
    p70 = np.percentile(xs, 70)
    train_mask = xs < p70
    if not train_mask.any() or train_mask.all():
        log.warning("degenerate x distribution: all centers go to train")
        train_mask[:] = True
    train = [k for k, m in zip(centers, train_mask) if m]
    test = [k for k, m in zip(centers, train_mask) if not m]
    return train, test


def rmse(pred_hm: np.ndarray, gt: GtPatch) -> float:
    """Height error in meters over non-NaN ground-truth texels."""
    if pred_hm.shape != gt.hm.shape:
        raise ValueError("resolution mismatch")
    mask = ~np.isnan(gt.hm)
    if not mask.any():
        return float("nan")
    diff = pred_hm[mask] - gt.hm[mask]
    return float(np.sqrt(np.mean(diff ** 2)))


def psnr(pred_rgb: np.ndarray, gt: GtPatch) -> float:
    """Color fidelity in dB (peak 1.0); exact matches cap at 99 dB."""
    if gt.rgb is None:
        return float("nan")
    if pred_rgb.shape != gt.rgb.shape:
        raise ValueError("resolution mismatch")
    mask = ~np.isnan(gt.rgb)
    if not mask.any():
        return float("nan")
    mse = float(np.mean((pred_rgb[mask] - gt.rgb[mask]) ** 2))
    if mse == 0:
        return PSNR_CAP
    return min(PSNR_CAP, float(10.0 * np.log10(1.0 / mse)))


def _output_grid():
    """Patch-space centers of the 64x64 output texels."""
    step = 2.0 / RASTER_RES
    coords = -1.0 + (np.arange(CROP, CROP + OUTPUT_RES) + 0.5) * step
    gx, gy = np.meshgrid(coords, coords)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def baseline_linear_nn(pts: PatchSpacePoints, key: PatchKey):
    """Linear and NN rasters via the production interpolation, cropped."""
    raw = interpolate_patch(pts, key=key)
    sl = slice(CROP, CROP + OUTPUT_RES)
    lin = raw.hm_lin[sl, sl].astype(np.float64) * PAD_RADIUS + raw.key.c_z
    nn = raw.hm_nn[sl, sl].astype(np.float64) * PAD_RADIUS + raw.key.c_z
    lin_rgb = raw.rgb_lin[sl, sl] if raw.rgb_lin is not None else None
    nn_rgb = raw.rgb_nn[sl, sl] if raw.rgb_nn is not None else None
    return {"linear": (lin, lin_rgb), "nn": (nn, nn_rgb)}, raw


def baseline_cubic(pts: PatchSpacePoints, key: PatchKey):
    """C1 Clough-Tocher inside the hull, nearest neighbor outside."""
    grid = _output_grid()
    nn_idx = _nn_assign(pts.xy, grid)
    h = pts.h[nn_idx]
    rgb = pts.rgb[nn_idx] if pts.rgb is not None else None
    if len(pts.xy) >= 3:
        try:
            interp = CloughTocher2DInterpolator(pts.xy, pts.h)
            vals = interp(grid)
            inside = ~np.isnan(vals)
            h = np.where(inside, vals, h)
            if rgb is not None:
                cint = CloughTocher2DInterpolator(pts.xy, pts.rgb)
                cvals = cint(grid)
                rgb = np.where(np.isnan(cvals), rgb, cvals)
        except QhullError as exc:
            raise DegenerateTriangulation(str(exc)) from exc
    hm = (h * PAD_RADIUS + pts.c_z).reshape(OUTPUT_RES, OUTPUT_RES)
    out_rgb = None
    if rgb is not None:
        out_rgb = np.clip(rgb, 0, 1).reshape(
            OUTPUT_RES, OUTPUT_RES, 3).astype(np.float32)
    return hm, out_rgb


HQSPLAT_RADIUS_TEXELS = 3.0
HQSPLAT_SIGMA_TEXELS = 1.0


def baseline_hqsplat(pts: PatchSpacePoints, key: PatchKey):
    """Fixed-radius Gaussian splats; uncovered texels fall back to NN."""
    grid = _output_grid()
    texel = 2.0 / RASTER_RES
    radius = HQSPLAT_RADIUS_TEXELS * texel
    sigma = HQSPLAT_SIGMA_TEXELS * texel
    d2 = ((grid[:, None, :] - pts.xy[None, :, :]) ** 2).sum(axis=2)
    w = np.exp(-d2 / (2 * sigma * sigma))
    w[d2 > radius * radius] = 0.0
    wsum = w.sum(axis=1)
    covered = wsum > 0
    h = np.empty(len(grid))
    h[covered] = (w[covered] @ pts.h) / wsum[covered]
    rgb = None
    if pts.rgb is not None:
        rgb = np.empty((len(grid), 3), dtype=np.float32)
        rgb[covered] = (w[covered] @ pts.rgb) / wsum[covered, None]
    if not covered.all():
        nn_idx = _nn_assign(pts.xy, grid[~covered])
        h[~covered] = pts.h[nn_idx]
        if rgb is not None:
            rgb[~covered] = pts.rgb[nn_idx]
    hm = (h * PAD_RADIUS + pts.c_z).reshape(OUTPUT_RES, OUTPUT_RES)
    if rgb is not None:
        rgb = np.clip(rgb, 0, 1).reshape(OUTPUT_RES, OUTPUT_RES, 3)
    return hm, rgb


def method_rasters(pts: PatchSpacePoints, key: PatchKey,
                   methods: list[str],
                   weights: WeightBundle | None = None) -> dict:
    """Evaluate reconstruction methods on one patch's chunk points.

    Returns {method: (heights_m (64,64), rgb or None)}.
    """
    out = {}
    needs_raw = {"linear", "nn", "refined"} & set(methods)
    raw = None
    if needs_raw:
        linnn, raw = baseline_linear_nn(pts, key)
        for name in ("linear", "nn"):
            if name in methods:
                out[name] = linnn[name]
    if "cubic" in methods:
        out["cubic"] = baseline_cubic(pts, key)
    if "hqsplat" in methods:
        out["hqsplat"] = baseline_hqsplat(pts, key)
    if "refined" in methods:
        bundle = weights or WeightBundle(1, {}, identity_descriptor())
        rp = refine_batch([raw], bundle)[0]
        out["refined"] = (rp.hm, rp.rgb)
    return out


def evaluate_dataset(ds, methods: list[str], n_patches: int = 20,
                     seed: int = 0, rate: float = DEFAULT_RATE,
                     weights: WeightBundle | None = None,
                     name: str = "dataset") -> list[EvalRow]:
    """Full pipeline comparison on one (desk-scale) dataset.

    Loads every tile at full resolution for ground truth, simulates
    chunk points at the given rate, and scores each method on up to
    n_patches seeded-random occupied patches.
    """
    from .errors import EmptyPatch
    from .lasio import colors as rec_colors
    from .lasio import load_tile_fullres
    from .lasio import positions as rec_positions
    from .patches import ChunkPointIndex, gather_and_normalize, \
        patch_grid_for

    xyz_parts = []
    rgb_parts = []
    for tile in ds.tiles:
        rec = load_tile_fullres(tile)
        xyz_parts.append(rec_positions(rec, tile.header))
        rgb_parts.append(rec_colors(rec, tile.header))
    xyz = np.concatenate(xyz_parts)
    has_rgb = all(c is not None for c in rgb_parts)
    rgb = np.concatenate(rgb_parts) if has_rgb else None

    sim_xyz, sim_rgb = simulate_chunk_points(xyz, rgb, rate=rate, seed=seed)
    index = ChunkPointIndex()
    index.add_points(sim_xyz, sim_rgb)

    rng = np.random.default_rng(seed + 1)
    grid = patch_grid_for(ds.bbox_min, ds.bbox_max)
    keys = grid.keys()
    order = rng.permutation(len(keys))
    scores = {m: ([], []) for m in methods}
    used = 0
    for idx in order:
        if used >= n_patches:
            break
        key = keys[idx]
        gt = make_ground_truth(xyz, rgb, key)
        if np.isnan(gt.hm).all():
            continue
        try:
            pts = gather_and_normalize(key, index)
        except EmptyPatch:
            continue
        rasters = method_rasters(pts, key, methods, weights)
        for m, (hm, mrgb) in rasters.items():
            scores[m][0].append(rmse(hm, gt))
            scores[m][1].append(psnr(mrgb, gt)
                                if mrgb is not None else float("nan"))
        used += 1
    return [aggregate(name, m, rs, ps) for m, (rs, ps) in scores.items()]


def write_report(path: str, rows: list[EvalRow]):
    with open(path, "w", newline="") as fp:
        writer = csv.writer(fp)
        writer.writerow(["dataset", "method", "rmse_mean", "rmse_std",
                         "psnr_mean", "psnr_std", "n"])
        for row in rows:
            writer.writerow([row.dataset, row.method,
                             f"{row.rmse_mean:.6f}", f"{row.rmse_std:.6f}",
                             f"{row.psnr_mean:.4f}", f"{row.psnr_std:.4f}",
                             row.n])


def aggregate(dataset: str, method: str, rmses: list[float],
              psnrs: list[float]) -> EvalRow:
    rm = np.array([r for r in rmses if not np.isnan(r)])
    ps = np.array([p for p in psnrs if not np.isnan(p)])
    return EvalRow(
        dataset=dataset, method=method,
        rmse_mean=float(rm.mean()) if len(rm) else float("nan"),
        rmse_std=float(rm.std()) if len(rm) else float("nan"),
        psnr_mean=float(ps.mean()) if len(ps) else float("nan"),
        psnr_std=float(ps.std()) if len(ps) else float("nan"),
        n=len(rm))
