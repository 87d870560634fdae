"""Sample store construction: scans -> simulated chunk points -> samples.

Store layout: one .npz per sample (hm_nn, hm_lin, rgb_nn, rgb_lin,
gt_hm, gt_rgb, center, c_z) plus split.json listing train/test sample
files, split at the 70th percentile of center x coordinates.
"""

from __future__ import annotations

import glob
import json
import logging
import os

import numpy as np

from .inputs import PATCH_SIZE, build_sample
from .lasread import read_las

log = logging.getLogger(__name__)

DEFAULT_RATE = 1.0 / 50_000


def load_scans(data_dirs: list[str]):
    paths = []
    for d in data_dirs:
        paths.extend(sorted(glob.glob(os.path.join(d, "*.las"))))
    if not paths:
        raise FileNotFoundError(f"no .las scans under {data_dirs}")
    scans = [read_las(p) for p in paths]
    xyz = np.concatenate([s.xyz for s in scans])
    if all(s.rgb is not None for s in scans):
        rgb = np.concatenate([s.rgb for s in scans])
    else:
        rgb = None
    return xyz, rgb


def subsample(xyz, rgb, rate: float, seed: int, mode: str = "random"):
    """Chunk-point simulation: independent selection, or every Nth point
    (stride mode mirrors real chunk starts in uncompressed files)."""
    if mode == "stride":
        step = max(1, int(round(1.0 / rate)))
        idx = np.arange(0, len(xyz), step)
    else:
        rng = np.random.default_rng(seed)
        idx = np.nonzero(rng.random(len(xyz)) < rate)[0]
    return xyz[idx], (rgb[idx] if rgb is not None else None)


def pick_centers(xyz, n_centers: int, seed: int):
    """Patch centers chosen randomly from the point cloud itself."""
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(xyz), size=min(n_centers * 4, len(xyz)),
                     replace=False)
    centers = []
    seen = set()
    for i in idx:
        cx, cy = xyz[i, 0], xyz[i, 1]
        key = (round(cx / 80), round(cy / 80))  # avoid near-duplicates
        if key in seen:
            continue
        seen.add(key)
        centers.append((float(cx), float(cy)))
        if len(centers) >= n_centers:
            break
    return centers


def split_by_x(centers: list[tuple]) -> tuple[list[int], list[int]]:
    xs = np.array([c[0] for c in centers])
    p70 = np.percentile(xs, 70)
    train = [i for i, x in enumerate(xs) if x < p70]
    test = [i for i in range(len(xs)) if i not in set(train)]
    if not train or not test:
        log.warning("degenerate x split; all samples go to train")
        return list(range(len(xs))), []
    return train, test


def build_dataset(data_dirs: list[str], n_centers: int, out_dir: str,
                  rate: float = DEFAULT_RATE, seed: int = 0,
                  mode: str = "random") -> dict:
    """Build and persist the sample store; returns the split manifest."""
    os.makedirs(out_dir, exist_ok=True)
    xyz, rgb = load_scans(data_dirs)
    sub_xyz, sub_rgb = subsample(xyz, rgb, rate, seed, mode)
    log.info("simulated %d chunk points from %d full-res points",
             len(sub_xyz), len(xyz))
    centers = pick_centers(xyz, n_centers, seed + 1)
    samples = []
    kept_centers = []
    for ci, center in enumerate(centers):
        cx, cy = center
        half = PATCH_SIZE / 2 + 10
        near = (np.abs(xyz[:, 0] - cx) <= half) & \
               (np.abs(xyz[:, 1] - cy) <= half)
        sample = build_sample(xyz[near],
                              rgb[near] if rgb is not None else None,
                              sub_xyz, sub_rgb, center)
        if sample is None:
            continue
        name = f"sample_{ci:05d}.npz"
        arrays = {
            "hm_nn": sample.hm_nn, "hm_lin": sample.hm_lin,
            "gt_hm": sample.gt_hm,
            "center": np.array(sample.center), "c_z": np.array(sample.c_z),
            "chunk_points": np.array(sample.chunk_point_count),
        }
        if sample.rgb_nn is not None:
            arrays["rgb_nn"] = sample.rgb_nn
            arrays["rgb_lin"] = sample.rgb_lin
        if sample.gt_rgb is not None:
            arrays["gt_rgb"] = sample.gt_rgb
        np.savez(os.path.join(out_dir, name), **arrays)
        samples.append(name)
        kept_centers.append(center)
    train_idx, test_idx = split_by_x(kept_centers)
    manifest = {
        "rate": rate, "seed": seed, "mode": mode,
        "train": [samples[i] for i in train_idx],
        "test": [samples[i] for i in test_idx],
    }
    with open(os.path.join(out_dir, "split.json"), "w") as fp:
        json.dump(manifest, fp, indent=2)
    return manifest


def load_sample(path: str):
    """One stored sample -> (inputs (8,96,96), target (4,64,64), mask)."""
    with np.load(path) as z:
        inputs = np.zeros((8, 96, 96), dtype=np.float32)
        inputs[0] = z["hm_nn"]
        inputs[1] = z["hm_lin"]
        has_rgb = "rgb_nn" in z.files
        if has_rgb:
            inputs[2:5] = z["rgb_nn"].transpose(2, 0, 1)
            inputs[5:8] = z["rgb_lin"].transpose(2, 0, 1)
        target = np.zeros((4, 64, 64), dtype=np.float32)
        mask = np.zeros((4, 64, 64), dtype=np.float32)
        gt_hm = z["gt_hm"]
        valid = ~np.isnan(gt_hm)
        target[0][valid] = gt_hm[valid]
        mask[0] = valid
        if "gt_rgb" in z.files and has_rgb:
            gt_rgb = z["gt_rgb"].transpose(2, 0, 1)
            cvalid = ~np.isnan(gt_rgb)
            target[1:4][cvalid] = gt_rgb[cvalid]
            mask[1:4] = cvalid
    return inputs, target, mask


def load_store(store_dir: str, which: str):
    with open(os.path.join(store_dir, "split.json")) as fp:
        manifest = json.load(fp)
    files = [os.path.join(store_dir, n) for n in manifest[which]]
    triples = [load_sample(p) for p in files]
    if not triples:
        return (np.zeros((0, 8, 96, 96), np.float32),
                np.zeros((0, 4, 64, 64), np.float32),
                np.zeros((0, 4, 64, 64), np.float32))
    return (np.stack([t[0] for t in triples]),
            np.stack([t[1] for t in triples]),
            np.stack([t[2] for t in triples]))
