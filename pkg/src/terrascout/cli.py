"""Command line entry points: inspect, patch, render, eval, serve, synth."""

from __future__ import annotations

import glob
import os
import sys

import click
import numpy as np


@click.group()
def main():
    """Explore massive LAS/LAZ terrain scans without preprocessing."""


@main.command()
@click.argument("file", type=click.Path(exists=True))
def inspect(file):
    """Print header fields, chunk count, and first/last chunk offsets."""
    from .lasio import ensure_chunk_refs, scan_tile

    tile = scan_tile(file, 0)
    h = tile.header
    click.echo(f"file: {file}")
    click.echo(f"version: {h.version[0]}.{h.version[1]}")
    click.echo(f"compressed: {'yes' if h.is_compressed else 'no'}")
    click.echo(f"point_format: {h.point_record_format}")
    click.echo(f"record_length: {h.point_record_length}")
    click.echo(f"point_count: {h.point_count}")
    click.echo(f"scale: {h.scale[0]} {h.scale[1]} {h.scale[2]}")
    click.echo(f"offset: {h.offset[0]} {h.offset[1]} {h.offset[2]}")
    click.echo(f"bbox_min: {h.bbox_min[0]} {h.bbox_min[1]} {h.bbox_min[2]}")
    click.echo(f"bbox_max: {h.bbox_max[0]} {h.bbox_max[1]} {h.bbox_max[2]}")
    click.echo(f"colors: {'yes' if h.color_channels_present else 'no'}")
    refs = ensure_chunk_refs(tile)
    click.echo(f"chunks: {len(refs)}")
    if refs:
        click.echo(f"first_chunk_offset: {refs[0].byte_offset}")
        click.echo(f"last_chunk_offset: {refs[-1].byte_offset}")


def _scan_dir(dataset_dir):
    from .engine import Dataset

    paths = sorted(glob.glob(os.path.join(dataset_dir, "*.las")) +
                   glob.glob(os.path.join(dataset_dir, "*.laz")))
    if not paths:
        click.echo(f"no .las/.laz files under {dataset_dir}", err=True)
        sys.exit(1)
    return Dataset.scan(paths)


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.argument("i", type=int)
@click.argument("j", type=int)
@click.option("--dump", type=click.Path(), default=None,
              help="directory for binary rasters + PNG previews")
def patch(dataset, i, j, dump):
    """Reconstruct one patch and optionally dump its rasters."""
    from .engine import ScoutEngine
    from .errors import EmptyPatch
    from .patches import reconstruct_patch

    engine = ScoutEngine(_scan_dir(dataset))
    engine.load_overview()
    if not engine.grid.contains(i, j):
        click.echo(f"patch ({i},{j}) outside grid "
                   f"{engine.grid.ni}x{engine.grid.nj}", err=True)
        sys.exit(1)
    key = engine.grid.key(i, j)
    try:
        raw = reconstruct_patch(key, engine.index)
    except EmptyPatch:
        click.echo("patch has no chunk points")
        sys.exit(2)
    click.echo(f"chunk_points: {raw.chunk_point_count}")
    click.echo(f"c_z: {raw.key.c_z:.3f}")
    click.echo(f"hm_lin range: [{raw.hm_lin.min():.4f}, "
               f"{raw.hm_lin.max():.4f}] (patch space)")
    if dump:
        dump_raw_patch(raw, dump)
        click.echo(f"rasters written to {dump}")


def dump_raw_patch(raw, out_dir):
    """f32/i32 row-major little-endian rasters plus PNG previews."""
    from PIL import Image

    os.makedirs(out_dir, exist_ok=True)
    raw.hm_nn.astype("<f4").tofile(os.path.join(out_dir, "hm_nn.f32"))
    raw.hm_lin.astype("<f4").tofile(os.path.join(out_dir, "hm_lin.f32"))
    raw.face_map.cells.astype("<i4").tofile(
        os.path.join(out_dir, "face_map.i32"))
    if raw.rgb_nn is not None:
        raw.rgb_nn.astype("<f4").tofile(os.path.join(out_dir, "rgb_nn.f32"))
        raw.rgb_lin.astype("<f4").tofile(
            os.path.join(out_dir, "rgb_lin.f32"))
    for name, hm in (("hm_nn", raw.hm_nn), ("hm_lin", raw.hm_lin)):
        lo, hi = float(hm.min()), float(hm.max())
        norm = (hm - lo) / (hi - lo) if hi > lo else np.zeros_like(hm)
        Image.fromarray((norm * 255).astype(np.uint8), "L").save(
            os.path.join(out_dir, f"{name}.png"))
    if raw.rgb_lin is not None:
        Image.fromarray(
            np.clip(raw.rgb_lin * 255, 0, 255).astype(np.uint8),
            "RGB").save(os.path.join(out_dir, "rgb_lin.png"))


@main.command()
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--camera", default=None,
              help="x,y,z,yaw_deg,pitch_deg (default: fitted overview)")
@click.option("--size", default="1280x720", help="WxH pixels")
@click.option("--out", "out_path", default="render.png",
              type=click.Path())
@click.option("--weights", type=click.Path(exists=True), default=None)
def render(dataset, camera, size, out_path, weights):
    """Headless snapshot: chunk points + reconstructed heightmaps."""
    from .engine import ScoutEngine, Stage
    from .geometry import CameraState, fit_overview
    from .refiner import load_weights
    from .render import (Framebuffer, rasterize_heightmaps,
                         rasterize_points, resolve, save_png)

    w, h = (int(v) for v in size.lower().split("x"))
    bundle = load_weights(weights) if weights else None
    engine = ScoutEngine(_scan_dir(dataset), weights=bundle)
    engine.load_overview()
    if camera:
        x, y, z, yaw, pitch = (float(v) for v in camera.split(","))
        cam = CameraState.from_yaw_pitch(
            (x, y, z), np.deg2rad(yaw), np.deg2rad(pitch),
            np.deg2rad(60), (w, h), near=0.5,
            far=float(np.linalg.norm(
                engine.dataset.bbox_max - engine.dataset.bbox_min)) * 4)
    else:
        cam = fit_overview(engine.dataset.bbox_min,
                           engine.dataset.bbox_max, (w, h))
    engine.update_viewpoint(cam)
    engine.run_until_idle()

    fb = Framebuffer(w, h)
    with engine.lock:
        ready = [p for (i, j), p in engine.refined.items()
                 if engine.patches[(i, j)].stage >= Stage.INTERPOLATED]
        pending = [pid for pid, s in engine.patches.items()
                   if s.stage < Stage.INTERPOLATED]
    if pending:
        xyz, rgb = engine.index.all_points()
        rasterize_points(xyz, rgb, cam, fb)
    rasterize_heightmaps(ready, cam, fb)
    save_png(out_path, resolve(fb))
    click.echo(f"wrote {out_path} ({len(ready)} heightmaps)")


@main.command("eval")
@click.argument("dataset", type=click.Path(exists=True))
@click.option("--methods", default="linear,nn,cubic,hqsplat,refined")
@click.option("--patches", "n_patches", default=20, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--rate", default=1.0 / 50_000, type=float,
              help="chunk-point simulation rate")
@click.option("--weights", type=click.Path(exists=True), default=None)
@click.option("--out", "out_path", default="report.csv",
              type=click.Path())
def eval_cmd(dataset, methods, n_patches, seed, rate, weights, out_path):
    """Compare reconstruction methods against full-resolution truth."""
    from .evalkit import evaluate_dataset, write_report
    from .refiner import load_weights

    ds = _scan_dir(dataset)
    bundle = load_weights(weights) if weights else None
    rows = evaluate_dataset(ds, methods.split(","), n_patches=n_patches,
                            seed=seed, rate=rate, weights=bundle,
                            name=os.path.basename(dataset.rstrip("/")))
    write_report(out_path, rows)
    for row in rows:
        click.echo(f"{row.method:8s} rmse {row.rmse_mean:8.3f}±"
                   f"{row.rmse_std:6.3f} m  psnr {row.psnr_mean:6.2f}±"
                   f"{row.psnr_std:5.2f} dB  (n={row.n})")
    click.echo(f"wrote {out_path}")


@main.command()
@click.argument("dataset_dir", type=click.Path(exists=True))
@click.option("--port", default=8731, type=int)
@click.option("--host", default="127.0.0.1")
@click.option("--weights", type=click.Path(exists=True), default=None)
@click.option("--config", "config_path", type=click.Path(exists=True),
              default=None)
def serve(dataset_dir, port, host, weights, config_path):
    """Serve the dataset to browser clients."""
    from .server import serve as run_server

    run_server(dataset_dir, port=port, weights_path=weights,
               config_path=config_path, host=host)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--tiles", default=9, type=int)
@click.option("--points", default=20_000, type=int,
              help="points per tile")
@click.option("--format", "point_format", default=2, type=int)
@click.option("--chunk-size", default=512, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--las", is_flag=True, help="write uncompressed LAS")
def synth(out_dir, tiles, points, point_format, chunk_size, seed, las):
    """Generate a synthetic fractal-terrain corpus."""
    from .synth import generate_corpus

    manifest = generate_corpus(out_dir, n_tiles=tiles,
                               points_per_tile=points, seed=seed,
                               point_format=point_format,
                               chunk_size=chunk_size,
                               compressed=not las)
    click.echo(f"wrote {len(manifest['tiles'])} tiles to {out_dir}")


if __name__ == "__main__":
    main()
