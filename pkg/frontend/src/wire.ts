/**
 * Binary payload decoding per the server's docs/wire.md.
 * All values little-endian.
 */

export const OUTPUT_RES = 64;
export const PATCH_SIZE = 640;
export const TEXEL_SIZE = 10;

export const POINT_RECORD_BYTES = 15;
export const HEIGHTMAP_HEADER_BYTES = 14;
export const HEIGHTS_BYTES = OUTPUT_RES * OUTPUT_RES * 4;
export const COLORS_BYTES = OUTPUT_RES * OUTPUT_RES * 3;

export enum Stage {
  Empty = 0,
  ChunkPointsOnly = 1,
  Interpolated = 2,
  Refined = 3,
  FullResBaked = 4,
}

export interface PointBatch {
  count: number;
  positions: Float32Array; // xyz interleaved
  colors: Uint8Array; // rgb interleaved
}

export interface WireHeightmap {
  i: number;
  j: number;
  cZ: number;
  stage: Stage;
  hasColors: boolean;
  /** meters relative to cZ, row-major (row = y) */
  heights: Float32Array;
  colors: Uint8Array | null;
}

export function decodePointRecords(buf: ArrayBuffer): PointBatch {
  if (buf.byteLength % POINT_RECORD_BYTES !== 0) {
    throw new Error(
      `point stream length ${buf.byteLength} is not a multiple of ` +
        `${POINT_RECORD_BYTES}`,
    );
  }
  const count = buf.byteLength / POINT_RECORD_BYTES;
  const view = new DataView(buf);
  const positions = new Float32Array(count * 3);
  const colors = new Uint8Array(count * 3);
  for (let n = 0; n < count; n++) {
    const off = n * POINT_RECORD_BYTES;
    positions[n * 3] = view.getFloat32(off, true);
    positions[n * 3 + 1] = view.getFloat32(off + 4, true);
    positions[n * 3 + 2] = view.getFloat32(off + 8, true);
    colors[n * 3] = view.getUint8(off + 12);
    colors[n * 3 + 1] = view.getUint8(off + 13);
    colors[n * 3 + 2] = view.getUint8(off + 14);
  }
  return { count, positions, colors };
}

export function decodeHeightmap(buf: ArrayBuffer): WireHeightmap {
  const view = new DataView(buf);
  if (buf.byteLength < HEIGHTMAP_HEADER_BYTES + HEIGHTS_BYTES) {
    throw new Error(`heightmap payload too short: ${buf.byteLength}`);
  }
  const i = view.getInt32(0, true);
  const j = view.getInt32(4, true);
  const cZ = view.getFloat32(8, true);
  const stage = view.getUint8(12) as Stage;
  const flags = view.getUint8(13);
  const hasColors = (flags & 1) !== 0;
  const expected =
    HEIGHTMAP_HEADER_BYTES + HEIGHTS_BYTES + (hasColors ? COLORS_BYTES : 0);
  if (buf.byteLength !== expected) {
    throw new Error(
      `heightmap payload is ${buf.byteLength} bytes, expected ${expected}`,
    );
  }
  // byte offset 14 is not 4-aligned; copy through a DataView
  const heights = new Float32Array(OUTPUT_RES * OUTPUT_RES);
  for (let n = 0; n < heights.length; n++) {
    heights[n] = view.getFloat32(HEIGHTMAP_HEADER_BYTES + n * 4, true);
  }
  let colors: Uint8Array | null = null;
  if (hasColors) {
    colors = new Uint8Array(
      buf.slice(HEIGHTMAP_HEADER_BYTES + HEIGHTS_BYTES, expected),
    );
  }
  return { i, j, cZ, stage, hasColors, heights, colors };
}

export interface DatasetMeta {
  bbox_min: [number, number, number];
  bbox_max: [number, number, number];
  tile_count: number;
  patch_grid: {
    origin: [number, number];
    ni: number;
    nj: number;
    patch_size: number;
    output_res: number;
  };
  chunk_point_total: number;
  progress: { chunk_points: number; interpolated: number; refined: number };
  tiles: {
    id: number;
    name: string;
    bbox_min: [number, number, number];
    bbox_max: [number, number, number];
    point_count: number;
    chunks: number;
  }[];
}

export interface CameraMessage {
  position: [number, number, number];
  direction: [number, number, number];
  fov_y: number;
  viewport: [number, number];
  near: number;
  far: number;
}

export interface ReadyEvent {
  i: number;
  j: number;
  stage: Stage;
}
