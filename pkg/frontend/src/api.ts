/** Thin HTTP client over the server's resource endpoints. */

import {
  DatasetMeta,
  PointBatch,
  WireHeightmap,
  decodeHeightmap,
  decodePointRecords,
} from "./wire.js";

export class ApiClient {
  constructor(readonly baseUrl: string) {}

  private async getBinary(path: string): Promise<ArrayBuffer> {
    const res = await fetch(this.baseUrl + path);
    if (!res.ok) {
      throw new ApiError(res.status, `${path}: HTTP ${res.status}`);
    }
    return res.arrayBuffer();
  }

  async dataset(): Promise<DatasetMeta> {
    const res = await fetch(this.baseUrl + "/api/dataset");
    if (!res.ok) {
      throw new ApiError(res.status, `dataset: HTTP ${res.status}`);
    }
    return (await res.json()) as DatasetMeta;
  }

  async patchStages(): Promise<{ i: number; j: number; stage: number }[]> {
    const res = await fetch(this.baseUrl + "/api/patches");
    if (!res.ok) {
      throw new ApiError(res.status, `patches: HTTP ${res.status}`);
    }
    return (await res.json()).patches;
  }

  async chunkPoints(bbox?: [number, number, number, number]):
      Promise<PointBatch> {
    const qs = bbox ? `?bbox=${bbox.join(",")}` : "";
    return decodePointRecords(await this.getBinary(`/api/chunkpoints${qs}`));
  }

  /** null while the patch has no reconstruction yet (HTTP 409). */
  async patch(i: number, j: number): Promise<WireHeightmap | null> {
    const res = await fetch(`${this.baseUrl}/api/patch/${i}/${j}`);
    if (res.status === 409) {
      return null;
    }
    if (!res.ok) {
      throw new ApiError(res.status, `patch ${i},${j}: HTTP ${res.status}`);
    }
    return decodeHeightmap(await res.arrayBuffer());
  }

  async tileChunk(tileId: number, chunk: number): Promise<PointBatch> {
    return decodePointRecords(
      await this.getBinary(`/api/tile/${tileId}/points?chunk=${chunk}`),
    );
  }

  viewpointSocketUrl(): string {
    return this.baseUrl.replace(/^http/, "ws") + "/api/viewpoint";
  }
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
  }
}
