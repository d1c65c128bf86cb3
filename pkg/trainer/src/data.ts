/** Manifest + raw-slice loading.
 *
 * The simulator exports datasets as one JSON manifest per volume plus raw
 * little-endian float32 slice files (row-major, HU).  Each manifest passed to
 * the trainer counts as one volume; the last one is the held-out test split.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import type { Manifest, ManifestEntry, SlicePair, TrainConfig } from "./types.js";

export function loadManifest(manifestPath: string): Manifest {
  const raw = JSON.parse(fs.readFileSync(manifestPath, "utf-8")) as Manifest;
  if (!raw.pairs || raw.pairs.length === 0) {
    throw new Error(`manifest ${manifestPath} lists no slice pairs`);
  }
  if (!raw.slice_shape || raw.slice_shape.length !== 2) {
    throw new Error(`manifest ${manifestPath} is missing slice_shape`);
  }
  return raw;
}

export function readRawSlice(filePath: string, rows: number, cols: number): Float32Array {
  const buf = fs.readFileSync(filePath);
  if (buf.byteLength !== rows * cols * 4) {
    throw new Error(`${filePath}: expected ${rows * cols * 4} bytes, got ${buf.byteLength}`);
  }
  const view = new DataView(buf.buffer, buf.byteOffset, buf.byteLength);
  const out = new Float32Array(rows * cols);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getFloat32(4 * i, true);
  }
  return out;
}

export function normalizeHu(values: Float32Array, window: [number, number]): Float32Array {
  const [lo, hi] = window;
  const scale = 2 / (hi - lo);
  const out = new Float32Array(values.length);
  for (let i = 0; i < values.length; i++) {
    out[i] = (values[i] - lo) * scale - 1;
  }
  return out;
}

export function denormalizeHu(values: Float32Array, window: [number, number]): Float32Array {
  const [lo, hi] = window;
  const scale = (hi - lo) / 2;
  const out = new Float32Array(values.length);
  for (let i = 0; i < values.length; i++) {
    out[i] = (values[i] + 1) * scale + lo;
  }
  return out;
}

function loadPairs(manifestPath: string, manifest: Manifest, cfg: TrainConfig, volumeId: number): SlicePair[] {
  const dir = path.dirname(manifestPath);
  const [rows, cols] = manifest.slice_shape;
  const entries = manifest.pairs.filter((e: ManifestEntry) => e.mode === cfg.mode);
  if (entries.length === 0) {
    throw new Error(`manifest ${manifestPath} has no pairs of mode '${cfg.mode}'`);
  }
  return entries.map((entry) => ({
    input: normalizeHu(readRawSlice(path.join(dir, entry.input_path), rows, cols), cfg.normWindowHu),
    label: normalizeHu(readRawSlice(path.join(dir, entry.label_path), rows, cols), cfg.normWindowHu),
    rows,
    cols,
    volumeId,
    entry,
  }));
}

export class Dataset {
  readonly manifests: Manifest[];
  readonly train: SlicePair[];
  readonly test: SlicePair[];
  readonly rows: number;
  readonly cols: number;

  /** Loads every manifest; with two or more, the last volume is held out. */
  constructor(manifestPaths: string[], cfg: TrainConfig) {
    if (manifestPaths.length === 0) throw new Error("no manifests given");
    this.manifests = manifestPaths.map(loadManifest);
    const shapes = new Set(this.manifests.map((m) => m.slice_shape.join("x")));
    if (shapes.size !== 1) {
      throw new Error(`manifests disagree on slice shape: ${[...shapes].join(" vs ")}`);
    }
    [this.rows, this.cols] = this.manifests[0].slice_shape;

    const perVolume = manifestPaths.map((p, i) => loadPairs(p, this.manifests[i], cfg, i));
    if (perVolume.length === 1) {
      this.train = perVolume[0];
      this.test = [];
    } else {
      this.train = perVolume.slice(0, -1).flat();
      this.test = perVolume[perVolume.length - 1];
    }
  }
}

/** Radius (mm) of the physical field of view described by a manifest. */
export function fovRadiusMm(manifest: Manifest): number {
  const g = manifest.geometry;
  const half = (g.det_cols * g.pixel_w_mm) / 2;
  return g.sid_mm * Math.sin(Math.atan(half / g.sdd_mm));
}

/** Boolean mask (rows*cols) of axial-slice pixels outside the FOV circle. */
export function outsideFovMask(manifest: Manifest): Uint8Array {
  const [rows, cols] = manifest.slice_shape;
  const [dx, dy] = manifest.grid.voxel_mm;
  const r2 = fovRadiusMm(manifest) ** 2;
  const mask = new Uint8Array(rows * cols);
  for (let j = 0; j < rows; j++) {
    const y = (j - (rows - 1) / 2) * dy;
    for (let i = 0; i < cols; i++) {
      const x = (i - (cols - 1) / 2) * dx;
      mask[j * cols + i] = x * x + y * y > r2 ? 1 : 0;
    }
  }
  return mask;
}
