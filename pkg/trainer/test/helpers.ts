/** Test fixtures: synthetic in-memory datasets and a cached toy dataset
 * generated end-to-end by the simulator pipeline. */

import { execFileSync } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";
import { fileURLToPath } from "node:url";

import type { Manifest } from "../src/types.js";

const HERE = path.dirname(fileURLToPath(import.meta.url));
export const TESTDATA = path.resolve(HERE, "..", ".testdata");

const TINY_GEOMETRY = {
  sdd_mm: 600.0,
  sid_mm: 350.0,
  det_cols: 36,
  det_rows: 32,
  virt_cols: 96,
  pixel_w_mm: 5.0,
  pixel_h_mm: 5.0,
  angular_range_deg: 200.0,
  angular_step_deg: 5.0,
  start_angle_deg: 0.0,
};

function ribRingConfig(nRibs: number, ringRadius: number): object {
  const primitives: object[] = [
    { kind: "cylinder", center_mm: [0, 0, 0], radius_mm: 70.0, height_mm: 120.0, value_hu: 1000.0, axis: "z" },
  ];
  for (let k = 0; k < nRibs; k++) {
    const a = (2 * Math.PI * k) / nRibs;
    primitives.push({
      kind: "cylinder",
      center_mm: [ringRadius * Math.cos(a), ringRadius * Math.sin(a), 0.0],
      radius_mm: 5.0,
      height_mm: 100.0,
      value_hu: 1000.0,
      axis: "z",
    });
  }
  const grid = { dims: [48, 48, 48], voxel_mm: [4.0, 4.0, 4.0], offset_mm: [0.0, 0.0, 0.0] };
  return {
    geometry: TINY_GEOMETRY,
    phantom: { primitives, grid, supersample: 1 },
    noise: { enabled: false },
    recon: {
      extrapolation: "wce",
      filter_kind: "ram-lak",
      redundancy: "parker",
      grid_dims: grid.dims,
      grid_voxel_mm: grid.voxel_mm,
      mu_water: 0.0193,
      parker_fan: "physical",
    },
    dataprep: {
      modes: ["conventional", "task-specific"],
      soi_threshold_hu: 150.0,
      export: { axis: "axial", slice_min: 19, slice_max: 29 },
    },
    metrics: { threshold_hu: 150.0 },
  };
}

/** Generates (once) two rib-ring volumes via the simulator CLI and returns
 * their manifest paths: 10 slice pairs per volume and per preparation mode. */
export function makeToyDatasets(): string[] {
  const volumes: Array<[string, number, number]> = [
    ["volA", 6, 60.0],
    ["volB", 5, 64.0],
  ];
  const manifests: string[] = [];
  for (const [name, nRibs, ringRadius] of volumes) {
    const outDir = path.join(TESTDATA, name);
    const manifest = path.join(outDir, "slices", "manifest.json");
    if (!fs.existsSync(manifest)) {
      fs.mkdirSync(outDir, { recursive: true });
      const cfgPath = path.join(outDir, "config.json");
      fs.writeFileSync(cfgPath, JSON.stringify(ribRingConfig(nRibs, ringRadius)));
      execFileSync("python3", ["-m", "truncbct", "pipeline", "--config", cfgPath, "--out", outDir], {
        stdio: "inherit",
      });
    }
    manifests.push(manifest);
  }
  return manifests;
}

/** Writes a synthetic manifest plus raw slices; slices come from `make`. */
export function writeSyntheticDataset(
  dir: string,
  nPairs: number,
  rows: number,
  cols: number,
  make: (pair: number) => { input: Float32Array; label: Float32Array },
  mode = "task-specific",
): string {
  fs.mkdirSync(dir, { recursive: true });
  const pairs = [];
  for (let p = 0; p < nPairs; p++) {
    const { input, label } = make(p);
    for (const [role, data] of [["input", input], ["label", label]] as const) {
      const buf = Buffer.alloc(rows * cols * 4);
      data.forEach((v, i) => buf.writeFloatLE(v, 4 * i));
      fs.writeFileSync(path.join(dir, `pair${p}_slice0_${role}.raw`), buf);
    }
    pairs.push({
      pair_id: p,
      slice_index: 0,
      axis: "axial",
      input_path: `pair${p}_slice0_input.raw`,
      label_path: `pair${p}_slice0_label.raw`,
      mode,
    });
  }
  const manifest: Manifest = {
    pairs,
    grid: { dims: [cols, rows, 1], voxel_mm: [4.0, 4.0, 4.0], offset_mm: [0, 0, 0] },
    geometry: TINY_GEOMETRY as unknown as Record<string, number>,
    mu_water: 0.0193,
    seed: null,
    slice_shape: [rows, cols],
  };
  const manifestPath = path.join(dir, "manifest.json");
  fs.writeFileSync(manifestPath, JSON.stringify(manifest));
  return manifestPath;
}
