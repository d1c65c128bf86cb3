/** Shared types for the toy paired image-to-image trainer. */

export interface TrainConfig {
  /** Training epochs. */
  epochs: number;
  /** Initial Adam learning rate. */
  learningRate: number;
  /** Per-epoch multiplicative decay: lr(k) = learningRate * decayRate^k. */
  decayRate: number;
  batchSize: number;
  /** HU window mapped linearly to [-1, 1]. */
  normWindowHu: [number, number];
  /** Channel width of the first encoder level; deeper levels double it. */
  baseChannels: number;
  /** Number of downsampling levels. */
  depth: number;
  /** Weight of the adversarial term; 0 disables the discriminator. */
  adversarialWeight: number;
  seed: number;
  /** Which preparation's pairs to read from the manifests. */
  mode: "conventional" | "task-specific";
  /** Zero-init the residual head so the untrained model is the identity. */
  residualZeroInit: boolean;
}

export const DEFAULT_CONFIG: TrainConfig = {
  epochs: 300,
  learningRate: 0.001,
  decayRate: 0.97,
  batchSize: 4,
  normWindowHu: [-1000, 2000],
  baseChannels: 8,
  depth: 2,
  adversarialWeight: 0,
  seed: 0,
  mode: "task-specific",
  residualZeroInit: true,
};

export function mergeConfig(partial: Partial<TrainConfig>): TrainConfig {
  const cfg = { ...DEFAULT_CONFIG, ...partial };
  if (cfg.epochs < 1) throw new Error("epochs must be >= 1");
  if (!(cfg.decayRate > 0 && cfg.decayRate <= 1)) throw new Error("decayRate must be in (0, 1]");
  if (cfg.batchSize < 1) throw new Error("batchSize must be >= 1");
  if (!(cfg.normWindowHu[1] > cfg.normWindowHu[0])) throw new Error("normWindowHu must be non-degenerate");
  return cfg;
}

/** One slice pair entry of the dataset manifest written by the simulator. */
export interface ManifestEntry {
  pair_id: number;
  slice_index: number;
  axis: string;
  input_path: string;
  label_path: string;
  mode: string;
}

export interface Manifest {
  pairs: ManifestEntry[];
  grid: { dims: number[]; voxel_mm: number[]; offset_mm?: number[] };
  geometry: Record<string, number>;
  mu_water: number;
  seed: number | null;
  slice_shape: number[];
}

export interface SlicePair {
  /** Normalized input/label in [-1, 1], row-major (rows, cols). */
  input: Float32Array;
  label: Float32Array;
  rows: number;
  cols: number;
  volumeId: number;
  entry: ManifestEntry;
}

export interface EpochLog {
  epoch: number;
  lr: number;
  l1: number;
  adv?: number;
}

export interface EvaluationReport {
  mode: string;
  thresholdHu: number;
  nSlices: number;
  perSlice: Array<{ pairId: number; sliceIndex: number; l1Hu: number; dice: number }>;
  aggregate: { l1Hu: number; dice: number };
}
