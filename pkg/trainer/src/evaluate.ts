/** Held-out evaluation: per-slice L1 in HU plus Dice overlap of the
 * thresholded prediction against the thresholded label outside the FOV. */

import * as fs from "node:fs";

import type * as tf from "@tensorflow/tfjs";

import { denormalizeHu, outsideFovMask } from "./data.js";
import { predictSlice } from "./model.js";
import type { EvaluationReport, Manifest, SlicePair, TrainConfig } from "./types.js";

export function diceOverMask(aHu: Float32Array, bHu: Float32Array, mask: Uint8Array, thresholdHu: number): number {
  let na = 0;
  let nb = 0;
  let overlap = 0;
  for (let i = 0; i < aHu.length; i++) {
    if (!mask[i]) continue;
    const a = aHu[i] >= thresholdHu;
    const b = bHu[i] >= thresholdHu;
    if (a) na++;
    if (b) nb++;
    if (a && b) overlap++;
  }
  if (na + nb === 0) return 1.0;
  return (2 * overlap) / (na + nb);
}

export function meanAbsHu(aHu: Float32Array, bHu: Float32Array): number {
  let sum = 0;
  for (let i = 0; i < aHu.length; i++) sum += Math.abs(aHu[i] - bHu[i]);
  return sum / aHu.length;
}

/** Evaluate a model over held-out pairs; the SOI reference is the thresholded
 * label (the dataset's synthetic stand-in for a manual segmentation). */
export function evaluateModel(
  model: tf.LayersModel,
  pairs: SlicePair[],
  manifest: Manifest,
  cfg: TrainConfig,
  thresholdHu = 150,
): EvaluationReport {
  if (pairs.length === 0) throw new Error("test split is empty");
  const mask = outsideFovMask(manifest);
  const perSlice = pairs.map((pair) => {
    const out = predictSlice(model, pair.input, pair.rows, pair.cols);
    const outHu = denormalizeHu(out, cfg.normWindowHu);
    const labelHu = denormalizeHu(pair.label, cfg.normWindowHu);
    return {
      pairId: pair.entry.pair_id,
      sliceIndex: pair.entry.slice_index,
      l1Hu: meanAbsHu(outHu, labelHu),
      dice: diceOverMask(outHu, labelHu, mask, thresholdHu),
    };
  });
  const mean = (vals: number[]) => vals.reduce((a, b) => a + b, 0) / vals.length;
  return {
    mode: cfg.mode,
    thresholdHu,
    nSlices: perSlice.length,
    perSlice,
    aggregate: { l1Hu: mean(perSlice.map((s) => s.l1Hu)), dice: mean(perSlice.map((s) => s.dice)) },
  };
}

export function writeReport(report: EvaluationReport, path: string): void {
  fs.writeFileSync(path, JSON.stringify(report, null, 1));
}
