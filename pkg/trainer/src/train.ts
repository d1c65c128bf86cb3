/** Training loop: Adam with a per-epoch exponential learning-rate schedule,
 * L1 reconstruction loss and an optional adversarial term. */

import * as fs from "node:fs";
import * as path from "node:path";

import * as tf from "@tensorflow/tfjs";

import { Dataset } from "./data.js";
import { saveModel } from "./io.js";
import { buildDiscriminator, buildGenerator } from "./model.js";
import type { EpochLog, SlicePair, TrainConfig } from "./types.js";

/** Deterministic shuffle source (mulberry32). */
export function makeRng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

function shuffled<T>(items: T[], rng: () => number): T[] {
  const out = items.slice();
  for (let i = out.length - 1; i > 0; i--) {
    const j = Math.floor(rng() * (i + 1));
    [out[i], out[j]] = [out[j], out[i]];
  }
  return out;
}

function batchTensor(pairs: SlicePair[], key: "input" | "label"): tf.Tensor4D {
  const { rows, cols } = pairs[0];
  const data = new Float32Array(pairs.length * rows * cols);
  pairs.forEach((p, i) => data.set(p[key], i * rows * cols));
  return tf.tensor4d(data, [pairs.length, rows, cols, 1]);
}

export interface TrainResult {
  model: tf.LayersModel;
  lossCurve: EpochLog[];
}

/** Train on the dataset's training split; returns the model and per-epoch log.
 *
 * Deterministic for a fixed seed: the initializers, the shuffle order and the
 * CPU backend are all seeded or exact.
 */
export async function train(dataset: Dataset, cfg: TrainConfig, outDir?: string): Promise<TrainResult> {
  if (dataset.train.length === 0) throw new Error("training split is empty");
  const { rows, cols } = dataset;
  const generator = buildGenerator(rows, cols, cfg);
  // LayerVariable.read() hands back the underlying tf.Variable
  const gVars = generator.trainableWeights.map((w) => w.read() as tf.Variable);
  const gOpt = tf.train.adam(cfg.learningRate);

  const useAdversary = cfg.adversarialWeight > 0;
  const discriminator = useAdversary ? buildDiscriminator(rows, cols, cfg) : null;
  const dVars = discriminator ? discriminator.trainableWeights.map((w) => w.read() as tf.Variable) : [];
  const dOpt = useAdversary ? tf.train.adam(cfg.learningRate) : null;

  const rng = makeRng(cfg.seed + 1);
  const lossCurve: EpochLog[] = [];

  for (let epoch = 0; epoch < cfg.epochs; epoch++) {
    const lr = cfg.learningRate * Math.pow(cfg.decayRate, epoch);
    // AdamOptimizer reads this field on every applyGradients call
    (gOpt as unknown as { learningRate: number }).learningRate = lr;
    if (dOpt) (dOpt as unknown as { learningRate: number }).learningRate = lr;

    const order = shuffled(dataset.train, rng);
    let l1Sum = 0;
    let advSum = 0;
    let nBatches = 0;
    for (let start = 0; start < order.length; start += cfg.batchSize) {
      const batch = order.slice(start, start + cfg.batchSize);
      const x = batchTensor(batch, "input");
      const y = batchTensor(batch, "label");

      if (discriminator && dOpt) {
        const dLoss = dOpt.minimize(
          () =>
            tf.tidy(() => {
              const fake = generator.apply(x) as tf.Tensor4D;
              const realLogits = discriminator.apply(tf.concat([x, y], 3)) as tf.Tensor;
              const fakeLogits = discriminator.apply(tf.concat([x, fake], 3)) as tf.Tensor;
              const realLoss = tf.losses.sigmoidCrossEntropy(tf.onesLike(realLogits), realLogits);
              const fakeLoss = tf.losses.sigmoidCrossEntropy(tf.zerosLike(fakeLogits), fakeLogits);
              return tf.add(realLoss, fakeLoss) as tf.Scalar;
            }),
          false,
          dVars,
        );
        dLoss?.dispose();
      }

      let batchL1 = 0;
      const gLoss = gOpt.minimize(
        () =>
          tf.tidy(() => {
            const out = generator.apply(x) as tf.Tensor4D;
            const l1 = tf.mean(tf.abs(tf.sub(out, y))) as tf.Scalar;
            batchL1 = l1.dataSync()[0];
            if (!discriminator) return l1;
            const fakeLogits = discriminator.apply(tf.concat([x, out], 3)) as tf.Tensor;
            const adv = tf.losses.sigmoidCrossEntropy(tf.onesLike(fakeLogits), fakeLogits);
            return tf.add(l1, tf.mul(cfg.adversarialWeight, adv)) as tf.Scalar;
          }),
        true,
        gVars,
      );
      const total = gLoss ? gLoss.dataSync()[0] : batchL1;
      gLoss?.dispose();
      x.dispose();
      y.dispose();
      l1Sum += batchL1;
      advSum += total - batchL1;
      nBatches += 1;
    }
    const log: EpochLog = { epoch, lr, l1: l1Sum / nBatches };
    if (useAdversary) log.adv = advSum / nBatches;
    lossCurve.push(log);
  }

  if (outDir) {
    fs.mkdirSync(outDir, { recursive: true });
    await saveModel(generator, path.join(outDir, "model"));
    fs.writeFileSync(path.join(outDir, "loss_curve.json"), JSON.stringify(lossCurve, null, 1));
    fs.writeFileSync(path.join(outDir, "train_config.json"), JSON.stringify(cfg, null, 1));
  }
  discriminator?.dispose();
  return { model: generator, lossCurve };
}
