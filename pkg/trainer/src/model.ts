/** Model builders: a small residual encoder-decoder with skip connections,
 * plus an optional patch discriminator for the adversarial term. */

import * as tf from "@tensorflow/tfjs";

import type { TrainConfig } from "./types.js";

function conv(filters: number, seed: number, activation: "relu" | "linear" = "relu", strides = 1) {
  return tf.layers.conv2d({
    filters,
    kernelSize: 3,
    strides,
    padding: "same",
    activation,
    kernelInitializer: tf.initializers.glorotUniform({ seed }),
    biasInitializer: "zeros",
  });
}

/** Residual encoder-decoder: output = input + residual(input).
 *
 * With the zero-initialized head the untrained model is exactly the identity,
 * so training only has to explain the input-label difference.
 */
export function buildGenerator(rows: number, cols: number, cfg: TrainConfig): tf.LayersModel {
  const input = tf.input({ shape: [rows, cols, 1] });
  let seed = cfg.seed * 1000 + 1;

  let x = conv(cfg.baseChannels, seed++).apply(input) as tf.SymbolicTensor;
  const skips: tf.SymbolicTensor[] = [];
  let channels = cfg.baseChannels;
  for (let level = 0; level < cfg.depth; level++) {
    skips.push(x);
    channels *= 2;
    x = conv(channels, seed++, "relu", 2).apply(x) as tf.SymbolicTensor;
    x = conv(channels, seed++).apply(x) as tf.SymbolicTensor;
  }
  for (let level = cfg.depth - 1; level >= 0; level--) {
    channels = Math.floor(channels / 2);
    x = tf.layers.upSampling2d({ size: [2, 2] }).apply(x) as tf.SymbolicTensor;
    x = tf.layers.concatenate().apply([x, skips[level]]) as tf.SymbolicTensor;
    x = conv(channels, seed++).apply(x) as tf.SymbolicTensor;
  }
  const head = tf.layers.conv2d({
    filters: 1,
    kernelSize: 3,
    padding: "same",
    activation: "linear",
    kernelInitializer: cfg.residualZeroInit ? "zeros" : tf.initializers.glorotUniform({ seed: seed++ }),
    biasInitializer: "zeros",
  });
  const residual = head.apply(x) as tf.SymbolicTensor;
  const output = tf.layers.add().apply([input, residual]) as tf.SymbolicTensor;
  return tf.model({ inputs: input, outputs: output });
}

/** Patch discriminator over (input, candidate) channel pairs; logits output. */
export function buildDiscriminator(rows: number, cols: number, cfg: TrainConfig): tf.LayersModel {
  const input = tf.input({ shape: [rows, cols, 2] });
  let seed = cfg.seed * 1000 + 501;
  let x = conv(cfg.baseChannels, seed++, "relu", 2).apply(input) as tf.SymbolicTensor;
  x = conv(cfg.baseChannels * 2, seed++, "relu", 2).apply(x) as tf.SymbolicTensor;
  const logits = tf.layers.conv2d({
    filters: 1,
    kernelSize: 3,
    padding: "same",
    activation: "linear",
    kernelInitializer: tf.initializers.glorotUniform({ seed: seed++ }),
  }).apply(x) as tf.SymbolicTensor;
  return tf.model({ inputs: input, outputs: logits });
}

/** Single forward pass on one normalized slice; pure, returns a new array. */
export function predictSlice(model: tf.LayersModel, slice: Float32Array, rows: number, cols: number): Float32Array {
  return tf.tidy(() => {
    const x = tf.tensor4d(slice, [1, rows, cols, 1]);
    const y = model.predict(x) as tf.Tensor;
    const data = y.dataSync() as Float32Array;
    return new Float32Array(data);
  });
}
