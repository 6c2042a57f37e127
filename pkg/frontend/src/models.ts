/**
 * Model architectures and a framework-independent weight file format.
 *
 * Both nets are small CNNs (well under 1M parameters). The backbone uses
 * global average pooling so one trained model evaluates at any input
 * resolution; the scale model runs at a fixed low resolution and emits an
 * independent correctness likelihood per candidate resolution.
 */

import { readFileSync, writeFileSync } from "fs";
import * as tf from "@tensorflow/tfjs";

// BatchNorm momentum tuned for the short training runs these fixtures
// get: moving statistics must converge within ~100 steps.
const BN_MOMENTUM = 0.8;

function convBlock(model: tf.Sequential, filters: number, seed: number, first: boolean,
                   fixedInput?: number): void {
  model.add(
    tf.layers.conv2d({
      filters,
      kernelSize: 3,
      strides: 2,
      padding: "same",
      useBias: false,
      inputShape: first
        ? [fixedInput ?? (null as any), fixedInput ?? (null as any), 3]
        : undefined,
      kernelInitializer: tf.initializers.heNormal({ seed }),
    }),
  );
  model.add(tf.layers.batchNormalization({ momentum: BN_MOMENTUM }));
  model.add(tf.layers.activation({ activation: "relu" }));
}

export function buildBackbone(numClasses: number, channels: number[], seed: number): tf.LayersModel {
  const model = tf.sequential();
  channels.forEach((ch, i) => convBlock(model, ch, seed + i, i === 0));
  model.add(tf.layers.globalAveragePooling2d({}));
  model.add(
    tf.layers.dense({
      units: numClasses,
      activation: "softmax",  // the compiled loss expects probabilities
      kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 100 }),
    }),
  );
  return model;
}

export function buildScale(numResolutions: number, inputResolution: number,
                           channels: number[], seed: number): tf.LayersModel {
  const model = tf.sequential();
  channels.forEach((ch, i) => convBlock(model, ch, seed + 200 + i, i === 0, inputResolution));
  model.add(tf.layers.globalAveragePooling2d({}));
  model.add(
    tf.layers.dense({
      units: numResolutions,
      activation: "sigmoid",
      kernelInitializer: tf.initializers.glorotUniform({ seed: seed + 300 }),
    }),
  );
  return model;
}

export interface SavedModel {
  kind: "backbone" | "scale";
  numClasses?: number;
  resolutions?: number[];
  inputResolution?: number;
  channels: number[];
  seed: number;
  weights: { shape: number[]; data: string }[];
}

function encodeWeights(model: tf.LayersModel): { shape: number[]; data: string }[] {
  return model.getWeights().map((w) => {
    const values = w.dataSync() as Float32Array;
    return {
      shape: w.shape.slice(),
      data: Buffer.from(values.buffer, values.byteOffset, values.byteLength).toString("base64"),
    };
  });
}

function decodeWeights(saved: SavedModel): tf.Tensor[] {
  return saved.weights.map((w) => {
    const buf = Buffer.from(w.data, "base64");
    const values = new Float32Array(buf.buffer, buf.byteOffset, buf.byteLength / 4);
    return tf.tensor(Array.from(values), w.shape);
  });
}

export function saveBackbone(path: string, model: tf.LayersModel, numClasses: number,
                             channels: number[], seed: number): void {
  const body: SavedModel = { kind: "backbone", numClasses, channels, seed,
                             weights: encodeWeights(model) };
  writeFileSync(path, JSON.stringify(body));
}

export function saveScale(path: string, model: tf.LayersModel, resolutions: number[],
                          inputResolution: number, channels: number[], seed: number): void {
  const body: SavedModel = { kind: "scale", resolutions, inputResolution, channels, seed,
                             weights: encodeWeights(model) };
  writeFileSync(path, JSON.stringify(body));
}

export function loadModel(path: string): { model: tf.LayersModel; saved: SavedModel } {
  const saved: SavedModel = JSON.parse(readFileSync(path, "utf-8"));
  const model =
    saved.kind === "backbone"
      ? buildBackbone(saved.numClasses!, saved.channels, saved.seed)
      : buildScale(saved.resolutions!.length, saved.inputResolution!, saved.channels, saved.seed);
  model.setWeights(decodeWeights(saved));
  return { model, saved };
}

export function countParams(model: tf.LayersModel): number {
  return model.getWeights().reduce((acc, w) => acc + w.size, 0);
}
