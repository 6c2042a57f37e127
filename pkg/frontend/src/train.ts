/**
 * Cross-validation training: backbones on disjoint shard complements,
 * then the scale model on held-out shards with per-resolution
 * correctness labels, alternating backbones per batch (round-robin).
 */

import { mkdirSync, writeFileSync } from "fs";
import { join } from "path";
import * as tf from "@tensorflow/tfjs";
import { Dataset, DatasetImage, batchTensor, rng, shuffled } from "./data.js";
import { TrainingManifest } from "./manifest.js";
import { buildBackbone, buildScale, countParams, loadModel, saveBackbone, saveScale } from "./models.js";

export interface TrainedBackbone {
  path: string;
  heldOutAccuracy: number;
}

function diverged(loss: number): boolean {
  return !Number.isFinite(loss);
}

async function fitClassifier(model: tf.LayersModel, images: DatasetImage[],
                             resolution: number, epochs: number, batchSize: number,
                             seed: number, log: (line: string) => void,
                             tag: string): Promise<void> {
  model.compile({ optimizer: tf.train.adam(0.02), loss: "sparseCategoricalCrossentropy",
                  metrics: [] });
  const random = rng(seed);
  for (let epoch = 0; epoch < epochs; epoch++) {
    const order = shuffled(images, random);
    for (let start = 0; start < order.length; start += batchSize) {
      const batch = order.slice(start, start + batchSize);
      const x = batchTensor(batch, resolution);
      const y = tf.tensor1d(batch.map((b) => b.label), "float32");
      const loss = (await model.trainOnBatch(x, y)) as number;
      x.dispose();
      y.dispose();
      if (diverged(loss)) {
        log(`${tag} diverged (loss=${loss})`);
        process.exitCode = 1;
        throw new Error(`${tag} training diverged`);
      }
      log(`${tag} epoch ${epoch} batch ${start / batchSize} loss ${loss.toFixed(4)}`);
    }
  }
}

function logits(model: tf.LayersModel, images: DatasetImage[], resolution: number,
                chunk = 32): number[][] {
  const out: number[][] = [];
  for (let start = 0; start < images.length; start += chunk) {
    const part = images.slice(start, start + chunk);
    const x = batchTensor(part, resolution);
    const y = model.predict(x) as tf.Tensor2D;
    const rows = y.arraySync() as number[][];
    out.push(...rows);
    x.dispose();
    y.dispose();
  }
  return out;
}

export function accuracy(model: tf.LayersModel, images: DatasetImage[], resolution: number): number {
  const rows = logits(model, images, resolution);
  let correct = 0;
  rows.forEach((row, i) => {
    const pred = row.indexOf(Math.max(...row));
    if (pred === images[i].label) correct++;
  });
  return correct / images.length;
}

// End-to-end evaluation pairs the scale model with a backbone trained on
// the full training range, not a shard complement.
export async function trainFullBackbone(manifest: TrainingManifest, dataset: Dataset,
                                        log: (line: string) => void): Promise<string> {
  mkdirSync(manifest.outDir, { recursive: true });
  const all = Array.from({ length: manifest.plan.dataset_size }, (_, j) => dataset.images[j]);
  const model = buildBackbone(dataset.classes.length, manifest.backbone.channels,
                              manifest.seed + 77);
  await fitClassifier(model, all, manifest.backbone.trainResolution,
                      manifest.backbone.epochs, manifest.backbone.batchSize,
                      manifest.seed * 1000 + 77,
                      (line) => log(`backbone-full ${line}`), "backbone-full");
  const path = join(manifest.outDir, "backbone-full.json");
  saveBackbone(path, model, dataset.classes.length, manifest.backbone.channels,
               manifest.seed + 77);
  model.dispose();
  return path;
}


export async function trainBackbones(manifest: TrainingManifest, dataset: Dataset,
                                     log: (line: string) => void): Promise<TrainedBackbone[]> {
  mkdirSync(manifest.outDir, { recursive: true });
  const { plan } = manifest;
  const results: TrainedBackbone[] = [];
  for (let i = 0; i < plan.num_backbones; i++) {
    const trainIdx = plan.train[String(i)];
    const trainSet = trainIdx.map((j) => dataset.images[j]);
    const heldOut = plan.shards[i].map((j) => dataset.images[j]);
    const model = buildBackbone(dataset.classes.length, manifest.backbone.channels,
                                manifest.seed + i);
    const params = countParams(model);
    if (params > 1_000_000) throw new Error(`backbone has ${params} params (> 1M)`);
    const otherShards = plan.shards.map((_, j) => j).filter((j) => j !== i);
    log(`backbone ${i}: training on shards [${otherShards.join(",")}], ${params} params`);
    await fitClassifier(model, trainSet, manifest.backbone.trainResolution,
                        manifest.backbone.epochs, manifest.backbone.batchSize,
                        manifest.seed * 1000 + i,
                        (line) => log(`backbone ${i} shards[${otherShards.join(",")}] ${line}`),
                        `backbone-${i}`);
    const acc = accuracy(model, heldOut, manifest.backbone.trainResolution);
    const path = join(manifest.outDir, `backbone-${i}.json`);
    saveBackbone(path, model, dataset.classes.length, manifest.backbone.channels,
                 manifest.seed + i);
    log(`backbone ${i}: held-out accuracy ${acc.toFixed(3)} -> ${path}`);
    results.push({ path, heldOutAccuracy: acc });
    model.dispose();
  }
  return results;
}

/** Per-resolution correctness of one backbone over a held-out slice. */
export function labelVectors(backbone: tf.LayersModel, images: DatasetImage[],
                             resolutions: number[]): number[][] {
  const labels: number[][] = images.map(() => []);
  for (const res of resolutions) {
    const rows = logits(backbone, images, res);
    rows.forEach((row, i) => {
      const pred = row.indexOf(Math.max(...row));
      labels[i].push(pred === images[i].label ? 1 : 0);
    });
  }
  return labels;
}

export interface ScaleTrainingReport {
  path: string;
  heldOutAuc: Record<string, number>;
}

export async function trainScale(manifest: TrainingManifest, dataset: Dataset,
                                 backbonePaths: string[],
                                 log: (line: string) => void): Promise<ScaleTrainingReport> {
  const { plan, resolutions } = manifest;
  // per-pair examples: (held-out image, per-resolution correctness of the
  // paired backbone)
  const pairs = plan.scale_pairs.map(({ backbone, held_out_shard }) => {
    const { model } = loadModel(backbonePaths[backbone]);
    const images = plan.shards[held_out_shard].map((j) => dataset.images[j]);
    const labels = labelVectors(model, images, resolutions);
    model.dispose();
    return { images, labels };
  });
  for (const { labels } of pairs) {
    for (const vec of labels) {
      if (!vec.every((v) => v === 0 || v === 1)) throw new Error("labels must be multi-hot");
    }
  }

  const scale = buildScale(resolutions.length, manifest.scale.inputResolution,
                           manifest.scale.channels, manifest.seed);
  scale.compile({ optimizer: tf.train.adam(0.01), loss: "binaryCrossentropy", metrics: [] });
  const random = rng(manifest.seed * 7 + 1);
  // hold a third of every pair out of scale training: images no model has
  // trained on, labeled by the pair's own backbone, for the AUC report
  const splitRandom = rng(manifest.seed * 13 + 5);
  const evalSlices: { img: DatasetImage; vec: number[] }[][] = [];
  const perPair = pairs.map(({ images, labels }) => {
    const items = shuffled(images.map((img, i) => ({ img, vec: labels[i] })), splitRandom);
    const cut = Math.max(1, Math.floor(items.length / 3));
    evalSlices.push(items.slice(0, cut));
    return items.slice(cut);
  });
  let batchCounter = 0;
  for (let epoch = 0; epoch < manifest.scale.epochs; epoch++) {
    const orders = perPair.map((items) => shuffled(items, random));
    const cursors = orders.map(() => 0);
    let remaining = orders.reduce((a, o) => a + o.length, 0);
    while (remaining > 0) {
      // alternate backbones per batch, round-robin over the pairs
      const p = batchCounter % orders.length;
      batchCounter++;
      const order = orders[p];
      if (cursors[p] >= order.length) continue;
      const batch = order.slice(cursors[p], cursors[p] + manifest.scale.batchSize);
      cursors[p] += batch.length;
      remaining -= batch.length;
      const x = batchTensor(batch.map((b) => b.img), manifest.scale.inputResolution);
      const y = tf.tensor2d(batch.map((b) => b.vec), [batch.length, resolutions.length]);
      const loss = (await scale.trainOnBatch(x, y)) as number;
      x.dispose();
      y.dispose();
      if (diverged(loss)) {
        process.exitCode = 1;
        throw new Error("scale training diverged");
      }
      log(`scale epoch ${epoch} pair ${p} loss ${loss.toFixed(4)}`);
    }
  }

  const evalItems = evalSlices.flat();
  const truths = evalItems.map((b) => b.vec);
  const x = batchTensor(evalItems.map((b) => b.img), manifest.scale.inputResolution);
  const yPred = scale.predict(x) as tf.Tensor2D;
  const scores = yPred.arraySync() as number[][];
  x.dispose();
  yPred.dispose();
  const heldOutAuc: Record<string, number> = {};
  resolutions.forEach((res, j) => {
    heldOutAuc[String(res)] = auc(
      truths.map((t) => t[j]),
      scores.map((s) => s[j]),
    );
  });
  const path = join(manifest.outDir, "scale.json");
  saveScale(path, scale, resolutions, manifest.scale.inputResolution,
            manifest.scale.channels, manifest.seed);
  scale.dispose();
  return { path, heldOutAuc };
}

/** Mann-Whitney AUC with tie-averaged ranks; NaN when one class is absent. */
export function auc(truth: number[], score: number[]): number {
  const pos = truth.filter((t) => t === 1).length;
  const neg = truth.length - pos;
  if (pos === 0 || neg === 0) return NaN;
  const order = score
    .map((s, i) => ({ s, t: truth[i] }))
    .sort((a, b) => a.s - b.s);
  const ranks = new Array<number>(order.length);
  let i = 0;
  while (i < order.length) {
    let j = i;
    while (j + 1 < order.length && order[j + 1].s === order[i].s) j++;
    const avg = (i + j) / 2 + 1;
    for (let k = i; k <= j; k++) ranks[k] = avg;
    i = j + 1;
  }
  let rankSum = 0;
  order.forEach(({ t }, k) => {
    if (t === 1) rankSum += ranks[k];
  });
  return (rankSum - (pos * (pos + 1)) / 2) / (pos * neg);
}

export function writeMetrics(manifest: TrainingManifest, backbones: TrainedBackbone[],
                             scaleReport: ScaleTrainingReport): string {
  const body = {
    backbones: backbones.map((b) => ({ path: b.path, held_out_accuracy: b.heldOutAccuracy })),
    scale: { path: scaleReport.path, held_out_auc: scaleReport.heldOutAuc },
  };
  const path = join(manifest.outDir, "metrics.json");
  writeFileSync(path, JSON.stringify(body, null, 1) + "\n");
  return path;
}
