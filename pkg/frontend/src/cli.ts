/**
 * `forge` entry point: train the sharded backbones plus the scale model,
 * or serve a trained model over the backend wire protocol.
 *
 *   forge train --manifest m.json
 *   forge serve --model out/scale.json --kind scale --stdio
 *   forge serve --model out/backbone-0.json --kind backbone --listen 127.0.0.1:9090
 */

import { readFileSync } from "fs";
import * as tf from "@tensorflow/tfjs";
import { loadDataset } from "./data.js";
import { TrainingManifest, planToManifestText, shardPlan } from "./manifest.js";
import { loadModel } from "./models.js";
import { makeHandle, serveHttp, serveStdio } from "./protocol.js";
import { trainBackbones, trainFullBackbone, trainScale, writeMetrics } from "./train.js";

function parseArgs(argv: string[]): Record<string, string | boolean> {
  const out: Record<string, string | boolean> = {};
  for (let i = 0; i < argv.length; i++) {
    const arg = argv[i];
    if (!arg.startsWith("--")) continue;
    const key = arg.slice(2);
    if (i + 1 < argv.length && !argv[i + 1].startsWith("--")) {
      out[key] = argv[++i];
    } else {
      out[key] = true;
    }
  }
  return out;
}

export function loadManifest(path: string): TrainingManifest {
  const body = JSON.parse(readFileSync(path, "utf-8"));
  for (const key of ["dataset", "plan", "resolutions", "backbone", "scale", "seed", "outDir"]) {
    if (!(key in body)) throw new Error(`manifest missing ${key}`);
  }
  return body as TrainingManifest;
}

async function cmdTrain(args: Record<string, string | boolean>): Promise<number> {
  const manifest = loadManifest(String(args.manifest));
  const dataset = loadDataset(manifest.dataset);
  if (manifest.plan.dataset_size > dataset.images.length) {
    throw new Error(
      `shard plan covers ${manifest.plan.dataset_size} images, dataset has ${dataset.images.length}`,
    );
  }
  const log = (line: string) => process.stderr.write(line + "\n");
  const backbones = await trainBackbones(manifest, dataset, log);
  // deployment backbone for end-to-end serving, trained on the full range
  await trainFullBackbone(manifest, dataset, log);
  const scaleReport = await trainScale(manifest, dataset, backbones.map((b) => b.path), log);
  const metricsPath = writeMetrics(manifest, backbones, scaleReport);
  log(`metrics -> ${metricsPath}`);
  return Number(process.exitCode ?? 0);
}

async function cmdServe(args: Record<string, string | boolean>): Promise<number> {
  const { model, saved } = loadModel(String(args.model));
  const kind = String(args.kind ?? saved.kind);
  if (kind !== saved.kind) throw new Error(`model is a ${saved.kind}, not a ${kind}`);
  const serveRes = args.resolutions
    ? String(args.resolutions).split(",").map(Number)
    : undefined;
  const handle = makeHandle(model, saved, serveRes);
  if (args.stdio) {
    await serveStdio(handle);
    return 0;
  }
  const listen = String(args.listen ?? "127.0.0.1:9090");
  const [host, port] = listen.split(":");
  serveHttp(handle, host, Number(port));
  process.stderr.write(`serving ${kind} on ${listen}\n`);
  return new Promise<number>(() => {});
}

function cmdPlan(args: Record<string, string | boolean>): number {
  // debugging helper: print the shard plan this package derives, which
  // must match the primary's shard-plan output byte for byte
  const plan = shardPlan(Number(args.size), Number(args.backbones ?? 4));
  process.stdout.write(planToManifestText(plan));
  return 0;
}

async function main(): Promise<number> {
  await tf.setBackend("cpu");
  const [cmd, ...rest] = process.argv.slice(2);
  const args = parseArgs(rest);
  if (cmd === "train") return cmdTrain(args);
  if (cmd === "serve") return cmdServe(args);
  if (cmd === "plan") return cmdPlan(args);
  process.stderr.write("usage: forge <train|serve|plan> [--flags]\n");
  return 2;
}

main().then(
  (code) => {
    if (code !== 0) process.exitCode = code;
  },
  (err) => {
    process.stderr.write(`error: ${err?.message ?? err}\n`);
    process.exitCode = 1;
  },
);
