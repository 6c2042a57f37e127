/**
 * Loads the primary component's synthetic dataset directory (manifest.json
 * plus progressive JPEGs) into tensors.
 */

import { readFileSync } from "fs";
import { join } from "path";
import jpeg from "jpeg-js";
import * as tf from "@tensorflow/tfjs";

export interface DatasetImage {
  id: string;
  label: number;
  /** full-size RGB bytes, row-major */
  rgb: Uint8Array;
  width: number;
  height: number;
}

export interface Dataset {
  classes: string[];
  images: DatasetImage[];
}

export function loadDataset(root: string): Dataset {
  const manifest = JSON.parse(readFileSync(join(root, "manifest.json"), "utf-8"));
  const images: DatasetImage[] = manifest.images.map((rec: any) => {
    const raw = jpeg.decode(readFileSync(join(root, rec.file)), {
      useTArray: true,
      formatAsRGBA: true,
    });
    const n = raw.width * raw.height;
    const rgb = new Uint8Array(n * 3);
    for (let i = 0; i < n; i++) {
      rgb[i * 3] = raw.data[i * 4];
      rgb[i * 3 + 1] = raw.data[i * 4 + 1];
      rgb[i * 3 + 2] = raw.data[i * 4 + 2];
    }
    return { id: rec.id, label: rec.label, rgb, width: raw.width, height: raw.height };
  });
  return { classes: manifest.classes, images };
}

/** Image batch at a resolution, scaled to [0, 1]. Caller disposes. */
export function batchTensor(images: DatasetImage[], resolution: number): tf.Tensor4D {
  return tf.tidy(() => {
    const full = tf.tensor4d(
      concatBytes(images),
      [images.length, images[0].height, images[0].width, 3],
      "float32",
    );
    const resized =
      images[0].height === resolution && images[0].width === resolution
        ? full
        : tf.image.resizeBilinear(full, [resolution, resolution]);
    return resized.div(255) as tf.Tensor4D;
  });
}

function concatBytes(images: DatasetImage[]): Float32Array {
  const per = images[0].rgb.length;
  const out = new Float32Array(per * images.length);
  images.forEach((img, i) => out.set(img.rgb, i * per));
  return out;
}

/** Deterministic PRNG for shuffles (mulberry32). */
export function rng(seed: number): () => number {
  let a = seed >>> 0;
  return () => {
    a |= 0;
    a = (a + 0x6d2b79f5) | 0;
    let t = Math.imul(a ^ (a >>> 15), 1 | a);
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t;
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296;
  };
}

export function shuffled<T>(items: T[], random: () => number): T[] {
  const out = items.slice();
  for (let i = out.length - 1; i > 0; i--) {
    const j = Math.floor(random() * (i + 1));
    [out[i], out[j]] = [out[j], out[i]];
  }
  return out;
}
