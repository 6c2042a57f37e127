/**
 * The resotune backend wire protocol, served from trained models.
 *
 * stdio transport: one handshake line, then newline-delimited JSON
 * request/response pairs. HTTP transport mirrors the bodies over
 * POST /infer with the handshake at GET /handshake. Malformed or
 * unsupported requests get {"id": N, "error": "..."} and the server
 * keeps running.
 */

import { createInterface } from "readline";
import { createServer } from "http";
import * as tf from "@tensorflow/tfjs";
import { SavedModel } from "./models.js";

export interface Request {
  id: number;
  resolution: number;
  width: number;
  height: number;
  pixels_b64: string;
}

export interface BackendHandle {
  kind: "backbone" | "scale";
  resolutions: number[];
  modelId: string;
  infer(req: Request): Record<string, unknown>;
}

function pixelsToTensor(req: Request): tf.Tensor4D {
  const buf = Buffer.from(req.pixels_b64, "base64");
  if (buf.length !== req.width * req.height * 3) {
    throw new Error(`pixel payload ${buf.length} bytes, expected ${req.width * req.height * 3}`);
  }
  return tf.tensor4d(Float32Array.from(buf), [1, req.height, req.width, 3]).div(255) as tf.Tensor4D;
}

export function makeHandle(model: tf.LayersModel, saved: SavedModel,
                           serveResolutions?: number[]): BackendHandle {
  const resolutions =
    saved.kind === "scale" ? saved.resolutions! : serveResolutions ?? [56, 112, 224];
  return {
    kind: saved.kind,
    resolutions,
    modelId: `forge-${saved.kind}`,
    infer(req: Request) {
      return tf.tidy(() => {
        let x = pixelsToTensor(req);
        if (saved.kind === "scale") {
          const want = saved.inputResolution!;
          if (req.width !== want || req.height !== want) {
            x = tf.image.resizeBilinear(x, [want, want]) as tf.Tensor4D;
          }
          const scores = (model.predict(x) as tf.Tensor2D).arraySync()[0];
          const body: Record<string, string | number> = {};
          const out: Record<string, number> = {};
          saved.resolutions!.forEach((res, i) => (out[String(res)] = scores[i]));
          return { scores: out };
        }
        const logits = (model.predict(x) as tf.Tensor2D).arraySync()[0];
        return { label: logits.indexOf(Math.max(...logits)) };
      });
    },
  };
}

export function handleLine(handle: BackendHandle, line: string): Record<string, unknown> {
  let id: unknown = null;
  try {
    const body = JSON.parse(line) as Request;
    id = body.id ?? null;
    if (!handle.resolutions.includes(body.resolution)) {
      throw new Error(`resolution ${body.resolution} not advertised`);
    }
    return { id, ...handle.infer(body) };
  } catch (err) {
    return { id, error: String(err instanceof Error ? err.message : err) };
  }
}

export function helloBody(handle: BackendHandle): Record<string, unknown> {
  return {
    hello: {
      kind: handle.kind,
      resolutions: handle.resolutions,
      concurrency: 1,
      model_id: handle.modelId,
    },
  };
}

export function serveStdio(handle: BackendHandle): Promise<void> {
  process.stdout.write(JSON.stringify(helloBody(handle)) + "\n");
  const rl = createInterface({ input: process.stdin, terminal: false });
  return new Promise((resolve) => {
    rl.on("line", (line) => {
      if (!line.trim()) return;
      process.stdout.write(JSON.stringify(handleLine(handle, line)) + "\n");
    });
    rl.on("close", resolve);
  });
}

export function serveHttp(handle: BackendHandle, host: string, port: number) {
  const server = createServer((req, res) => {
    if (req.method === "GET" && req.url === "/handshake") {
      res.setHeader("Content-Type", "application/json");
      res.end(JSON.stringify(helloBody(handle)));
      return;
    }
    if (req.method === "POST" && req.url === "/infer") {
      let body = "";
      req.on("data", (chunk) => (body += chunk));
      req.on("end", () => {
        res.setHeader("Content-Type", "application/json");
        res.end(JSON.stringify(handleLine(handle, body)));
      });
      return;
    }
    res.statusCode = 404;
    res.end();
  });
  server.listen(port, host);
  return server;
}
