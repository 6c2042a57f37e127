/**
 * Training manifest and the cross-validation shard plan.
 *
 * The shard plan must match the one the primary component emits
 * byte-exactly (its `shard-plan` CLI writes the file this consumes), so
 * the serializer below mirrors python's json.dumps(indent=1,
 * sort_keys=True) output format.
 */

export interface ShardPlan {
  dataset_size: number;
  num_backbones: number;
  scale_pairs: { backbone: number; held_out_shard: number }[];
  shards: number[][];
  train: Record<string, number[]>;
}

export interface TrainingManifest {
  dataset: string; // primary synthetic dataset directory
  plan: ShardPlan;
  resolutions: number[]; // per-resolution correctness labels for the scale model
  backbone: { trainResolution: number; channels: number[]; epochs: number; batchSize: number };
  scale: { inputResolution: number; channels: number[]; epochs: number; batchSize: number };
  seed: number;
  outDir: string;
}

/** Balanced contiguous partition, same as numpy.array_split. */
export function arraySplit(n: number, parts: number): number[][] {
  const out: number[][] = [];
  const base = Math.floor(n / parts);
  const extra = n % parts;
  let start = 0;
  for (let i = 0; i < parts; i++) {
    const size = base + (i < extra ? 1 : 0);
    out.push(Array.from({ length: size }, (_, j) => start + j));
    start += size;
  }
  return out;
}

export function shardPlan(datasetSize: number, numBackbones = 4): ShardPlan {
  if (numBackbones < 2) throw new Error("num_backbones must be >= 2");
  if (datasetSize < numBackbones) throw new Error("dataset smaller than shard count");
  const shards = arraySplit(datasetSize, numBackbones);
  const train: Record<string, number[]> = {};
  for (let i = 0; i < numBackbones; i++) {
    train[String(i)] = shards.flatMap((s, j) => (j === i ? [] : s));
  }
  return {
    dataset_size: datasetSize,
    num_backbones: numBackbones,
    scale_pairs: Array.from({ length: numBackbones }, (_, i) => ({
      backbone: i,
      held_out_shard: i,
    })),
    shards,
    train,
  };
}

type JsonValue = number | string | boolean | null | JsonValue[] | { [k: string]: JsonValue };

/** python json.dumps(obj, indent=1, sort_keys=True) + "\n", byte for byte. */
export function pythonJson(value: JsonValue, level = 0): string {
  const pad = " ".repeat(level + 1);
  const close = " ".repeat(level);
  if (Array.isArray(value)) {
    if (value.length === 0) return "[]";
    const items = value.map((v) => pad + pythonJson(v, level + 1));
    return "[\n" + items.join(",\n") + "\n" + close + "]";
  }
  if (value !== null && typeof value === "object") {
    const keys = Object.keys(value).sort();
    if (keys.length === 0) return "{}";
    const items = keys.map(
      (k) => pad + JSON.stringify(k) + ": " + pythonJson(value[k], level + 1),
    );
    return "{\n" + items.join(",\n") + "\n" + close + "}";
  }
  return JSON.stringify(value);
}

export function planToManifestText(plan: ShardPlan): string {
  return pythonJson(plan as unknown as JsonValue) + "\n";
}
