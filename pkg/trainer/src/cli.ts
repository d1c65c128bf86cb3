/** Command line: train / predict / evaluate / compare over exported datasets.
 *
 *   node dist/cli.js train    --manifest M1 [--manifest M2 ...] --out DIR
 *                             [--config cfg.json] [--mode task-specific]
 *                             [--epochs N] [--seed N]
 *   node dist/cli.js predict  --model DIR --manifest M --pair P --slice S --out out.raw
 *   node dist/cli.js evaluate --model DIR --manifest M1 --manifest M2 ... --out report.json
 *   node dist/cli.js compare  --manifest M1 --manifest M2 ... --out DIR
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { Dataset, denormalizeHu, loadManifest } from "./data.js";
import { evaluateModel, writeReport } from "./evaluate.js";
import { loadModel } from "./io.js";
import { predictSlice } from "./model.js";
import { train } from "./train.js";
import { DEFAULT_CONFIG, mergeConfig, type TrainConfig } from "./types.js";

interface Args {
  command: string;
  manifests: string[];
  options: Map<string, string>;
}

function parseArgs(argv: string[]): Args {
  const [command, ...rest] = argv;
  const manifests: string[] = [];
  const options = new Map<string, string>();
  for (let i = 0; i < rest.length; i++) {
    const arg = rest[i];
    if (!arg.startsWith("--")) throw new Error(`unexpected argument ${arg}`);
    const key = arg.slice(2);
    const value = rest[++i];
    if (value === undefined) throw new Error(`--${key} needs a value`);
    if (key === "manifest") manifests.push(value);
    else options.set(key, value);
  }
  return { command, manifests, options };
}

function configFrom(args: Args): TrainConfig {
  let partial: Partial<TrainConfig> = {};
  const cfgPath = args.options.get("config");
  if (cfgPath) partial = JSON.parse(fs.readFileSync(cfgPath, "utf-8"));
  if (args.options.has("mode")) partial.mode = args.options.get("mode") as TrainConfig["mode"];
  if (args.options.has("epochs")) partial.epochs = Number(args.options.get("epochs"));
  if (args.options.has("seed")) partial.seed = Number(args.options.get("seed"));
  return mergeConfig(partial);
}

async function cmdTrain(args: Args): Promise<void> {
  const cfg = configFrom(args);
  const out = args.options.get("out") ?? "trainer_out";
  const dataset = new Dataset(args.manifests, cfg);
  const { lossCurve } = await train(dataset, cfg, out);
  const last = lossCurve[lossCurve.length - 1];
  console.log(`trained ${cfg.epochs} epochs on ${dataset.train.length} pairs; ` +
              `final L1 ${last.l1.toExponential(3)}; artifacts in ${out}`);
}

async function cmdPredict(args: Args): Promise<void> {
  const cfg = configFrom(args);
  const model = await loadModel(path.join(args.options.get("model")!, "model"));
  const dataset = new Dataset(args.manifests, cfg);
  const pairId = Number(args.options.get("pair") ?? 0);
  const sliceIndex = Number(args.options.get("slice") ?? 0);
  const pool = dataset.test.length > 0 ? dataset.test : dataset.train;
  const pair = pool.find((p) => p.entry.pair_id === pairId && p.entry.slice_index === sliceIndex);
  if (!pair) throw new Error(`no pair ${pairId} slice ${sliceIndex} in the dataset`);
  const out = predictSlice(model, pair.input, pair.rows, pair.cols);
  const hu = denormalizeHu(out, cfg.normWindowHu);
  const buf = Buffer.alloc(hu.length * 4);
  hu.forEach((v, i) => buf.writeFloatLE(v, 4 * i));
  fs.writeFileSync(args.options.get("out") ?? "prediction.raw", buf);
  console.log(`wrote ${hu.length * 4} bytes`);
}

async function cmdEvaluate(args: Args): Promise<void> {
  const cfg = configFrom(args);
  const model = await loadModel(path.join(args.options.get("model")!, "model"));
  const dataset = new Dataset(args.manifests, cfg);
  const manifest = loadManifest(args.manifests[args.manifests.length - 1]);
  const threshold = Number(args.options.get("threshold-hu") ?? 150);
  const report = evaluateModel(model, dataset.test, manifest, cfg, threshold);
  const out = args.options.get("out") ?? "report.json";
  writeReport(report, out);
  console.log(`evaluated ${report.nSlices} held-out slices: ` +
              `L1 ${report.aggregate.l1Hu.toFixed(1)} HU, dice ${report.aggregate.dice.toFixed(3)} -> ${out}`);
}

async function cmdCompare(args: Args): Promise<void> {
  const out = args.options.get("out") ?? "comparison";
  fs.mkdirSync(out, { recursive: true });
  const threshold = Number(args.options.get("threshold-hu") ?? 150);
  const summary: Record<string, { l1Hu: number; dice: number }> = {};
  for (const mode of ["conventional", "task-specific"] as const) {
    const cfg = mergeConfig({ ...configFrom(args), mode });
    const dataset = new Dataset(args.manifests, cfg);
    const modeDir = path.join(out, mode);
    const { model } = await train(dataset, cfg, modeDir);
    const manifest = loadManifest(args.manifests[args.manifests.length - 1]);
    const report = evaluateModel(model, dataset.test, manifest, cfg, threshold);
    writeReport(report, path.join(modeDir, "report.json"));
    summary[mode] = report.aggregate;
    model.dispose();
  }
  fs.writeFileSync(path.join(out, "comparison.json"), JSON.stringify(summary, null, 1));
  console.log(`conventional: dice ${summary["conventional"].dice.toFixed(3)}, ` +
              `task-specific: dice ${summary["task-specific"].dice.toFixed(3)} -> ${out}/comparison.json`);
}

const COMMANDS: Record<string, (args: Args) => Promise<void>> = {
  train: cmdTrain,
  predict: cmdPredict,
  evaluate: cmdEvaluate,
  compare: cmdCompare,
};

async function main(): Promise<number> {
  const args = parseArgs(process.argv.slice(2));
  const command = COMMANDS[args.command];
  if (!command) {
    console.error(`usage: cli.js <${Object.keys(COMMANDS).join("|")}> --manifest M ... ` +
                  `(defaults: ${JSON.stringify(DEFAULT_CONFIG)})`);
    return 2;
  }
  try {
    await command(args);
  } catch (err) {
    console.error(`error: ${(err as Error).message}`);
    return 1;
  }
  return 0;
}

main().then((code) => {
  process.exitCode = code;
});
