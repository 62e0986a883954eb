#!/usr/bin/env node
/**
 * zspose-extract: produce pose-pipeline input files from real images.
 *
 *   extract       --images dir --masks dir --out dir
 *   co3d-convert  --sequence dir --out dir
 *
 * Results go to stdout as JSON; warnings and errors to stderr. Exit codes:
 * 1 usage, 2 data/model problems.
 */

import * as fs from "fs";
import * as path from "path";
import yargs from "yargs";

import { convertCo3dSequence } from "./co3d";
import { EmptyMask, MissingAnnotation, ModelLoadFailure } from "./errors";
import { DEFAULT_CONFIG, ExtractionConfig, extractFrame, getModel } from "./extract";
import { ManifestJson, ensureDir, writeManifest } from "./formats";
import { readMaskPng, readPng } from "./image";

interface CommonArgs {
  side: number;
  weights?: string;
  seed: string;
}

function configFrom(args: CommonArgs): ExtractionConfig {
  return {
    ...DEFAULT_CONFIG,
    inputSide: args.side,
    weightsPath: args.weights,
    weightsSeed: args.seed,
  };
}

function runExtract(argv: CommonArgs & { images: string; masks: string; out: string }): number {
  const cfg = configFrom(argv);
  const files = fs
    .readdirSync(argv.images)
    .filter((f) => f.toLowerCase().endsWith(".png"))
    .sort();
  if (files.length === 0) {
    process.stderr.write(`error: no .png images in ${argv.images}\n`);
    return 2;
  }
  ensureDir(argv.out);
  const model = getModel(cfg);
  const manifest: ManifestJson = {
    category: "unlabeled",
    sequence_id: path.basename(argv.images),
    canonical_alignment: null,
    frames: [],
  };
  let skipped = 0;
  for (const file of files) {
    const frameId = file.replace(/\.png$/i, "");
    const maskPath = path.join(argv.masks, file);
    if (!fs.existsSync(maskPath)) {
      process.stderr.write(`warning: no mask for ${file}, skipping\n`);
      skipped += 1;
      continue;
    }
    try {
      const img = readPng(path.join(argv.images, file));
      const mask = readMaskPng(maskPath);
      const out = extractFrame(
        img,
        mask.mask,
        cfg,
        argv.out,
        frameId,
        undefined,
        undefined,
        undefined,
        model,
      );
      manifest.frames.push(out.record);
    } catch (e) {
      if (e instanceof EmptyMask) {
        process.stderr.write(`warning: ${file}: ${e.message}, skipping\n`);
        skipped += 1;
        continue;
      }
      throw e;
    }
  }
  writeManifest(path.join(argv.out, "manifest.json"), manifest);
  process.stdout.write(
    JSON.stringify({ out: argv.out, frames: manifest.frames.length, skipped }) + "\n",
  );
  return 0;
}

function runCo3dConvert(argv: CommonArgs & { sequence: string; out: string }): number {
  const result = convertCo3dSequence(argv.sequence, argv.out, configFrom(argv), (m) =>
    process.stderr.write(`warning: ${m}\n`),
  );
  process.stdout.write(
    JSON.stringify({
      manifest: result.manifestPath,
      converted: result.converted,
      skipped: result.skipped,
    }) + "\n",
  );
  return 0;
}

export function main(args: string[]): number {
  let exitCode = 1;
  const parser = yargs(args)
    .scriptName("zspose-extract")
    .usage("$0 <command> [options]")
    .option("side", {
      type: "number",
      default: DEFAULT_CONFIG.inputSide,
      describe: "model input resolution (multiple of 8)",
    })
    .option("weights", { type: "string", describe: "path to a zspose-vit-v1 weights file" })
    .option("seed", {
      type: "string",
      default: DEFAULT_CONFIG.weightsSeed,
      describe: "seed text for synthesized weights",
    })
    .command(
      "extract",
      "extract feature grids from images + masks",
      (y) =>
        y
          .option("images", { type: "string", demandOption: true })
          .option("masks", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true }),
      (argv) => {
        exitCode = runExtract(argv as never);
      },
    )
    .command(
      "co3d-convert",
      "convert an annotated capture sequence",
      (y) =>
        y
          .option("sequence", { type: "string", demandOption: true })
          .option("out", { type: "string", demandOption: true }),
      (argv) => {
        exitCode = runCo3dConvert(argv as never);
      },
    )
    .demandCommand(1, "pick a command: extract or co3d-convert")
    .strict()
    .exitProcess(false)
    .fail((msg, err) => {
      if (err) throw err;
      process.stderr.write(`error: ${msg}\n`);
      exitCode = 1;
    });

  try {
    parser.parseSync();
  } catch (e) {
    if (
      e instanceof MissingAnnotation ||
      e instanceof ModelLoadFailure ||
      e instanceof EmptyMask
    ) {
      process.stderr.write(`error: ${e.message}\n`);
      return 2;
    }
    throw e;
  }
  return exitCode;
}

if (require.main === module) {
  process.exit(main(process.argv.slice(2)));
}
