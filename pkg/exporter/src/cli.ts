#!/usr/bin/env node
/**
 * Command-line front end: flags map one-to-one onto ExportManifest fields.
 */

import { parseArgs } from 'node:util'
import { realpathSync } from 'node:fs'
import { basename, resolve } from 'node:path'
import { pathToFileURL } from 'node:url'
import { DEFAULT_TEMPLATES, exportDataset, type ExportManifest } from './export.js'

const USAGE = `usage: vlexport --dataset DIR --out DIR [options]

Embed a class-folder image dataset and write it in the binary formats the
calibration toolkit consumes (features/labels, per-class prompt matrices
with a class-order manifest, prototypes, optional per-image view batches,
and a JSON provenance sidecar).

options:
  --dataset DIR          directory with one subfolder per class (required)
  --out DIR              output directory (required)
  --model ID             encoder id (default: hashproj-64)
  --classes A,B,C        class order; default: all subfolders, sorted
  --template TEXT        prompt template, repeatable; '{}' is replaced with
                         the class name (default: a small built-in set)
  --prefix NAME          feature/label basename prefix (default: dataset
                         folder name)
  --support-augments N   extra augmented copies per image (default: 0)
  --views N              rows per view batch, original included
                         (default: 0 = no view batches)
  --seed N               augmentation seed (default: 0)
  --help                 show this message
`

export function main(argv: string[]): number {
  let parsed
  try {
    parsed = parseArgs({
      args: argv,
      options: {
        dataset: { type: 'string' },
        out: { type: 'string' },
        model: { type: 'string', default: 'hashproj-64' },
        classes: { type: 'string' },
        template: { type: 'string', multiple: true },
        prefix: { type: 'string' },
        'support-augments': { type: 'string', default: '0' },
        views: { type: 'string', default: '0' },
        seed: { type: 'string', default: '0' },
        help: { type: 'boolean', default: false },
      },
      allowPositionals: false,
    })
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`)
    return 2
  }
  const opts = parsed.values
  if (opts.help) {
    process.stdout.write(USAGE)
    return 0
  }
  if (!opts.dataset || !opts.out) {
    process.stderr.write('error: --dataset and --out are required (see --help)\n')
    return 2
  }

  const counts: Record<string, number> = {}
  for (const key of ['support-augments', 'views', 'seed'] as const) {
    const value = Number(opts[key])
    if (!Number.isInteger(value)) {
      process.stderr.write(`error: --${key} must be an integer, got ${opts[key]}\n`)
      return 2
    }
    counts[key] = value
  }

  const manifest: ExportManifest = {
    modelId: opts.model!,
    datasetDir: opts.dataset,
    classNames: opts.classes
      ? opts.classes.split(',').map(s => s.trim()).filter(s => s.length > 0)
      : [],
    templates: opts.template && opts.template.length > 0 ? opts.template : DEFAULT_TEMPLATES,
    supportAugments: counts['support-augments']!,
    viewsPerImage: counts['views']!,
    outDir: opts.out,
    prefix: opts.prefix ?? basename(resolve(opts.dataset)),
    seed: counts['seed']!,
  }

  try {
    const result = exportDataset(manifest)
    process.stdout.write(
      `wrote ${result.files.length} files to ${manifest.outDir} ` +
        `(${result.classes} classes, ${result.samples} images, ` +
        `${result.rows} feature rows, dim ${result.dim})\n`,
    )
    for (const file of result.files) process.stdout.write(`  ${file}\n`)
    return 0
  } catch (err) {
    process.stderr.write(`error: ${(err as Error).message}\n`)
    return 2
  }
}

const invokedDirectly = (() => {
  const entry = process.argv[1]
  if (!entry) return false
  try {
    return import.meta.url === pathToFileURL(realpathSync(entry)).href
  } catch {
    return false
  }
})()

if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)))
}
