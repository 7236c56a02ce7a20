/**
 * Dataset export.
 *
 * One run walks a class-folder dataset, embeds every image (plus optional
 * augmented copies and per-image view batches), embeds the prompt ensemble
 * for every class, and writes the whole bundle in the binary formats the
 * downstream calibration toolkit reads:
 *
 *   <prefix>_features.vlf / <prefix>_labels.vll   image rows + labels
 *   prompts/class_NNN.vlf + prompts_manifest.txt  per-class prompt matrices
 *   prototypes.vlf                                renormalized ensemble means
 *   views/view_NNNN.vlf + views_manifest.txt      per-image view batches
 *   export_manifest.json                          provenance sidecar
 *
 * Every embedding row is ℓ2-normalized in double precision before the
 * float32 write. All files are written atomically, and the manifest
 * contains no timestamps, so a rerun with the same inputs and seed is
 * byte-identical.
 */

import { join } from 'node:path'
import {
  applyRecipe,
  drawRecipe,
  DEFAULT_POLICY,
  type AugmentPolicy,
  type AugmentRecipe,
} from './augment.js'
import { resolveEncoder, type Encoder } from './encoder.js'
import { writeAtomic, writeLabelsFile, writeMatrixFile } from './formats.js'
import {
  decodeImageFile,
  listClassFolders,
  listImages,
  type RasterImage,
} from './images.js'
import { derivedRng } from './rng.js'

export interface ExportManifest {
  /** Encoder id, e.g. "hashproj-64". */
  modelId: string
  /** Directory with one subfolder per class. */
  datasetDir: string
  /** Class order; empty array means "all subfolders, sorted". */
  classNames: string[]
  /** Prompt templates; "{}" is replaced with the class name. */
  templates: string[]
  /** Extra augmented copies written per image (0 = none). */
  supportAugments: number
  /** Rows per view batch, original included (0 = no view batches). */
  viewsPerImage: number
  outDir: string
  /** Basename prefix for the feature/label files. */
  prefix: string
  seed: number
  augmentPolicy?: AugmentPolicy
}

export interface ExportResult {
  /** Written files, relative to outDir. */
  files: string[]
  /** Number of source images. */
  samples: number
  /** Rows in the features file (samples plus augmented copies). */
  rows: number
  classes: number
  dim: number
}

export class ExportError extends Error {}

export const DEFAULT_TEMPLATES = [
  'a photo of a {}.',
  'a close-up photo of a {}.',
  'a bright photo of a {}.',
  'a photo of a small {}.',
]

export function validateManifest(manifest: ExportManifest): void {
  if (!manifest.modelId) throw new ExportError('model id must be non-empty')
  if (!manifest.datasetDir) throw new ExportError('dataset directory must be set')
  if (!manifest.outDir) throw new ExportError('output directory must be set')
  if (!manifest.prefix) throw new ExportError('output prefix must be non-empty')
  if (manifest.templates.length === 0) {
    throw new ExportError('at least one prompt template is required')
  }
  const seen = new Set(manifest.classNames)
  if (seen.size !== manifest.classNames.length) {
    throw new ExportError('class names must be unique')
  }
  for (const count of [manifest.supportAugments, manifest.viewsPerImage]) {
    if (!Number.isInteger(count) || count < 0) {
      throw new ExportError(`augmentation counts must be non-negative integers, got ${count}`)
    }
  }
  if (!Number.isInteger(manifest.seed)) {
    throw new ExportError(`seed must be an integer, got ${manifest.seed}`)
  }
}

export function promptFor(template: string, className: string): string {
  return template.includes('{}')
    ? template.replaceAll('{}', className)
    : `${template} ${className}`
}

function normalized(raw: Float64Array, what: string): Float32Array {
  let sq = 0
  for (let i = 0; i < raw.length; i++) sq += raw[i]! * raw[i]!
  const norm = Math.sqrt(sq)
  if (!Number.isFinite(norm) || norm < 1e-12) {
    throw new ExportError(
      `embedding for ${what} has norm ${norm}; the encoder output is degenerate`,
    )
  }
  const out = new Float32Array(raw.length)
  for (let i = 0; i < raw.length; i++) out[i] = raw[i]! / norm
  return out
}

function concatRows(rows: Float32Array[], dim: number): Float32Array {
  const out = new Float32Array(rows.length * dim)
  rows.forEach((row, i) => out.set(row, i * dim))
  return out
}

export function exportDataset(
  manifest: ExportManifest,
  encoder?: Encoder,
): ExportResult {
  validateManifest(manifest)
  const enc = encoder ?? resolveEncoder(manifest.modelId)
  const dim = enc.dim
  const policy = manifest.augmentPolicy ?? DEFAULT_POLICY

  const classNames =
    manifest.classNames.length > 0
      ? manifest.classNames
      : listClassFolders(manifest.datasetDir)
  if (classNames.length < 2) {
    throw new ExportError(
      `need at least 2 classes to export a classification dataset, got ${classNames.length}`,
    )
  }

  const files: string[] = []
  const featureRows: Float32Array[] = []
  const labels: number[] = []
  const viewBatches: Float32Array[][] = []
  const imagesPerClass: Record<string, number> = {}

  let sourceImages = 0
  const embedAugmented = (image: RasterImage, recipe: AugmentRecipe, what: string) =>
    normalized(enc.encodeImage(applyRecipe(image, recipe)), what)

  for (let cls = 0; cls < classNames.length; cls++) {
    const name = classNames[cls]!
    const classDir = join(manifest.datasetDir, name)
    const imageFiles = listImages(classDir)
    imagesPerClass[name] = imageFiles.length
    for (const fileName of imageFiles) {
      const samplePath = `${name}/${fileName}`
      sourceImages++
      const image = decodeImageFile(join(classDir, fileName))
      const original = normalized(enc.encodeImage(image), samplePath)
      featureRows.push(original)
      labels.push(cls)
      for (let a = 1; a <= manifest.supportAugments; a++) {
        const rng = derivedRng(manifest.seed, `augment:${samplePath}:${a}`)
        featureRows.push(
          embedAugmented(image, drawRecipe(rng, policy), `${samplePath} (augment ${a})`),
        )
        labels.push(cls)
      }
      if (manifest.viewsPerImage > 0) {
        const batch: Float32Array[] = [original]
        for (let v = 1; v < manifest.viewsPerImage; v++) {
          const rng = derivedRng(manifest.seed, `view:${samplePath}:${v}`)
          batch.push(
            embedAugmented(image, drawRecipe(rng, policy), `${samplePath} (view ${v})`),
          )
        }
        viewBatches.push(batch)
      }
    }
  }

  const out = manifest.outDir

  const featuresName = `${manifest.prefix}_features.vlf`
  writeMatrixFile(join(out, featuresName), {
    rows: featureRows.length,
    cols: dim,
    values: concatRows(featureRows, dim),
  })
  files.push(featuresName)

  const labelsName = `${manifest.prefix}_labels.vll`
  writeLabelsFile(join(out, labelsName), labels)
  files.push(labelsName)

  // Prompt ensembles: one matrix per class, plus a manifest whose line
  // order is the class order (comment lines name each class).
  const manifestLines = ['# class order; one prompt-ensemble matrix per line']
  const prototypeRows: Float32Array[] = []
  for (let cls = 0; cls < classNames.length; cls++) {
    const name = classNames[cls]!
    const rows = manifest.templates.map((template, t) =>
      normalized(enc.encodeText(promptFor(template, name)), `prompt ${t} of class ${name}`),
    )
    const fileName = `prompts/class_${String(cls).padStart(3, '0')}.vlf`
    writeMatrixFile(join(out, fileName), {
      rows: rows.length,
      cols: dim,
      values: concatRows(rows, dim),
    })
    files.push(fileName)
    manifestLines.push(`# class ${cls}: ${name}`, fileName)

    const mean = new Float64Array(dim)
    for (const row of rows) {
      for (let i = 0; i < dim; i++) mean[i] = mean[i]! + row[i]!
    }
    for (let i = 0; i < dim; i++) mean[i] = mean[i]! / rows.length
    prototypeRows.push(normalized(mean, `prototype of class ${name}`))
  }
  writeAtomic(join(out, 'prompts_manifest.txt'), manifestLines.join('\n') + '\n')
  files.push('prompts_manifest.txt')

  writeMatrixFile(join(out, 'prototypes.vlf'), {
    rows: classNames.length,
    cols: dim,
    values: concatRows(prototypeRows, dim),
  })
  files.push('prototypes.vlf')

  if (manifest.viewsPerImage > 0) {
    const pad = Math.max(4, String(viewBatches.length - 1).length)
    const viewLines = ['# one view-batch matrix per sample, in label order']
    viewBatches.forEach((batch, idx) => {
      const fileName = `views/view_${String(idx).padStart(pad, '0')}.vlf`
      writeMatrixFile(join(out, fileName), {
        rows: batch.length,
        cols: dim,
        values: concatRows(batch, dim),
      })
      files.push(fileName)
      viewLines.push(fileName)
    })
    writeAtomic(join(out, 'views_manifest.txt'), viewLines.join('\n') + '\n')
    files.push('views_manifest.txt')
  }

  const sidecar = {
    format: 'vlexport/1',
    model: enc.id,
    dim,
    dataset: manifest.datasetDir,
    prefix: manifest.prefix,
    seed: manifest.seed,
    classNames,
    templates: manifest.templates,
    imagesPerClass,
    supportAugments: manifest.supportAugments,
    viewsPerImage: manifest.viewsPerImage,
    augmentation: {
      policy,
      streams:
        'recipe for augmented copy A of sample CLASS/FILE is drawn from ' +
        "stream 'augment:CLASS/FILE:A'; view V from 'view:CLASS/FILE:V'; " +
        'streams are keyed with the run seed, so one seed fixes every recipe',
    },
    files,
  }
  writeAtomic(join(out, 'export_manifest.json'), JSON.stringify(sidecar, null, 2) + '\n')
  files.push('export_manifest.json')

  return {
    files,
    samples: sourceImages,
    rows: featureRows.length,
    classes: classNames.length,
    dim,
  }
}
