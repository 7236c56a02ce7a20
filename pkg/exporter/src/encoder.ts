/**
 * Embedding backends.
 *
 * The exporter only needs something that maps an RGB raster or a prompt
 * string to a fixed-dimension vector; everything downstream (normalizing,
 * file layout, manifests) is backend-agnostic. The built-in backend is a
 * deterministic hash-projection encoder: it downsamples the image to a
 * coarse grid (or hashes prompt character trigrams into a bag), then
 * applies a fixed pseudo-random linear projection derived from the model
 * id. It produces no semantics, but it is fast, dependency-free, and
 * bit-reproducible, which is exactly what the downstream toolkit's
 * validation and determinism contracts exercise. Real model weights are a
 * network download away and therefore out of reach for an offline batch
 * job; plug in another `Encoder` implementation to use one.
 */

import type { RasterImage } from './images.js'
import { derivedRng, hashString } from './rng.js'

export interface Encoder {
  readonly id: string
  readonly dim: number
  /** Raw (un-normalized) embedding of an RGB raster. */
  encodeImage(image: RasterImage): Float64Array
  /** Raw (un-normalized) embedding of a prompt string. */
  encodeText(prompt: string): Float64Array
}

const GRID = 8
const TEXT_BUCKETS = GRID * GRID * 3
/** Grid cells (or trigram buckets) plus a constant bias component. */
const SIGNATURE_LEN = GRID * GRID * 3 + 1

function imageSignature(image: RasterImage): Float64Array {
  const sig = new Float64Array(SIGNATURE_LEN)
  const counts = new Float64Array(GRID * GRID)
  for (let row = 0; row < image.height; row++) {
    const gy = Math.min(GRID - 1, Math.floor((row * GRID) / image.height))
    for (let col = 0; col < image.width; col++) {
      const gx = Math.min(GRID - 1, Math.floor((col * GRID) / image.width))
      const cell = gy * GRID + gx
      const src = 3 * (row * image.width + col)
      sig[3 * cell] = sig[3 * cell]! + image.pixels[src]!
      sig[3 * cell + 1] = sig[3 * cell + 1]! + image.pixels[src + 1]!
      sig[3 * cell + 2] = sig[3 * cell + 2]! + image.pixels[src + 2]!
      counts[cell] = counts[cell]! + 1
    }
  }
  for (let cell = 0; cell < GRID * GRID; cell++) {
    const n = counts[cell]! || 1
    for (let c = 0; c < 3; c++) {
      // center so a mid-gray image does not dominate the bias component
      sig[3 * cell + c] = sig[3 * cell + c]! / (255 * n) - 0.5
    }
  }
  sig[SIGNATURE_LEN - 1] = 1
  return sig
}

function textSignature(prompt: string): Float64Array {
  const sig = new Float64Array(SIGNATURE_LEN)
  const text = prompt.toLowerCase()
  let total = 0
  for (let i = 0; i + 3 <= text.length; i++) {
    const bucket = hashString(text.slice(i, i + 3)) % TEXT_BUCKETS
    sig[bucket] = sig[bucket]! + 1
    total++
  }
  const scale = 1 / Math.sqrt(total + 1)
  for (let i = 0; i < TEXT_BUCKETS; i++) sig[i] = sig[i]! * scale
  sig[SIGNATURE_LEN - 1] = 1
  return sig
}

export class HashProjectionEncoder implements Encoder {
  readonly id: string
  readonly dim: number
  private imageProj: Float64Array | null = null
  private textProj: Float64Array | null = null

  constructor(dim = 64, id?: string) {
    if (!Number.isInteger(dim) || dim < 2 || dim > 4096) {
      throw new Error(`encoder dim must be an integer in [2, 4096], got ${dim}`)
    }
    this.dim = dim
    this.id = id ?? `hashproj-${dim}`
  }

  private projection(kind: 'image' | 'text'): Float64Array {
    const cached = kind === 'image' ? this.imageProj : this.textProj
    if (cached) return cached
    const rng = derivedRng(hashString(this.id), `${kind}-projection`)
    const proj = new Float64Array(this.dim * SIGNATURE_LEN)
    for (let i = 0; i < proj.length; i++) proj[i] = 2 * rng() - 1
    if (kind === 'image') this.imageProj = proj
    else this.textProj = proj
    return proj
  }

  private project(sig: Float64Array, proj: Float64Array): Float64Array {
    const out = new Float64Array(this.dim)
    for (let d = 0; d < this.dim; d++) {
      let acc = 0
      const base = d * SIGNATURE_LEN
      for (let i = 0; i < SIGNATURE_LEN; i++) acc += proj[base + i]! * sig[i]!
      out[d] = acc
    }
    return out
  }

  encodeImage(image: RasterImage): Float64Array {
    return this.project(imageSignature(image), this.projection('image'))
  }

  encodeText(prompt: string): Float64Array {
    return this.project(textSignature(prompt), this.projection('text'))
  }
}

/**
 * Resolve a model identifier to an encoder.
 *
 * Built-in ids are `hashproj-<dim>` (e.g. `hashproj-64`). Anything else is
 * assumed to name remote pretrained weights, which an offline export
 * cannot fetch — the error says so rather than failing deep in a download
 * stack.
 */
export function resolveEncoder(modelId: string): Encoder {
  const match = /^hashproj-(\d+)$/.exec(modelId)
  if (match) {
    return new HashProjectionEncoder(Number(match[1]), modelId)
  }
  throw new Error(
    `model weights for ${JSON.stringify(modelId)} are not obtainable here: ` +
      `this tool runs offline and ships only the deterministic built-in ` +
      `encoders 'hashproj-<dim>' (e.g. hashproj-64). Pass one of those, or ` +
      `call exportDataset() with your own Encoder implementation.`,
  )
}
