/**
 * Image loading for class-folder datasets.
 *
 * A dataset is a directory with one subfolder per class; every supported
 * image inside a class folder becomes one sample. Decoding reduces all
 * inputs to 8-bit RGB rasters so the rest of the pipeline never cares
 * about the source format. PNG and JPEG come from pngjs/jpeg-js; binary
 * PGM/PPM (P5/P6) are parsed here since they are occasionally handy for
 * tiny hand-written fixtures.
 */

import { readFileSync, readdirSync, statSync } from 'node:fs'
import { extname, join } from 'node:path'
import jpeg from 'jpeg-js'
import { PNG } from 'pngjs'

export interface RasterImage {
  width: number
  height: number
  /** Row-major RGB, 3 bytes per pixel. */
  pixels: Uint8Array
}

export class ImageReadError extends Error {}

export const SUPPORTED_EXTENSIONS = ['.png', '.jpg', '.jpeg', '.pgm', '.ppm']

function rgbaToRgb(data: Uint8Array, width: number, height: number): Uint8Array {
  const out = new Uint8Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    out[3 * i] = data[4 * i]!
    out[3 * i + 1] = data[4 * i + 1]!
    out[3 * i + 2] = data[4 * i + 2]!
  }
  return out
}

function decodePnm(buf: Buffer, path: string): RasterImage {
  // Binary PGM ("P5") and PPM ("P6"): header tokens separated by
  // whitespace, '#' comments allowed, single whitespace byte before the
  // pixel payload.
  const magic = buf.toString('ascii', 0, 2)
  if (magic !== 'P5' && magic !== 'P6') {
    throw new ImageReadError(`cannot read ${path}: unsupported PNM magic ${magic}`)
  }
  let pos = 2
  const tokens: number[] = []
  while (tokens.length < 3 && pos < buf.length) {
    const ch = buf[pos]!
    if (ch === 0x23) {
      // comment: skip to end of line
      while (pos < buf.length && buf[pos] !== 0x0a) pos++
      pos++
    } else if (ch === 0x20 || ch === 0x09 || ch === 0x0a || ch === 0x0d) {
      pos++
    } else {
      let start = pos
      while (pos < buf.length && buf[pos]! > 0x20) pos++
      tokens.push(Number(buf.toString('ascii', start, pos)))
    }
  }
  const [width, height, maxval] = tokens
  if (
    tokens.length < 3 ||
    !Number.isInteger(width) || width! <= 0 ||
    !Number.isInteger(height) || height! <= 0
  ) {
    throw new ImageReadError(`cannot read ${path}: malformed PNM header`)
  }
  if (maxval !== 255) {
    throw new ImageReadError(`cannot read ${path}: only maxval 255 PNM is supported`)
  }
  pos++ // the single whitespace byte after the header
  const channels = magic === 'P6' ? 3 : 1
  const need = width! * height! * channels
  if (buf.length - pos < need) {
    throw new ImageReadError(
      `cannot read ${path}: expected ${need} pixel bytes, found ${buf.length - pos}`,
    )
  }
  const raw = buf.subarray(pos, pos + need)
  let pixels: Uint8Array
  if (channels === 3) {
    pixels = new Uint8Array(raw)
  } else {
    pixels = new Uint8Array(width! * height! * 3)
    for (let i = 0; i < width! * height!; i++) {
      pixels[3 * i] = pixels[3 * i + 1] = pixels[3 * i + 2] = raw[i]!
    }
  }
  return { width: width!, height: height!, pixels }
}

/** Decode one image file to 8-bit RGB, dispatching on the extension. */
export function decodeImageFile(path: string): RasterImage {
  let buf: Buffer
  try {
    buf = readFileSync(path)
  } catch (err) {
    throw new ImageReadError(`cannot read ${path}: ${(err as Error).message}`)
  }
  const ext = extname(path).toLowerCase()
  try {
    if (ext === '.png') {
      const png = PNG.sync.read(buf)
      return {
        width: png.width,
        height: png.height,
        pixels: rgbaToRgb(png.data, png.width, png.height),
      }
    }
    if (ext === '.jpg' || ext === '.jpeg') {
      const img = jpeg.decode(buf, { useTArray: true, maxMemoryUsageInMB: 512 })
      return {
        width: img.width,
        height: img.height,
        pixels: rgbaToRgb(img.data, img.width, img.height),
      }
    }
  } catch (err) {
    if (err instanceof ImageReadError) throw err
    throw new ImageReadError(`cannot read ${path}: ${(err as Error).message}`)
  }
  if (ext === '.pgm' || ext === '.ppm') {
    return decodePnm(buf, path)
  }
  throw new ImageReadError(
    `cannot read ${path}: unsupported extension ${ext || '(none)'}; ` +
      `supported: ${SUPPORTED_EXTENSIONS.join(', ')}`,
  )
}

/** Sorted names of the class subfolders of a dataset directory. */
export function listClassFolders(datasetDir: string): string[] {
  let entries
  try {
    entries = readdirSync(datasetDir, { withFileTypes: true })
  } catch (err) {
    throw new ImageReadError(
      `cannot list dataset directory ${datasetDir}: ${(err as Error).message}`,
    )
  }
  const names = entries
    .filter(e => e.isDirectory())
    .map(e => e.name)
    .sort()
  if (names.length === 0) {
    throw new ImageReadError(
      `dataset directory ${datasetDir} has no class subfolders`,
    )
  }
  return names
}

/** Sorted supported image files directly inside a class folder. */
export function listImages(classDir: string): string[] {
  let entries
  try {
    entries = readdirSync(classDir, { withFileTypes: true })
  } catch (err) {
    throw new ImageReadError(
      `cannot list class folder ${classDir}: ${(err as Error).message}`,
    )
  }
  const files = entries
    .filter(
      e =>
        e.isFile() &&
        SUPPORTED_EXTENSIONS.includes(extname(e.name).toLowerCase()),
    )
    .map(e => e.name)
    .sort()
  if (files.length === 0) {
    throw new ImageReadError(`class folder ${classDir} has no supported images`)
  }
  return files
}
