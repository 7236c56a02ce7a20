import { mkdirSync, mkdtempSync, writeFileSync } from 'node:fs'
import { tmpdir } from 'node:os'
import { join } from 'node:path'
import { PNG } from 'pngjs'
import { mulberry32 } from '../src/rng.js'
import type { RasterImage } from '../src/images.js'

export function tempDir(prefix: string): string {
  return mkdtempSync(join(tmpdir(), `${prefix}-`))
}

export function pngBytes(
  width: number,
  height: number,
  paint: (x: number, y: number) => [number, number, number],
): Buffer {
  const png = new PNG({ width, height })
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const i = 4 * (y * width + x)
      const [r, g, b] = paint(x, y)
      png.data[i] = r
      png.data[i + 1] = g
      png.data[i + 2] = b
      png.data[i + 3] = 255
    }
  }
  return PNG.sync.write(png)
}

export function raster(
  width: number,
  height: number,
  paint: (x: number, y: number) => [number, number, number],
): RasterImage {
  const pixels = new Uint8Array(width * height * 3)
  for (let y = 0; y < height; y++) {
    for (let x = 0; x < width; x++) {
      const [r, g, b] = paint(x, y)
      pixels.set([r, g, b], 3 * (y * width + x))
    }
  }
  return { width, height, pixels }
}

/**
 * Write a tiny class-folder dataset of seeded noisy color-block PNGs.
 * Returns the dataset root.
 */
export function writeDataset(
  root: string,
  classNames: string[],
  imagesPerClass: number,
  seed = 0,
): string {
  classNames.forEach((name, cls) => {
    const dir = join(root, name)
    mkdirSync(dir, { recursive: true })
    for (let i = 0; i < imagesPerClass; i++) {
      const rng = mulberry32(seed + 1000 * cls + i)
      const base: [number, number, number] = [
        (60 + 70 * cls) % 256,
        (200 - 50 * cls + 256) % 256,
        (40 * cls + 90) % 256,
      ]
      const bytes = pngBytes(24, 24, (x, y) => [
        Math.min(255, base[0] + Math.floor(40 * rng()) + (x > 12 ? 30 : 0)),
        Math.min(255, base[1] + Math.floor(40 * rng())),
        Math.min(255, base[2] + Math.floor(40 * rng()) + (y > 12 ? 30 : 0)),
      ])
      writeFileSync(join(dir, `img_${String(i).padStart(2, '0')}.png`), bytes)
    }
  })
  return root
}

export function rowNorm(values: Float32Array, dim: number, row: number): number {
  let sq = 0
  for (let i = 0; i < dim; i++) sq += values[row * dim + i]! ** 2
  return Math.sqrt(sq)
}
