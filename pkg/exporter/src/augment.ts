/**
 * Pixel-space augmentations.
 *
 * An augmentation is a small serializable recipe (crop window, horizontal
 * flip, brightness/contrast jitter, uniform pixel noise) drawn from a
 * policy's ranges. Keeping the recipe explicit — rather than folding the
 * randomness into the apply step — is what lets the export manifest record
 * exactly how every augmented row was produced.
 */

import type { RasterImage } from './images.js'
import { mulberry32, uniform, type Rng } from './rng.js'

export interface CropWindow {
  /** All four as fractions of the source width/height. */
  x: number
  y: number
  w: number
  h: number
}

export interface AugmentRecipe {
  flip: boolean
  crop: CropWindow
  /** Added on the 0–1 intensity scale. */
  brightness: number
  /** Multiplied around mid-gray. */
  contrast: number
  /** Uniform noise amplitude on the 0–1 scale. */
  noise: number
  noiseSeed: number
}

export interface AugmentPolicy {
  /** Smallest crop side as a fraction of the source side. */
  cropMin: number
  brightnessRange: number
  contrastRange: [number, number]
  noiseMax: number
}

export const DEFAULT_POLICY: AugmentPolicy = {
  cropMin: 0.7,
  brightnessRange: 0.15,
  contrastRange: [0.8, 1.25],
  noiseMax: 0.03,
}

/** The recipe that maps every image to itself. */
export function identityRecipe(): AugmentRecipe {
  return {
    flip: false,
    crop: { x: 0, y: 0, w: 1, h: 1 },
    brightness: 0,
    contrast: 1,
    noise: 0,
    noiseSeed: 0,
  }
}

export function drawRecipe(rng: Rng, policy: AugmentPolicy = DEFAULT_POLICY): AugmentRecipe {
  const w = uniform(rng, policy.cropMin, 1)
  const h = uniform(rng, policy.cropMin, 1)
  const x = uniform(rng, 0, 1 - w)
  const y = uniform(rng, 0, 1 - h)
  return {
    flip: rng() < 0.5,
    crop: { x, y, w, h },
    brightness: uniform(rng, -policy.brightnessRange, policy.brightnessRange),
    contrast: uniform(rng, policy.contrastRange[0], policy.contrastRange[1]),
    noise: uniform(rng, 0, policy.noiseMax),
    noiseSeed: Math.floor(rng() * 0x100000000),
  }
}

function clampByte(v: number): number {
  return v < 0 ? 0 : v > 255 ? 255 : Math.round(v)
}

export function applyRecipe(image: RasterImage, recipe: AugmentRecipe): RasterImage {
  const cropX = Math.min(image.width - 1, Math.round(recipe.crop.x * image.width))
  const cropY = Math.min(image.height - 1, Math.round(recipe.crop.y * image.height))
  const cropW = Math.max(1, Math.min(image.width - cropX, Math.round(recipe.crop.w * image.width)))
  const cropH = Math.max(1, Math.min(image.height - cropY, Math.round(recipe.crop.h * image.height)))

  const noise = recipe.noise > 0 ? mulberry32(recipe.noiseSeed) : null
  const pixels = new Uint8Array(cropW * cropH * 3)
  for (let row = 0; row < cropH; row++) {
    for (let col = 0; col < cropW; col++) {
      const srcCol = recipe.flip ? cropX + cropW - 1 - col : cropX + col
      const src = 3 * ((cropY + row) * image.width + srcCol)
      const dst = 3 * (row * cropW + col)
      for (let c = 0; c < 3; c++) {
        let v = image.pixels[src + c]! / 255
        v = (v - 0.5) * recipe.contrast + 0.5 + recipe.brightness
        if (noise) v += recipe.noise * (2 * noise() - 1)
        pixels[dst + c] = clampByte(v * 255)
      }
    }
  }
  return { width: cropW, height: cropH, pixels }
}
