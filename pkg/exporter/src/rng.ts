/**
 * Deterministic 32-bit PRNG plumbing.
 *
 * Every random choice the exporter makes (augmentation recipes, noise
 * fields, projection matrices) flows through streams derived here, so a
 * fixed seed reproduces every output file byte for byte. Streams for
 * sub-tasks are derived by hashing a label string together with the master
 * seed; adding a new consumer never shifts the draws of an existing one,
 * and the draw order is independent of processing order.
 */

/** Uniform draw in [0, 1). */
export type Rng = () => number

/** FNV-1a 32-bit string hash. */
export function hashString(text: string): number {
  let h = 0x811c9dc5
  for (let i = 0; i < text.length; i++) {
    h ^= text.charCodeAt(i)
    h = Math.imul(h, 0x01000193)
  }
  return h >>> 0
}

/** mulberry32: tiny, fast, and plenty for augmentation jitter. */
export function mulberry32(seed: number): Rng {
  let a = seed >>> 0
  return () => {
    a = (a + 0x6d2b79f5) | 0
    let t = Math.imul(a ^ (a >>> 15), 1 | a)
    t = (t + Math.imul(t ^ (t >>> 7), 61 | t)) ^ t
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }
}

/** Independent stream for a named sub-task of a seeded run. */
export function derivedRng(seed: number, label: string): Rng {
  return mulberry32(hashString(`${label}#${seed >>> 0}`))
}

/** Uniform draw in [lo, hi). */
export function uniform(rng: Rng, lo: number, hi: number): number {
  return lo + (hi - lo) * rng()
}

/** Uniform integer in [0, n). */
export function randomInt(rng: Rng, n: number): number {
  return Math.floor(rng() * n)
}
