/**
 * Binary matrix and label files.
 *
 * Matrix files: ASCII magic "VLF1", uint32 row count, uint32 column count,
 * then row-major float32 values. Label files: ASCII magic "VLL1", uint32
 * count, then uint32 class indices. All integers and floats are
 * little-endian regardless of platform. Writes are atomic: the payload
 * lands in a temp file in the target directory and is renamed into place,
 * so a crashed export never leaves a half-written file behind.
 */

import { randomBytes } from 'node:crypto'
import { mkdirSync, readFileSync, renameSync, writeFileSync } from 'node:fs'
import { dirname, join } from 'node:path'

export const MATRIX_MAGIC = 'VLF1'
export const LABELS_MAGIC = 'VLL1'

const HEADER_BYTES = 12 // magic + two uint32 fields
const LABEL_HEADER_BYTES = 8 // magic + one uint32 field

export class FormatError extends Error {}

export interface Matrix {
  rows: number
  cols: number
  /** Row-major values, length rows * cols. */
  values: Float32Array
}

function checkDim(value: number, what: string): void {
  if (!Number.isInteger(value) || value <= 0 || value > 0xffffffff) {
    throw new FormatError(`${what} must be a positive uint32, got ${value}`)
  }
}

export function encodeMatrix(matrix: Matrix): Buffer {
  const { rows, cols, values } = matrix
  checkDim(rows, 'row count')
  checkDim(cols, 'column count')
  if (values.length !== rows * cols) {
    throw new FormatError(
      `matrix payload has ${values.length} values, expected ${rows * cols}`,
    )
  }
  const buf = Buffer.allocUnsafe(HEADER_BYTES + 4 * values.length)
  buf.write(MATRIX_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(rows, 4)
  buf.writeUInt32LE(cols, 8)
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(values[i]!, HEADER_BYTES + 4 * i)
  }
  return buf
}

export function decodeMatrix(buf: Buffer, source = 'matrix data'): Matrix {
  if (buf.length < HEADER_BYTES) {
    throw new FormatError(`${source}: too short for a matrix header`)
  }
  const magic = buf.toString('ascii', 0, 4)
  if (magic !== MATRIX_MAGIC) {
    throw new FormatError(
      `${source}: bad magic ${JSON.stringify(magic)}, expected ${MATRIX_MAGIC}`,
    )
  }
  const rows = buf.readUInt32LE(4)
  const cols = buf.readUInt32LE(8)
  if (rows === 0 || cols === 0) {
    throw new FormatError(`${source}: header declares ${rows}x${cols} matrix`)
  }
  const expected = HEADER_BYTES + 4 * rows * cols
  if (buf.length !== expected) {
    throw new FormatError(
      `${source}: expected ${expected} bytes for ${rows}x${cols}, got ${buf.length}`,
    )
  }
  const values = new Float32Array(rows * cols)
  for (let i = 0; i < values.length; i++) {
    values[i] = buf.readFloatLE(HEADER_BYTES + 4 * i)
  }
  return { rows, cols, values }
}

export function encodeLabels(labels: ArrayLike<number>): Buffer {
  const buf = Buffer.allocUnsafe(LABEL_HEADER_BYTES + 4 * labels.length)
  buf.write(LABELS_MAGIC, 0, 'ascii')
  buf.writeUInt32LE(labels.length, 4)
  for (let i = 0; i < labels.length; i++) {
    const value = labels[i]!
    if (!Number.isInteger(value) || value < 0 || value > 0xffffffff) {
      throw new FormatError(`label ${i} must be a non-negative uint32, got ${value}`)
    }
    buf.writeUInt32LE(value, LABEL_HEADER_BYTES + 4 * i)
  }
  return buf
}

export function decodeLabels(buf: Buffer, source = 'label data'): Uint32Array {
  if (buf.length < LABEL_HEADER_BYTES) {
    throw new FormatError(`${source}: too short for a label header`)
  }
  const magic = buf.toString('ascii', 0, 4)
  if (magic !== LABELS_MAGIC) {
    throw new FormatError(
      `${source}: bad magic ${JSON.stringify(magic)}, expected ${LABELS_MAGIC}`,
    )
  }
  const count = buf.readUInt32LE(4)
  const expected = LABEL_HEADER_BYTES + 4 * count
  if (buf.length !== expected) {
    throw new FormatError(
      `${source}: expected ${expected} bytes for ${count} labels, got ${buf.length}`,
    )
  }
  const labels = new Uint32Array(count)
  for (let i = 0; i < count; i++) {
    labels[i] = buf.readUInt32LE(LABEL_HEADER_BYTES + 4 * i)
  }
  return labels
}

/** Write a buffer atomically: temp file in the target directory, then rename. */
export function writeAtomic(path: string, data: Buffer | string): void {
  mkdirSync(dirname(path), { recursive: true })
  const tmp = join(
    dirname(path),
    `.tmp-${process.pid}-${randomBytes(6).toString('hex')}`,
  )
  writeFileSync(tmp, data)
  renameSync(tmp, path)
}

export function writeMatrixFile(path: string, matrix: Matrix): void {
  writeAtomic(path, encodeMatrix(matrix))
}

export function readMatrixFile(path: string): Matrix {
  return decodeMatrix(readFileSync(path), path)
}

export function writeLabelsFile(path: string, labels: ArrayLike<number>): void {
  writeAtomic(path, encodeLabels(labels))
}

export function readLabelsFile(path: string): Uint32Array {
  return decodeLabels(readFileSync(path), path)
}
