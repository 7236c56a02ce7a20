export {
  applyRecipe,
  drawRecipe,
  identityRecipe,
  DEFAULT_POLICY,
  type AugmentPolicy,
  type AugmentRecipe,
  type CropWindow,
} from './augment.js'
export {
  HashProjectionEncoder,
  resolveEncoder,
  type Encoder,
} from './encoder.js'
export {
  DEFAULT_TEMPLATES,
  ExportError,
  exportDataset,
  promptFor,
  validateManifest,
  type ExportManifest,
  type ExportResult,
} from './export.js'
export {
  FormatError,
  LABELS_MAGIC,
  MATRIX_MAGIC,
  decodeLabels,
  decodeMatrix,
  encodeLabels,
  encodeMatrix,
  readLabelsFile,
  readMatrixFile,
  writeAtomic,
  writeLabelsFile,
  writeMatrixFile,
  type Matrix,
} from './formats.js'
export {
  ImageReadError,
  SUPPORTED_EXTENSIONS,
  decodeImageFile,
  listClassFolders,
  listImages,
  type RasterImage,
} from './images.js'
export { derivedRng, hashString, mulberry32, randomInt, uniform, type Rng } from './rng.js'
