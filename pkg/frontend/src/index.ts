export { EmptyMask, ModelLoadFailure, MissingAnnotation } from "./errors";
export {
  DEFAULT_CONFIG,
  ExtractionConfig,
  FrameFeatures,
  DepthInput,
  FrameOutput,
  buildModel,
  getModel,
  extractFrame,
  extractFrameFeatures,
  logBinDescriptors,
  validateConfig,
} from "./extract";
export { convertCo3dSequence, ConversionResult } from "./co3d";
export {
  writeFeatureFile,
  writeDepthFile,
  writeManifest,
  identityExtrinsics,
  FrameRecordJson,
  ManifestJson,
  IntrinsicsJson,
  CropJson,
} from "./formats";
export { VIT_SMALL, VitConfig, VitModel, seededModel, loadModel, extractKeys } from "./vit";
export { readPng, readMaskPng, readDepthPng, maskBBox, padBBox, RawImage, BBox } from "./image";
