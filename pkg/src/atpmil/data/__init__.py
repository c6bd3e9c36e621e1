from .manifest import DatasetManifest, ManifestError, WellSample, load_manifest, write_manifest
from .imaging import augment, augment_batch, load_image, preprocess
from .sampler import balanced_batches, bin_index, random_batches, stratified_split
from .synth import synthesize_dataset, synthesize_well

__all__ = [
    "DatasetManifest",
    "ManifestError",
    "WellSample",
    "augment",
    "augment_batch",
    "balanced_batches",
    "bin_index",
    "load_image",
    "load_manifest",
    "preprocess",
    "random_batches",
    "stratified_split",
    "synthesize_dataset",
    "synthesize_well",
    "write_manifest",
]
