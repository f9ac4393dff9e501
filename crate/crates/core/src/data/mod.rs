//! Dataset manifests, training-sample assembly, and synthetic pairs.

mod manifest;
mod sample;
mod synth;

pub use manifest::{Category, DatasetManifest, ManifestEntry, Split, MANIFEST_COLUMNS};
pub use sample::{make_training_sample, InMemoryPairs, ManifestPairs, PairSource, TrainingSample};
pub use synth::{
    is_test_index, pair_seed, synth_pair, synth_scene, write_synthetic_dataset, FlashFalloff, SynthScene,
    SynthSceneSpec, AMBIENT_RANGE, SHADOW_FACTOR,
};
