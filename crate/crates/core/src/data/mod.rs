//! Audio ingestion, dataset manifests, batch sampling, and the synthetic
//! corpus generator.

pub mod manifest;
pub mod sampler;
pub mod synth;
pub mod wav;

pub use manifest::{
    build_manifest, read_manifest, write_manifest, DatasetManifest, Split, SplitConfig,
    UtteranceRecord,
};
pub use sampler::{BatchSpec, TrainSampler};
pub use synth::{synth_corpus, SynthConfig};
pub use wav::{load_wav, probe_wav, save_wav_i16, WavInfo};
