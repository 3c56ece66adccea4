//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants are kept distinct
//! where callers (the CLI in particular) need to map failures to different
//! exit codes: usage/config problems, data problems, and numeric failures.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    // numeric core
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: empty input")]
    EmptyInput { op: &'static str },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("{op}: zero-norm input")]
    ZeroNorm { op: &'static str },

    // sinc filterbank
    #[error("invalid frequency range: {detail}")]
    InvalidFrequencyRange { detail: String },
    #[error("filter index {index} out of range (count {count})")]
    FilterIndex { index: usize, count: usize },
    #[error("filter {filter} has zero bandwidth: all-zero kernel has no frequency response")]
    ZeroKernel { filter: usize },

    // model / config
    #[error("invalid config: {detail}")]
    InvalidConfig { detail: String },
    #[error("checkpoint was trained with {checkpoint} classes but {requested} were requested")]
    ClassCountMismatch { checkpoint: usize, requested: usize },

    // checkpoint I/O
    #[error("{path}: not a checkpoint (bad magic bytes)")]
    NotACheckpoint { path: PathBuf },
    #[error("checkpoint version {found} unsupported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("{path}: checkpoint truncated")]
    CheckpointTruncated { path: PathBuf },
    #[error("checkpoint corrupt: {detail}")]
    CheckpointCorrupt { detail: String },

    // audio / dataset
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: not a WAV file ({detail})")]
    NotWav { path: PathBuf, detail: String },
    #[error("{path}: expected mono audio, found {channels} channels")]
    MultiChannel { path: PathBuf, channels: u16 },
    #[error("{path}: unsupported WAV encoding ({detail})")]
    UnsupportedCodec { path: PathBuf, detail: String },
    #[error("no usable audio under {root}")]
    EmptyCorpus { root: PathBuf },
    #[error("mixed sample rates: manifest is {expected} Hz but {path} is {found} Hz")]
    MixedSampleRates {
        expected: u32,
        found: u32,
        path: PathBuf,
    },
    #[error("manifest parse error at line {line}: {detail}")]
    ManifestParse { line: usize, detail: String },

    // train / eval
    #[error("{split} split is empty")]
    EmptySplit { split: &'static str },
    #[error("gallery is empty")]
    EmptyGallery,
    #[error("no probe utterances")]
    EmptyProbes,
    #[error("probe speaker {speaker} is not enrolled in the gallery")]
    UnenrolledSpeaker { speaker: String },
    #[error("non-finite {array} at batch {batch}")]
    NumericFailure { batch: u64, array: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
