//! Training-batch sampling: uniform over train utterances, then uniform
//! over valid chunk offsets.
//!
//! The RNG is keyed on the batch counter, making the batch for index `k`
//! a pure function of `(seed, k)`: any prefetch depth or evaluation
//! interleaving delivers the identical batch sequence.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::manifest::{DatasetManifest, Split};
use crate::data::wav::load_wav;
use crate::error::{Error, Result};
use crate::model::amplitude_normalize;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct BatchSpec {
    pub batch_size: usize,
    pub chunk_len: usize,
    pub seed: u64,
}

/// Decoded train split held in memory, ready to cut chunks from.
pub struct TrainSampler {
    audio: Vec<Vec<f64>>,
    labels: Vec<usize>,
    spec: BatchSpec,
    /// Utterances excluded because they are shorter than one chunk.
    pub warnings: Vec<String>,
}

impl TrainSampler {
    pub fn new(manifest: &DatasetManifest, spec: BatchSpec) -> Result<Self> {
        if spec.batch_size == 0 {
            return Err(Error::InvalidConfig {
                detail: "batch_size must be >= 1".into(),
            });
        }
        let mut audio = Vec::new();
        let mut labels = Vec::new();
        let mut warnings = Vec::new();
        for record in manifest.records_in(Split::Train) {
            let path = manifest.resolve(record);
            let (samples, sr) = load_wav(&path)?;
            if sr != manifest.sample_rate {
                return Err(Error::MixedSampleRates {
                    expected: manifest.sample_rate,
                    found: sr,
                    path,
                });
            }
            if samples.len() < spec.chunk_len {
                warnings.push(format!(
                    "skipping {} ({} samples < chunk {})",
                    record.rel_path,
                    samples.len(),
                    spec.chunk_len
                ));
                continue;
            }
            let label = manifest
                .class_index(&record.speaker_id)
                .expect("record speaker is always in the manifest speaker list");
            audio.push(samples);
            labels.push(label);
        }
        if audio.is_empty() {
            return Err(Error::EmptySplit { split: "train" });
        }
        Ok(TrainSampler {
            audio,
            labels,
            spec,
            warnings,
        })
    }

    pub fn num_utterances(&self) -> usize {
        self.audio.len()
    }

    /// Deterministic batch for a given counter value. Chunks come back
    /// amplitude-normalized.
    pub fn batch(&self, batch_index: u64) -> (Tensor, Vec<usize>) {
        let BatchSpec {
            batch_size,
            chunk_len,
            seed,
        } = self.spec;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(batch_index.wrapping_add(1));
        let mut chunks = vec![0.0; batch_size * chunk_len];
        let mut labels = Vec::with_capacity(batch_size);
        for b in 0..batch_size {
            let u = rng.random_range(0..self.audio.len());
            let wave = &self.audio[u];
            let offset = rng.random_range(0..=wave.len() - chunk_len);
            chunks[b * chunk_len..(b + 1) * chunk_len]
                .copy_from_slice(&wave[offset..offset + chunk_len]);
            labels.push(self.labels[u]);
        }
        let chunks = amplitude_normalize(&Tensor::raw(vec![batch_size, chunk_len], chunks));
        (chunks, labels)
    }

    /// Utterance index draws only, for distribution tests.
    pub fn draw_utterance_indices(&self, batch_index: u64, n: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(batch_index.wrapping_add(1));
        (0..n)
            .map(|_| {
                let u = rng.random_range(0..self.audio.len());
                let _offset = rng.random_range(0..=self.audio[u].len() - self.spec.chunk_len);
                u
            })
            .collect()
    }
}
