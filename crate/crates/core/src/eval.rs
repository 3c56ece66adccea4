//! Both evaluation protocols.
//!
//! Intra-dataset (verification framing): tile each held-out utterance into
//! 200 ms frames, classify every frame over the training classes, report
//! the frame error rate, then average per-frame posteriors per utterance
//! and report the sentence classification error rate.
//!
//! Inter-dataset (identification): enroll unseen speakers into a gallery of
//! mean normalized embeddings and identify probe utterances by cosine
//! similarity. Margins never apply here; this is pure embedding geometry.

use serde::Serialize;

use crate::data::manifest::{DatasetManifest, Split, UtteranceRecord};
use crate::data::wav::load_wav;
use crate::error::{Error, Result};
use crate::loss::{posteriors, EvalLogits, LossConfig};
use crate::model::{embed, ModelWeights};
use crate::ops::l2_normalize;
use crate::tensor::Tensor;

#[derive(Clone, Debug)]
pub struct EvalConfig {
    pub loss: LossConfig,
    pub eval_logits: EvalLogits,
    /// Hop between evaluation frames in samples; `None` means
    /// non-overlapping (hop = chunk length).
    pub frame_hop: Option<usize>,
    pub enroll_chunks_per_speaker: usize,
}

impl EvalConfig {
    pub fn new(loss: LossConfig) -> Self {
        EvalConfig {
            loss,
            eval_logits: EvalLogits::Plain,
            frame_hop: None,
            enroll_chunks_per_speaker: 10,
        }
    }
}

/// Evaluation report, serialized as JSON.
#[derive(Clone, Debug, Serialize)]
pub struct EvalReport {
    pub protocol: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fer_percent: Option<f64>,
    pub cer_percent: f64,
    pub frames_evaluated: usize,
    pub sentences_evaluated: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gallery_size: Option<usize>,
    pub config_fingerprint: String,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Short stable digest of a canonical config serialization, recorded in
/// every report so results can be traced back to their exact settings.
pub fn config_fingerprint(canonical: &str) -> String {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(canonical.as_bytes());
    let mut out = String::with_capacity(16);
    for byte in digest.iter().take(8) {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

/// Frame start offsets for an utterance: `0, hop, 2·hop, …` while a full
/// chunk still fits.
pub fn frame_offsets(len: usize, chunk_len: usize, hop: usize) -> Vec<usize> {
    let mut offsets = Vec::new();
    if len >= chunk_len && hop > 0 {
        let mut start = 0;
        while start + chunk_len <= len {
            offsets.push(start);
            start += hop;
        }
    }
    offsets
}

/// Per-frame posterior vectors of one utterance.
#[derive(Clone, Debug)]
pub struct UtterancePosteriors {
    pub speaker_index: usize,
    pub frames: Vec<Vec<f64>>,
}

/// Everything the intra-dataset metrics are computed from. Kept as a
/// plain dump so independent recomputation can audit the metrics.
#[derive(Clone, Debug)]
pub struct PosteriorDump {
    pub class_count: usize,
    pub utterances: Vec<UtterancePosteriors>,
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn load_utterance(manifest: &DatasetManifest, record: &UtteranceRecord) -> Result<Vec<f64>> {
    let path = manifest.resolve(record);
    let (samples, sr) = load_wav(&path)?;
    if sr != manifest.sample_rate {
        return Err(Error::MixedSampleRates {
            expected: manifest.sample_rate,
            found: sr,
            path,
        });
    }
    Ok(samples)
}

fn utterance_chunks(samples: &[f64], chunk_len: usize, hop: usize) -> Option<Tensor> {
    let offsets = frame_offsets(samples.len(), chunk_len, hop);
    if offsets.is_empty() {
        return None;
    }
    let mut data = vec![0.0; offsets.len() * chunk_len];
    for (i, &off) in offsets.iter().enumerate() {
        data[i * chunk_len..(i + 1) * chunk_len].copy_from_slice(&samples[off..off + chunk_len]);
    }
    Some(Tensor::raw(vec![offsets.len(), chunk_len], data))
}

/// Embed and classify every frame of every test-split utterance.
pub fn collect_posteriors(
    weights: &ModelWeights,
    manifest: &DatasetManifest,
    cfg: &EvalConfig,
) -> Result<PosteriorDump> {
    check_rates(weights, manifest)?;
    weights.ensure_class_count(manifest.class_count())?;
    let chunk_len = weights.config.chunk_len;
    let hop = cfg.frame_hop.unwrap_or(chunk_len);
    let records = manifest.records_in(Split::Test);
    if records.is_empty() {
        return Err(Error::EmptySplit { split: "test" });
    }
    let classes = weights.class_count;
    let mut utterances = Vec::new();
    for record in records {
        let samples = load_utterance(manifest, record)?;
        let Some(chunks) = utterance_chunks(&samples, chunk_len, hop) else {
            continue; // shorter than one frame
        };
        let speaker_index = manifest
            .class_index(&record.speaker_id)
            .expect("record speaker is in the manifest");
        let features = embed(weights, &chunks)?;
        let labels = vec![speaker_index; chunks.dim(0)];
        let probs = posteriors(
            &features,
            &weights.head_w,
            &cfg.loss,
            Some(&labels),
            cfg.eval_logits,
        )?;
        let frames = probs.data().chunks(classes).map(|r| r.to_vec()).collect();
        utterances.push(UtterancePosteriors {
            speaker_index,
            frames,
        });
    }
    if utterances.is_empty() {
        return Err(Error::EmptySplit { split: "test" });
    }
    Ok(PosteriorDump {
        class_count: classes,
        utterances,
    })
}

/// Percentage of frames whose argmax posterior misses the true speaker.
pub fn frame_error_rate(dump: &PosteriorDump) -> Result<f64> {
    let mut frames = 0usize;
    let mut wrong = 0usize;
    for utt in &dump.utterances {
        for frame in &utt.frames {
            frames += 1;
            if argmax(frame) != utt.speaker_index {
                wrong += 1;
            }
        }
    }
    if frames == 0 {
        return Err(Error::EmptySplit { split: "test" });
    }
    Ok(100.0 * wrong as f64 / frames as f64)
}

/// Percentage of utterances misidentified after averaging per-frame
/// posteriors and voting for the highest average.
pub fn sentence_cer(dump: &PosteriorDump) -> Result<f64> {
    if dump.utterances.is_empty() {
        return Err(Error::EmptySplit { split: "test" });
    }
    let mut wrong = 0usize;
    for utt in &dump.utterances {
        let mut avg = vec![0.0; dump.class_count];
        for frame in &utt.frames {
            for (a, p) in avg.iter_mut().zip(frame) {
                *a += p;
            }
        }
        let n = utt.frames.len() as f64;
        for a in avg.iter_mut() {
            *a /= n;
        }
        if argmax(&avg) != utt.speaker_index {
            wrong += 1;
        }
    }
    Ok(100.0 * wrong as f64 / dump.utterances.len() as f64)
}

fn check_rates(weights: &ModelWeights, manifest: &DatasetManifest) -> Result<()> {
    if (weights.config.sample_rate - manifest.sample_rate as f64).abs() > 1e-9 {
        return Err(Error::InvalidConfig {
            detail: format!(
                "checkpoint expects {} Hz audio, manifest is {} Hz",
                weights.config.sample_rate, manifest.sample_rate
            ),
        });
    }
    Ok(())
}

/// Intra-dataset protocol: FER and CER over the manifest's test split.
pub fn evaluate_intra(
    weights: &ModelWeights,
    manifest: &DatasetManifest,
    cfg: &EvalConfig,
    fingerprint: &str,
) -> Result<EvalReport> {
    let dump = collect_posteriors(weights, manifest, cfg)?;
    let fer = frame_error_rate(&dump)?;
    let cer = sentence_cer(&dump)?;
    Ok(EvalReport {
        protocol: "intra".into(),
        fer_percent: Some(fer),
        cer_percent: cer,
        frames_evaluated: dump.utterances.iter().map(|u| u.frames.len()).sum(),
        sentences_evaluated: dump.utterances.len(),
        gallery_size: None,
        config_fingerprint: fingerprint.to_string(),
    })
}

/// Registered speakers: id → enrolled unit-norm embedding, sorted by id.
#[derive(Clone, Debug)]
pub struct Gallery {
    pub entries: Vec<(String, Vec<f64>)>,
}

impl Gallery {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, speaker: &str) -> bool {
        self.entries.iter().any(|(s, _)| s == speaker)
    }

    /// Best match for a unit-norm probe embedding: `(speaker, similarity,
    /// tied)`. Ties resolve to the lexicographically smallest id because
    /// entries are kept sorted.
    pub fn rank(&self, probe: &[f64]) -> (String, f64, bool) {
        let mut best_id = &self.entries[0].0;
        let mut best = f64::NEG_INFINITY;
        let mut tie = false;
        for (id, entry) in &self.entries {
            let sim: f64 = entry.iter().zip(probe).map(|(a, b)| a * b).sum();
            let sim = sim.clamp(-1.0, 1.0);
            if sim > best {
                best = sim;
                best_id = id;
                tie = false;
            } else if sim == best {
                tie = true;
            }
        }
        (best_id.clone(), best, tie)
    }
}

/// Utterance-level embedding: embed each chunk, L2-normalize each row,
/// average, re-normalize. Enrolling the same chunk twice changes nothing.
pub fn utterance_embedding(weights: &ModelWeights, chunks: &Tensor) -> Result<Vec<f64>> {
    let features = embed(weights, chunks)?;
    let dim = features.dim(1);
    let mut mean = vec![0.0; dim];
    for row in features.data().chunks(dim) {
        let unit = l2_normalize(&Tensor::raw(vec![dim], row.to_vec()), 1e-12);
        for (m, v) in mean.iter_mut().zip(unit.data()) {
            *m += v;
        }
    }
    let n = features.dim(0) as f64;
    for m in mean.iter_mut() {
        *m /= n;
    }
    Ok(l2_normalize(&Tensor::raw(vec![dim], mean), 1e-12).into_data())
}

/// Enroll each speaker from the manifest's test split: embed its first
/// `enroll_chunks_per_speaker` frames, L2-normalize each, average, and
/// re-normalize. Speakers with too few frames are excluded and reported.
pub fn build_gallery(
    weights: &ModelWeights,
    manifest: &DatasetManifest,
    cfg: &EvalConfig,
) -> Result<(Gallery, Vec<String>)> {
    check_rates(weights, manifest)?;
    let chunk_len = weights.config.chunk_len;
    let hop = cfg.frame_hop.unwrap_or(chunk_len);
    let want = cfg.enroll_chunks_per_speaker.max(1);

    let mut entries = Vec::new();
    let mut excluded = Vec::new();
    for speaker in &manifest.speakers {
        let mut chunks: Vec<f64> = Vec::new();
        let mut count = 0usize;
        'records: for record in manifest.records_in(Split::Test) {
            if &record.speaker_id != speaker {
                continue;
            }
            let samples = load_utterance(manifest, record)?;
            for off in frame_offsets(samples.len(), chunk_len, hop) {
                chunks.extend_from_slice(&samples[off..off + chunk_len]);
                count += 1;
                if count == want {
                    break 'records;
                }
            }
        }
        if count < want {
            excluded.push(speaker.clone());
            continue;
        }
        let chunks = Tensor::raw(vec![count, chunk_len], chunks);
        entries.push((speaker.clone(), utterance_embedding(weights, &chunks)?));
    }
    if entries.is_empty() {
        return Err(Error::EmptyGallery);
    }
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    Ok((Gallery { entries }, excluded))
}

/// One identification decision.
#[derive(Clone, Debug)]
pub struct ProbeDecision {
    pub speaker: String,
    pub predicted: String,
    pub similarity: f64,
    pub tie: bool,
}

/// Identify probe utterances against the gallery. Probe speakers must all
/// be enrolled. Returns the error percentage and per-probe decisions.
pub fn identify(
    weights: &ModelWeights,
    gallery: &Gallery,
    manifest: &DatasetManifest,
    probe_records: &[&UtteranceRecord],
    cfg: &EvalConfig,
) -> Result<(f64, Vec<ProbeDecision>)> {
    if gallery.is_empty() {
        return Err(Error::EmptyGallery);
    }
    if probe_records.is_empty() {
        return Err(Error::EmptyProbes);
    }
    let chunk_len = weights.config.chunk_len;
    let hop = cfg.frame_hop.unwrap_or(chunk_len);
    let mut decisions = Vec::new();
    let mut wrong = 0usize;
    for record in probe_records {
        if !gallery.contains(&record.speaker_id) {
            return Err(Error::UnenrolledSpeaker {
                speaker: record.speaker_id.clone(),
            });
        }
        let samples = load_utterance(manifest, record)?;
        let Some(chunks) = utterance_chunks(&samples, chunk_len, hop) else {
            continue;
        };
        let probe = utterance_embedding(weights, &chunks)?;
        let (predicted, similarity, tie) = gallery.rank(&probe);
        if predicted != record.speaker_id {
            wrong += 1;
        }
        decisions.push(ProbeDecision {
            speaker: record.speaker_id.clone(),
            predicted,
            similarity,
            tie,
        });
    }
    if decisions.is_empty() {
        return Err(Error::EmptyProbes);
    }
    Ok((100.0 * wrong as f64 / decisions.len() as f64, decisions))
}

/// Inter-dataset protocol on a probe corpus: enroll from its test split,
/// probe with its train split (disjoint by construction), identify by
/// cosine. Speakers excluded at enrollment are skipped as probes too.
pub fn evaluate_inter(
    weights: &ModelWeights,
    manifest: &DatasetManifest,
    cfg: &EvalConfig,
    fingerprint: &str,
) -> Result<(EvalReport, Vec<ProbeDecision>)> {
    let (gallery, excluded) = build_gallery(weights, manifest, cfg)?;
    let probes: Vec<&UtteranceRecord> = manifest
        .records_in(Split::Train)
        .into_iter()
        .filter(|r| !excluded.contains(&r.speaker_id))
        .collect();
    let chunk_len = weights.config.chunk_len;
    let hop = cfg.frame_hop.unwrap_or(chunk_len);
    let frames: usize = probes
        .iter()
        .map(|r| {
            let n = (r.duration_s * manifest.sample_rate as f64).round() as usize;
            frame_offsets(n, chunk_len, hop).len()
        })
        .sum();
    let (cer, decisions) = identify(weights, &gallery, manifest, &probes, cfg)?;
    Ok((
        EvalReport {
            protocol: "inter".into(),
            fer_percent: None,
            cer_percent: cer,
            frames_evaluated: frames,
            sentences_evaluated: decisions.len(),
            gallery_size: Some(gallery.len()),
            config_fingerprint: fingerprint.to_string(),
        },
        decisions,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_tiling_of_one_second_at_16k_gives_five_frames() {
        assert_eq!(frame_offsets(16000, 3200, 3200).len(), 5);
        assert_eq!(frame_offsets(3199, 3200, 3200).len(), 0);
        assert_eq!(frame_offsets(6400, 3200, 1600).len(), 3); // 50% overlap
    }

    #[test]
    fn posterior_averaging_votes_class_zero() {
        // frames [0.6,0.4], [0.4,0.6], [0.9,0.1] → average [0.633, 0.367]
        let dump = PosteriorDump {
            class_count: 2,
            utterances: vec![UtterancePosteriors {
                speaker_index: 0,
                frames: vec![vec![0.6, 0.4], vec![0.4, 0.6], vec![0.9, 0.1]],
            }],
        };
        assert_eq!(sentence_cer(&dump).unwrap(), 0.0);
        // FER counts the middle frame as wrong
        assert!((frame_error_rate(&dump).unwrap() - 100.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn single_frame_utterance_cer_equals_its_fer_decision() {
        let dump = PosteriorDump {
            class_count: 3,
            utterances: vec![UtterancePosteriors {
                speaker_index: 2,
                frames: vec![vec![0.2, 0.5, 0.3]],
            }],
        };
        assert_eq!(frame_error_rate(&dump).unwrap(), 100.0);
        assert_eq!(sentence_cer(&dump).unwrap(), 100.0);
    }

    #[test]
    fn unanimously_correct_frames_give_zero_cer() {
        let dump = PosteriorDump {
            class_count: 2,
            utterances: (0..5)
                .map(|_| UtterancePosteriors {
                    speaker_index: 1,
                    frames: vec![vec![0.1, 0.9]; 4],
                })
                .collect(),
        };
        assert_eq!(frame_error_rate(&dump).unwrap(), 0.0);
        assert_eq!(sentence_cer(&dump).unwrap(), 0.0);
    }

    #[test]
    fn gallery_rank_breaks_ties_lexicographically() {
        let gallery = Gallery {
            entries: vec![
                ("alpha".into(), vec![1.0, 0.0]),
                ("beta".into(), vec![0.0, 1.0]),
            ],
        };
        // 45° probe: equidistant from both entries
        let inv = 1.0 / 2f64.sqrt();
        let (who, _sim, tie) = gallery.rank(&[inv, inv]);
        assert_eq!(who, "alpha");
        assert!(tie);
        let (who, sim, tie) = gallery.rank(&[1.0, 0.0]);
        assert_eq!(who, "alpha");
        assert!((sim - 1.0).abs() < 1e-12);
        assert!(!tie);
    }

    #[test]
    fn identification_is_invariant_to_positive_rescaling() {
        let gallery = Gallery {
            entries: vec![
                ("a".into(), vec![0.6, 0.8]),
                ("b".into(), vec![-0.8, 0.6]),
            ],
        };
        let probe = [0.55f64, 0.82];
        let norm = (probe[0] * probe[0] + probe[1] * probe[1]).sqrt();
        for lambda in [1.0, 0.01, 250.0] {
            let scaled: Vec<f64> = probe.iter().map(|v| v * lambda / (lambda * norm)).collect();
            let (who, sim, tie) = gallery.rank(&scaled);
            assert_eq!(who, "a", "lambda {lambda}");
            assert!(!tie);
            assert!(sim > 0.9);
        }
    }
}
