//! Dataset manifests: the speaker-labeled audio inventory every corpus
//! enters the system through, with the per-speaker train/test duration
//! split.
//!
//! File format (tab-separated, one record per line):
//!
//! ```text
//! #csnc-manifest v1 sample_rate=<Hz>
//! # excluded speaker=<id> reason=no-wav-files
//! # flagged speaker=<id> reason=insufficient-duration
//! # unused_utterances=<n>
//! <speaker_id>\t<relative_path>\t<duration_s, 6 decimals>\t<train|test>
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use crate::data::wav::probe_wav;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug)]
pub struct UtteranceRecord {
    pub speaker_id: String,
    pub rel_path: String,
    pub duration_s: f64,
    pub split: Split,
}

#[derive(Clone, Debug)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub sample_rate: u32,
    /// Lexicographically ordered unique speakers; position = class index.
    pub speakers: Vec<String>,
    pub records: Vec<UtteranceRecord>,
    /// Speakers that could not meet both split duration minima.
    pub flagged: Vec<String>,
    /// Speaker directories that contained no WAV files.
    pub excluded: Vec<String>,
    /// Utterances left out once both duration budgets were filled.
    pub unused_utterances: usize,
}

impl DatasetManifest {
    pub fn class_count(&self) -> usize {
        self.speakers.len()
    }

    pub fn class_index(&self, speaker: &str) -> Option<usize> {
        self.speakers.iter().position(|s| s == speaker)
    }

    pub fn records_in(&self, split: Split) -> Vec<&UtteranceRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    /// Absolute path of a record's audio file.
    pub fn resolve(&self, record: &UtteranceRecord) -> PathBuf {
        self.root.join(&record.rel_path)
    }
}

/// Duration budgets for the per-speaker split, in seconds.
#[derive(Clone, Copy, Debug)]
pub struct SplitConfig {
    pub train_lo: f64,
    pub train_hi: f64,
    pub test_lo: f64,
    pub test_hi: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            train_lo: 12.0,
            train_hi: 15.0,
            test_lo: 2.0,
            test_hi: 6.0,
            seed: 0,
        }
    }
}

/// Per-speaker split outcome: which record indices landed where.
#[derive(Clone, Debug)]
pub struct SplitAssignment {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub unused: Vec<usize>,
    /// The speaker could not meet both duration minima.
    pub flagged: bool,
}

/// Greedy whole-utterance assignment in seed-shuffled order: utterances go
/// to train until its cumulative duration first reaches the low bound,
/// then to test while it is below its low bound or still fits under its
/// high bound; the rest are unused. Speakers that cannot meet both minima
/// are flagged, never dropped.
pub fn split_by_duration(durations: &[f64], cfg: &SplitConfig, rng: &mut ChaCha8Rng) -> SplitAssignment {
    let mut order: Vec<usize> = (0..durations.len()).collect();
    order.shuffle(rng);
    let mut out = SplitAssignment {
        train: Vec::new(),
        test: Vec::new(),
        unused: Vec::new(),
        flagged: false,
    };
    let (mut train_cum, mut test_cum) = (0.0, 0.0);
    for &i in &order {
        let d = durations[i];
        if train_cum < cfg.train_lo {
            out.train.push(i);
            train_cum += d;
        } else if test_cum < cfg.test_lo || test_cum + d <= cfg.test_hi {
            out.test.push(i);
            test_cum += d;
        } else {
            out.unused.push(i);
        }
    }
    out.flagged = train_cum < cfg.train_lo || test_cum < cfg.test_lo;
    out.train.sort_unstable();
    out.test.sort_unstable();
    out.unused.sort_unstable();
    out
}

/// Scan a directory-per-speaker corpus, probe durations from WAV headers,
/// and assign the duration split. Deterministic for a fixed tree and seed.
pub fn build_manifest(root: &Path, cfg: &SplitConfig) -> Result<DatasetManifest> {
    let mut speaker_dirs: Vec<(String, PathBuf)> = Vec::new();
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.is_dir() {
            speaker_dirs.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    speaker_dirs.sort_by(|a, b| a.0.cmp(&b.0));
    if speaker_dirs.is_empty() {
        return Err(Error::EmptyCorpus {
            root: root.to_path_buf(),
        });
    }

    let mut sample_rate: Option<u32> = None;
    let mut speakers = Vec::new();
    let mut excluded = Vec::new();
    let mut flagged = Vec::new();
    let mut records = Vec::new();
    let mut unused_total = 0usize;

    for (speaker_index, (speaker, dir)) in speaker_dirs.iter().enumerate() {
        let mut wavs: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .map(|x| x.eq_ignore_ascii_case("wav"))
                        .unwrap_or(false)
            })
            .collect();
        wavs.sort();
        if wavs.is_empty() {
            excluded.push(speaker.clone());
            continue;
        }
        let mut durations = Vec::with_capacity(wavs.len());
        for wav in &wavs {
            let info = probe_wav(wav)?;
            match sample_rate {
                None => sample_rate = Some(info.sample_rate),
                Some(expected) if expected != info.sample_rate => {
                    return Err(Error::MixedSampleRates {
                        expected,
                        found: info.sample_rate,
                        path: wav.clone(),
                    });
                }
                _ => {}
            }
            durations.push(info.duration_s);
        }
        // one stream per speaker so insertion order of speakers cannot
        // perturb another speaker's shuffle
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(speaker_index as u64 + 1);
        let assignment = split_by_duration(&durations, cfg, &mut rng);
        if assignment.flagged {
            flagged.push(speaker.clone());
        }
        unused_total += assignment.unused.len();
        speakers.push(speaker.clone());
        for (i, wav) in wavs.iter().enumerate() {
            let split = if assignment.train.contains(&i) {
                Split::Train
            } else if assignment.test.contains(&i) {
                Split::Test
            } else {
                continue; // unused by the duration budget
            };
            let rel = wav
                .strip_prefix(root)
                .unwrap_or(wav)
                .to_string_lossy()
                .into_owned();
            records.push(UtteranceRecord {
                speaker_id: speaker.clone(),
                rel_path: rel,
                duration_s: durations[i],
                split,
            });
        }
    }

    if records.is_empty() {
        return Err(Error::EmptyCorpus {
            root: root.to_path_buf(),
        });
    }

    Ok(DatasetManifest {
        root: root.to_path_buf(),
        sample_rate: sample_rate.expect("records imply a probed sample rate"),
        speakers,
        records,
        flagged,
        excluded,
        unused_utterances: unused_total,
    })
}

/// Render the manifest file contents.
pub fn manifest_to_string(m: &DatasetManifest) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "#csnc-manifest v1 sample_rate={}", m.sample_rate);
    for s in &m.excluded {
        let _ = writeln!(out, "# excluded speaker={s} reason=no-wav-files");
    }
    for s in &m.flagged {
        let _ = writeln!(out, "# flagged speaker={s} reason=insufficient-duration");
    }
    if m.unused_utterances > 0 {
        let _ = writeln!(out, "# unused_utterances={}", m.unused_utterances);
    }
    for r in &m.records {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{}",
            r.speaker_id,
            r.rel_path,
            r.duration_s,
            r.split.as_str()
        );
    }
    out
}

pub fn write_manifest(m: &DatasetManifest, path: &Path) -> Result<()> {
    fs::write(path, manifest_to_string(m)).map_err(|e| Error::io(path, e))
}

/// Parse a manifest file. The root for resolving relative paths is the
/// manifest's parent directory.
pub fn read_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut lines = text.lines().enumerate();

    let (_, header) = lines.next().ok_or(Error::ManifestParse {
        line: 1,
        detail: "empty file".into(),
    })?;
    let sample_rate = header
        .strip_prefix("#csnc-manifest v1 sample_rate=")
        .and_then(|s| s.trim().parse::<u32>().ok())
        .ok_or_else(|| Error::ManifestParse {
            line: 1,
            detail: format!("bad header {header:?}"),
        })?;

    let mut records = Vec::new();
    let mut flagged = Vec::new();
    let mut excluded = Vec::new();
    let mut unused = 0usize;
    let mut speaker_seen: BTreeMap<String, ()> = BTreeMap::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let rest = rest.trim();
            if let Some(v) = rest.strip_prefix("unused_utterances=") {
                unused = v.parse().unwrap_or(0);
            } else if let Some(v) = rest.strip_prefix("flagged speaker=") {
                if let Some(s) = v.split_whitespace().next() {
                    flagged.push(s.to_string());
                }
            } else if let Some(v) = rest.strip_prefix("excluded speaker=") {
                if let Some(s) = v.split_whitespace().next() {
                    excluded.push(s.to_string());
                }
            }
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::ManifestParse {
                line: lineno,
                detail: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let duration_s: f64 = fields[2].parse().map_err(|_| Error::ManifestParse {
            line: lineno,
            detail: format!("bad duration {:?}", fields[2]),
        })?;
        if !(duration_s > 0.0) {
            return Err(Error::ManifestParse {
                line: lineno,
                detail: format!("duration must be positive, got {duration_s}"),
            });
        }
        let split = match fields[3] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::ManifestParse {
                    line: lineno,
                    detail: format!("unknown split {other:?}"),
                })
            }
        };
        speaker_seen.insert(fields[0].to_string(), ());
        records.push(UtteranceRecord {
            speaker_id: fields[0].to_string(),
            rel_path: fields[1].to_string(),
            duration_s,
            split,
        });
    }
    if records.is_empty() {
        return Err(Error::EmptyCorpus { root });
    }
    Ok(DatasetManifest {
        root,
        sample_rate,
        speakers: speaker_seen.into_keys().collect(),
        records,
        flagged,
        excluded,
        unused_utterances: unused,
    })
}
