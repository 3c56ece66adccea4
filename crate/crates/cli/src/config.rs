//! Flat key-value run configuration.
//!
//! Every tunable of the toolkit appears here under one name. Values load
//! from a plain-text file of `key = value` lines (`#` starts a comment),
//! can be overridden with repeated `--set key=value` flags, and are echoed
//! in canonical order next to every command's outputs. Re-running with
//! the echoed file reproduces the run.

use std::fmt::Write as _;
use std::path::Path;

use csnc_core::checkpoint::CheckpointDtype;
use csnc_core::data::manifest::SplitConfig;
use csnc_core::data::sampler::BatchSpec;
use csnc_core::data::synth::SynthConfig;
use csnc_core::error::{Error, Result};
use csnc_core::eval::EvalConfig;
use csnc_core::loss::{EvalLogits, LossConfig, LossKind, RStatistic, TUpdate};
use csnc_core::model::{ConvLayerConfig, ModelConfig, SincLayerConfig};
use csnc_core::optim::{OptimConfig, OptimKind};
use csnc_core::train::TrainConfig;

#[derive(Clone, Debug)]
pub struct RunConfig {
    // corpus synthesis
    pub speakers: usize,
    pub utts_per_speaker: usize,
    pub seconds_per_utt: f64,
    pub synth_sample_rate: u32,
    // per-speaker duration split
    pub train_lo_s: f64,
    pub train_hi_s: f64,
    pub test_lo_s: f64,
    pub test_hi_s: f64,
    // model
    pub chunk_ms: f64,
    pub sinc_count: usize,
    pub sinc_kernel_len: usize,
    pub sinc_stride: usize,
    pub sinc_pool: usize,
    pub sinc_window: bool,
    pub f_min_hz: f64,
    /// 0 means the corpus Nyquist frequency.
    pub f_max_hz: f64,
    pub conv_layers: String,
    pub fc_layers: String,
    pub embedding_dim: usize,
    pub leaky_slope: f64,
    pub layer_norm_eps: f64,
    // loss head
    pub loss: String,
    pub margin_m: f64,
    pub scale_s: f64,
    pub alpha: f64,
    pub r_statistic: String,
    pub t_update: String,
    // training
    pub optimizer: String,
    pub learning_rate: f64,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub batches_per_epoch: usize,
    pub seed: u64,
    pub checkpoint_every: usize,
    pub checkpoint_dtype: String,
    /// 0 lets the runtime pick; higher values cap worker threads.
    pub threads: usize,
    // evaluation
    pub eval_logits: String,
    pub enroll_chunks: usize,
    /// 0 means non-overlapping frames (hop = chunk).
    pub frame_hop_ms: f64,
    // gradient checking and filter export
    pub gradcheck_seeds: usize,
    pub response_points: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            speakers: 10,
            utts_per_speaker: 8,
            seconds_per_utt: 3.0,
            synth_sample_rate: 8000,
            train_lo_s: 12.0,
            train_hi_s: 15.0,
            test_lo_s: 2.0,
            test_hi_s: 6.0,
            chunk_ms: 200.0,
            sinc_count: 80,
            sinc_kernel_len: 251,
            sinc_stride: 1,
            sinc_pool: 3,
            sinc_window: true,
            f_min_hz: 30.0,
            f_max_hz: 0.0,
            conv_layers: "60:5:3,60:5:3".into(),
            fc_layers: "2048,2048".into(),
            embedding_dim: 2048,
            leaky_slope: 0.2,
            layer_norm_eps: 1e-5,
            loss: "curricular".into(),
            margin_m: 0.5,
            scale_s: 64.0,
            alpha: 0.99,
            r_statistic: "mean".into(),
            t_update: "fast".into(),
            optimizer: "rmsprop".into(),
            learning_rate: 1e-2,
            rmsprop_decay: 0.95,
            rmsprop_eps: 1e-7,
            batch_size: 128,
            epochs: 1,
            batches_per_epoch: 800,
            seed: 1234,
            checkpoint_every: 1,
            checkpoint_dtype: "f64".into(),
            threads: 0,
            eval_logits: "plain".into(),
            enroll_chunks: 10,
            frame_hop_ms: 0.0,
            gradcheck_seeds: 20,
            response_points: 2048,
        }
    }
}

fn bad_value(key: &str, value: &str) -> Error {
    Error::InvalidConfig {
        detail: format!("bad value {value:?} for key {key}"),
    }
}

macro_rules! set_keys {
    ($self:ident, $key:ident, $value:ident; $($name:ident),* $(,)?) => {
        match $key {
            $(stringify!($name) => {
                $self.$name = $value.parse().map_err(|_| bad_value($key, $value))?;
            })*
            other => {
                return Err(Error::InvalidConfig {
                    detail: format!("unknown config key {other:?}"),
                })
            }
        }
    };
}

impl RunConfig {
    /// Set one key from its string form. Unknown keys are errors.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        set_keys!(self, key, value;
            speakers, utts_per_speaker, seconds_per_utt, synth_sample_rate,
            train_lo_s, train_hi_s, test_lo_s, test_hi_s,
            chunk_ms, sinc_count, sinc_kernel_len, sinc_stride, sinc_pool,
            sinc_window, f_min_hz, f_max_hz, conv_layers, fc_layers,
            embedding_dim, leaky_slope, layer_norm_eps,
            loss, margin_m, scale_s, alpha, r_statistic, t_update,
            optimizer, learning_rate, rmsprop_decay, rmsprop_eps,
            batch_size, epochs, batches_per_epoch, seed, checkpoint_every,
            checkpoint_dtype, threads,
            eval_logits, enroll_chunks, frame_hop_ms,
            gradcheck_seeds, response_points,
        );
        Ok(())
    }

    /// Apply a `key = value` config file.
    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::InvalidConfig {
                    detail: format!("{}:{}: expected key = value, got {raw:?}", path.display(), i + 1),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Apply repeated `--set key=value` overrides.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for pair in pairs {
            let Some((key, value)) = pair.split_once('=') else {
                return Err(Error::InvalidConfig {
                    detail: format!("--set expects key=value, got {pair:?}"),
                });
            };
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Canonical echo: every key in fixed order.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::new();
        macro_rules! emit {
            ($($name:ident),* $(,)?) => {
                $(let _ = writeln!(s, "{} = {}", stringify!($name), self.$name);)*
            };
        }
        emit!(
            speakers, utts_per_speaker, seconds_per_utt, synth_sample_rate,
            train_lo_s, train_hi_s, test_lo_s, test_hi_s,
            chunk_ms, sinc_count, sinc_kernel_len, sinc_stride, sinc_pool,
            sinc_window, f_min_hz, f_max_hz, conv_layers, fc_layers,
            embedding_dim, leaky_slope, layer_norm_eps,
            loss, margin_m, scale_s, alpha, r_statistic, t_update,
            optimizer, learning_rate, rmsprop_decay, rmsprop_eps,
            batch_size, epochs, batches_per_epoch, seed, checkpoint_every,
            checkpoint_dtype, threads,
            eval_logits, enroll_chunks, frame_hop_ms,
            gradcheck_seeds, response_points,
        );
        s
    }

    pub fn fingerprint(&self) -> String {
        csnc_core::eval::config_fingerprint(&self.to_canonical_string())
    }

    pub fn chunk_len(&self, sample_rate: f64) -> usize {
        (self.chunk_ms / 1000.0 * sample_rate).round() as usize
    }

    pub fn model_config(&self, sample_rate: f64) -> Result<ModelConfig> {
        let f_max = if self.f_max_hz == 0.0 {
            sample_rate / 2.0
        } else {
            self.f_max_hz
        };
        let cfg = ModelConfig {
            sample_rate,
            chunk_len: self.chunk_len(sample_rate),
            sinc: SincLayerConfig {
                count: self.sinc_count,
                kernel_len: self.sinc_kernel_len,
                f_min_hz: self.f_min_hz,
                f_max_hz: f_max,
                window: self.sinc_window,
                stride: self.sinc_stride,
                pool_len: self.sinc_pool,
            },
            conv_layers: parse_conv_layers(&self.conv_layers)?,
            fc_layers: parse_fc_layers(&self.fc_layers)?,
            embedding_dim: self.embedding_dim,
            leaky_slope: self.leaky_slope,
            layer_norm_eps: self.layer_norm_eps,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn loss_config(&self) -> Result<LossConfig> {
        let cfg = LossConfig {
            kind: LossKind::parse(&self.loss)?,
            m: self.margin_m,
            s: self.scale_s,
            alpha: self.alpha,
            r_statistic: match self.r_statistic.as_str() {
                "mean" => RStatistic::Mean,
                "sum" => RStatistic::Sum,
                other => {
                    return Err(Error::InvalidConfig {
                        detail: format!("r_statistic must be mean or sum, got {other:?}"),
                    })
                }
            },
            t_update: match self.t_update.as_str() {
                "fast" => TUpdate::Fast,
                "ema" => TUpdate::Ema,
                other => {
                    return Err(Error::InvalidConfig {
                        detail: format!("t_update must be fast or ema, got {other:?}"),
                    })
                }
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self, sample_rate: f64) -> Result<TrainConfig> {
        let cfg = TrainConfig {
            loss: self.loss_config()?,
            batch: BatchSpec {
                batch_size: self.batch_size,
                chunk_len: self.chunk_len(sample_rate),
                seed: self.seed,
            },
            optim: OptimConfig {
                kind: OptimKind::parse(&self.optimizer)?,
                learning_rate: self.learning_rate,
                rmsprop_decay: self.rmsprop_decay,
                rmsprop_eps: self.rmsprop_eps,
            },
            epochs: self.epochs,
            batches_per_epoch: self.batches_per_epoch,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn eval_config(&self, sample_rate: f64) -> Result<EvalConfig> {
        Ok(EvalConfig {
            loss: self.loss_config()?,
            eval_logits: match self.eval_logits.as_str() {
                "plain" => EvalLogits::Plain,
                "margin" => EvalLogits::Margin,
                other => {
                    return Err(Error::InvalidConfig {
                        detail: format!("eval_logits must be plain or margin, got {other:?}"),
                    })
                }
            },
            frame_hop: if self.frame_hop_ms == 0.0 {
                None
            } else {
                Some((self.frame_hop_ms / 1000.0 * sample_rate).round() as usize)
            },
            enroll_chunks_per_speaker: self.enroll_chunks,
        })
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            train_lo: self.train_lo_s,
            train_hi: self.train_hi_s,
            test_lo: self.test_lo_s,
            test_hi: self.test_hi_s,
            seed: self.seed,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            n_speakers: self.speakers,
            utterances_per_speaker: self.utts_per_speaker,
            seconds_per_utterance: self.seconds_per_utt,
            sample_rate: self.synth_sample_rate,
            seed: self.seed,
        }
    }

    pub fn checkpoint_dtype(&self) -> Result<CheckpointDtype> {
        CheckpointDtype::parse(&self.checkpoint_dtype)
    }
}

fn parse_conv_layers(s: &str) -> Result<Vec<ConvLayerConfig>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            let fields: Vec<&str> = part.trim().split(':').collect();
            if fields.len() != 3 {
                return Err(Error::InvalidConfig {
                    detail: format!(
                        "conv layer {part:?} must be filters:kernel_len:pool_len"
                    ),
                });
            }
            let parse = |f: &str| {
                f.parse::<usize>().map_err(|_| Error::InvalidConfig {
                    detail: format!("bad conv layer field {f:?}"),
                })
            };
            Ok(ConvLayerConfig {
                filters: parse(fields[0])?,
                kernel_len: parse(fields[1])?,
                pool_len: parse(fields[2])?,
            })
        })
        .collect()
}

fn parse_fc_layers(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if s.is_empty() || s == "none" {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            part.trim().parse::<usize>().map_err(|_| Error::InvalidConfig {
                detail: format!("bad fc width {part:?}"),
            })
        })
        .collect()
}
