//! Acceptance suite: one test per release criterion, each printing a
//! single PASS line with its measured numbers. Together these gate the
//! numerical core (gradient fidelity, loss algebra, curriculum dynamics,
//! filter DSP), the end-to-end toy training targets, the transfer
//! protocol, the metric definitions, and byte-level reproducibility.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::OnceLock;
use std::time::Instant;

use csnc_core::data::manifest::{build_manifest, DatasetManifest, SplitConfig};
use csnc_core::data::sampler::BatchSpec;
use csnc_core::data::synth::{synth_corpus, SynthConfig};
use csnc_core::eval::{
    self, frame_error_rate, sentence_cer, EvalConfig, PosteriorDump, UtterancePosteriors,
};
use csnc_core::loss::{
    am_softmax_loss, arcface_loss, cosine_logits, curricular_loss, modulation, norm_softmax_loss,
    CosineLogits, CurriculumState, LossConfig, LossKind, TUpdate,
};
use csnc_core::model::{ConvLayerConfig, ModelConfig, ModelWeights, SincLayerConfig};
use csnc_core::optim::{OptimConfig, OptimKind};
use csnc_core::sinc::{frequency_response, mel_init};
use csnc_core::tensor::Tensor;
use csnc_core::train::{TrainConfig, TrainSession};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

fn csnc_bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_csnc"))
}

// ── Criterion 1: gradient fidelity via the gradcheck command ─────

#[test]
fn criterion_1_gradient_fidelity() {
    let start = Instant::now();
    let output = csnc_bin()
        .args(["gradcheck", "--seeds", "20", "--threads", "1"])
        .output()
        .expect("gradcheck runs");
    let elapsed = start.elapsed().as_secs_f64();
    let stdout = String::from_utf8_lossy(&output.stdout);
    assert!(
        output.status.success(),
        "gradcheck failed:\n{stdout}\n{}",
        String::from_utf8_lossy(&output.stderr)
    );
    assert!(stdout.contains("PASS"), "no PASS line:\n{stdout}");
    assert!(
        !stdout.lines().any(|l| l.ends_with("FAIL")),
        "failing group:\n{stdout}"
    );
    assert!(elapsed < 120.0, "gradcheck took {elapsed:.1} s (limit 120 s)");
    let worst = stdout
        .lines()
        .find(|l| l.starts_with("worst"))
        .unwrap_or("")
        .to_string();
    println!("[PASS] criterion 1: gradient fidelity — {worst} in {elapsed:.1} s");
}

// ── Criterion 2: loss-reduction chain ─────────────────────────────

fn random_cl(rng: &mut ChaCha8Rng, batch: usize, classes: usize, dim: usize) -> (Tensor, Tensor, Vec<usize>) {
    let f = Tensor::new(
        vec![batch, dim],
        (0..batch * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let w = Tensor::new(
        vec![classes, dim],
        (0..classes * dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();
    let labels = (0..batch).map(|_| rng.random_range(0..classes)).collect();
    (f, w, labels)
}

#[test]
fn criterion_2_loss_reduction_chain() {
    let mut rng = ChaCha8Rng::seed_from_u64(20_001);
    let (batch, classes, dim) = (4usize, 6usize, 8usize);
    let cfg = LossConfig::default();
    let assert_close = |a: f64, b: f64, what: &str, i: usize| {
        assert!((a - b).abs() < 1e-9, "batch {i}: {what}: {a} vs {b}");
    };
    let assert_grads_close = |a: &Tensor, b: &Tensor, what: &str, i: usize| {
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-9, "batch {i}: {what} gradients differ");
        }
    };

    for i in 0..100 {
        // all-easy batch: features sit close to their target row and the
        // draw is rejected until the margin-adjusted target dominates
        // every non-target cosine (random rows can land close together)
        let cl = loop {
            let (_, w, labels) = random_cl(&mut rng, batch, classes, dim);
            let mut f_data = Vec::with_capacity(batch * dim);
            for &label in &labels {
                let row = &w.data()[label * dim..(label + 1) * dim];
                for v in row {
                    f_data.push(v + rng.random_range(-0.02..0.02));
                }
            }
            let f = Tensor::new(vec![batch, dim], f_data).unwrap();
            let (cl, _) = cosine_logits(&f, &w, &labels).unwrap();
            if all_easy(&cl, cfg.m) {
                break cl;
            }
        };
        let state = CurriculumState {
            t: rng.random_range(0.0..1.0),
            batch_index: i as u64,
        };
        let cur = curricular_loss(&cl, &state, &cfg).unwrap();
        let (arc, arc_grad) = arcface_loss(&cl, cfg.m, cfg.s).unwrap();
        assert_close(cur.loss, arc, "curricular(all-easy) vs arcface", i);
        assert_grads_close(&cur.grad_cos, &arc_grad, "curricular vs arcface", i);

        // zero-margin reductions on a fully random batch
        let (f2, w2, labels2) = random_cl(&mut rng, batch, classes, dim);
        let (cl2, _) = cosine_logits(&f2, &w2, &labels2).unwrap();
        let (ns, ns_grad) = norm_softmax_loss(&cl2, cfg.s).unwrap();
        let (arc0, arc0_grad) = arcface_loss(&cl2, 0.0, cfg.s).unwrap();
        let (am0, am0_grad) = am_softmax_loss(&cl2, 0.0, cfg.s).unwrap();
        assert_close(arc0, ns, "arcface(m=0) vs norm_softmax", i);
        assert_close(am0, ns, "am_softmax(m=0) vs norm_softmax", i);
        assert_grads_close(&arc0_grad, &ns_grad, "arcface(m=0)", i);
        assert_grads_close(&am0_grad, &ns_grad, "am_softmax(m=0)", i);
    }
    println!("[PASS] criterion 2: loss-reduction chain equalities within 1e-9 on 100 batches");
}

fn all_easy(cl: &CosineLogits, m: f64) -> bool {
    let classes = cl.cos_theta.dim(1);
    let cos = cl.cos_theta.data();
    for (b, &label) in cl.labels.iter().enumerate() {
        let target = cos[b * classes + label].clamp(-1.0, 1.0);
        let phi = (target.acos() + m).cos();
        for c in 0..classes {
            if c != label && phi <= cos[b * classes + c] {
                return false;
            }
        }
    }
    true
}

// ── Criterion 3: curriculum dynamics ──────────────────────────────

#[test]
fn criterion_3_curriculum_dynamics() {
    let r = 0.5;
    let alpha = 0.99;
    let fast = LossConfig::default();
    assert_eq!(fast.alpha, alpha);
    let mut state = CurriculumState::default();
    for k in 1..=200i32 {
        state = state.updated(r, &fast);
        let expected = r * (1.0 - (1.0 - alpha).powi(k));
        assert!(
            (state.t - expected).abs() < 1e-12,
            "fast form, k={k}: {} vs {expected}",
            state.t
        );
        if k >= 3 {
            assert!((state.t - r).abs() < 1e-4, "t not within 1e-4 of r at k={k}");
        }
    }
    let ema = LossConfig {
        t_update: TUpdate::Ema,
        ..LossConfig::default()
    };
    let mut state = CurriculumState::default();
    for k in 1..=200i32 {
        state = state.updated(r, &ema);
        let expected = r * (1.0 - alpha.powi(k));
        assert!(
            (state.t - expected).abs() < 1e-12,
            "ema form, k={k}: {} vs {expected}",
            state.t
        );
    }
    println!("[PASS] criterion 3: t dynamics match closed forms to 1e-12 for both conventions");
}

// ── Criterion 4: scalar worked examples ───────────────────────────

#[test]
fn criterion_4_scalar_oracles() {
    let six_figs = |got: f64, expected: f64, what: &str| {
        let rel = (got - expected).abs() / expected.abs();
        assert!(rel < 5e-7, "{what}: {got} vs {expected} (rel {rel:.2e})");
    };

    // modulation, hard branch: cosθ_j(t + cosθ_j)
    six_figs(modulation(0.0, 0.9, 0.5), 0.9 * (0.0 + 0.9), "modulation t=0");
    six_figs(modulation(0.5, 0.9, 0.5), 0.9 * (0.5 + 0.9), "modulation t=0.5");

    // angular margin: cosθ = [cos 0.3, 0.5], label 0, m = 0.5, s = 64
    // → logits [64·cos 0.8, 32], loss = ln(1 + e^{32 − 64·cos 0.8})
    let cl = CosineLogits {
        cos_theta: Tensor::new(vec![1, 2], vec![(0.3f64).cos(), 0.5]).unwrap(),
        labels: vec![0],
    };
    let (arc, _) = arcface_loss(&cl, 0.5, 64.0).unwrap();
    let arc_expected = {
        let z_t = 64.0 * (0.8f64).cos();
        let z_o = 32.0;
        (z_o - z_t).exp().ln_1p()
    };
    six_figs(arc, arc_expected, "angular-margin worked example");

    // curricular hard sample: cosθ = [cos 0.2, 0.9], m = 0.5, s = 64, t = 0
    // → target 64·cos 0.7, negative 64·0.9·(0 + 0.9), loss ≈ 2.944
    let cl = CosineLogits {
        cos_theta: Tensor::new(vec![1, 2], vec![(0.2f64).cos(), 0.9]).unwrap(),
        labels: vec![0],
    };
    let out = curricular_loss(&cl, &CurriculumState::default(), &LossConfig::default()).unwrap();
    let cur_expected = {
        let z_t = 64.0 * (0.7f64).cos();
        let z_h = 64.0 * (0.9 * (0.0 + 0.9));
        (z_h - z_t) + (-(z_h - z_t)).exp().ln_1p()
    };
    six_figs(out.loss, cur_expected, "curricular worked example");
    assert!((out.loss - 2.944).abs() < 1e-3);
    println!(
        "[PASS] criterion 4: scalar oracles to 6 significant figures (curricular {:.6})",
        out.loss
    );
}

// ── Criterion 5: filterbank DSP ───────────────────────────────────

#[test]
fn criterion_5_dsp_correctness() {
    // A mel bank whose bands are all resolvable by a 251-tap kernel: the
    // stop-band probe 1.5·a2 must land beyond the Hamming transition
    // width for the attenuation figure to be measurable at all.
    let (count, sr, f_min, f_max, kernel_len) = (40usize, 16000.0, 700.0, 8000.0, 251usize);
    let params = mel_init(count, sr, f_min, f_max, kernel_len, true).unwrap();
    let mut checked_stopband = 0;
    let mut worst_bracket = 0.0f64;
    let mut worst_atten = 0.0f64;
    for i in 0..count {
        let (a1, a2) = params.effective_cutoffs(i);
        let resp = frequency_response(&params, i, 8192).unwrap();
        let peak = resp.peak_freq();
        assert!(
            peak >= a1 && peak <= a2,
            "filter {i}: peak {peak} outside [{a1}, {a2}]"
        );
        let (lo, hi) = resp.minus3db_points();
        assert!((lo - a1).abs() <= 0.01, "filter {i}: lower -3 dB {lo} vs {a1}");
        assert!((hi - a2).abs() <= 0.01, "filter {i}: upper -3 dB {hi} vs {a2}");
        worst_bracket = worst_bracket.max((lo - a1).abs()).max((hi - a2).abs());
        let probe = 1.5 * a2;
        if probe <= 0.5 {
            let db = resp.db_at(probe);
            assert!(db <= -20.0, "filter {i}: only {db:.1} dB down at {probe}");
            worst_atten = worst_atten.max(db);
            checked_stopband += 1;
        }
    }
    assert!(checked_stopband > count / 2, "too few stop-band checks applied");
    println!(
        "[PASS] criterion 5: DSP — peaks in band, -3 dB bracket within {worst_bracket:.4}, stop-band ≥ 20 dB ({checked_stopband} filters, worst {worst_atten:.1} dB)"
    );
}

// ── Criteria 6 & 7: toy training and transfer (shared fixture) ────

struct ToyRuns {
    _dirs: (tempfile::TempDir, tempfile::TempDir),
    curricular_fer: f64,
    curricular_cer: f64,
    curricular_batches: u64,
    train_seconds: f64,
    softmax_cer: f64,
    softmax_batches: u64,
    inter_cer: f64,
    gallery_size: usize,
}

static TOY: OnceLock<ToyRuns> = OnceLock::new();

fn toy_model_config() -> ModelConfig {
    ModelConfig {
        sample_rate: 8000.0,
        chunk_len: 1600,
        sinc: SincLayerConfig {
            count: 16,
            kernel_len: 129,
            f_min_hz: 50.0,
            f_max_hz: 4000.0,
            window: true,
            stride: 4,
            pool_len: 4,
        },
        conv_layers: vec![ConvLayerConfig {
            filters: 16,
            kernel_len: 5,
            pool_len: 4,
        }],
        fc_layers: vec![64],
        embedding_dim: 32,
        leaky_slope: 0.2,
        layer_norm_eps: 1e-5,
    }
}

fn toy_train_config(kind: LossKind, seed: u64) -> TrainConfig {
    TrainConfig {
        loss: LossConfig {
            kind,
            ..LossConfig::default()
        },
        batch: BatchSpec {
            batch_size: 64,
            chunk_len: 1600,
            seed,
        },
        optim: OptimConfig {
            kind: OptimKind::RmsProp,
            learning_rate: 2e-3,
            ..OptimConfig::default()
        },
        epochs: 1,
        batches_per_epoch: 2000,
        seed,
        checkpoint_every: 0,
    }
}

/// Train with periodic held-out evaluation, stopping as soon as the stop
/// targets are met (the budget cap stays at 2000 batches). Stop targets
/// are set tighter than the assertion thresholds so a pass clears them
/// with margin rather than landing exactly on the boundary.
fn train_until(
    manifest: &DatasetManifest,
    kind: LossKind,
    seed: u64,
    fer_target: f64,
    cer_target: f64,
) -> (ModelWeights, f64, f64, u64) {
    let model_cfg = toy_model_config();
    let cfg = toy_train_config(kind, seed);
    let eval_cfg = EvalConfig::new(cfg.loss.clone());
    let mut session = TrainSession::new(manifest, &model_cfg, cfg).unwrap();
    let max_batches = 2000u64;
    let eval_every = 150u64;
    let mut best = (f64::INFINITY, f64::INFINITY, 0u64);
    for b in 0..max_batches {
        let row = session.step(b).unwrap();
        assert!(row.loss.is_finite());
        if (b + 1) % eval_every == 0 || b + 1 == max_batches {
            let report =
                eval::evaluate_intra(&session.weights, manifest, &eval_cfg, "toy").unwrap();
            let fer = report.fer_percent.unwrap();
            let cer = report.cer_percent;
            best = (fer, cer, b + 1);
            if fer <= fer_target && cer <= cer_target {
                break;
            }
        }
    }
    (session.weights, best.0, best.1, best.2)
}

fn toy() -> &'static ToyRuns {
    TOY.get_or_init(|| {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        synth_corpus(
            &SynthConfig {
                n_speakers: 20,
                utterances_per_speaker: 8,
                seconds_per_utterance: 3.0,
                sample_rate: 8000,
                seed: 42,
            },
            dir_a.path(),
        )
        .unwrap();
        synth_corpus(
            &SynthConfig {
                n_speakers: 10,
                utterances_per_speaker: 8,
                seconds_per_utterance: 3.0,
                sample_rate: 8000,
                seed: 1042,
            },
            dir_b.path(),
        )
        .unwrap();
        let manifest_a = build_manifest(dir_a.path(), &SplitConfig::default()).unwrap();
        let manifest_b = build_manifest(dir_b.path(), &SplitConfig::default()).unwrap();
        assert_eq!(manifest_a.class_count(), 20);
        assert_eq!(manifest_b.class_count(), 10);

        let start = Instant::now();
        let (weights, fer, cer, batches) =
            train_until(&manifest_a, LossKind::Curricular, 4242, 15.0, 2.5);
        let train_seconds = start.elapsed().as_secs_f64();

        let eval_cfg = EvalConfig::new(LossConfig::default());
        let (inter_report, _) =
            eval::evaluate_inter(&weights, &manifest_b, &eval_cfg, "toy-inter").unwrap();

        let (_, _, softmax_cer, softmax_batches) =
            train_until(&manifest_a, LossKind::Softmax, 4242, 100.0, 5.0);

        ToyRuns {
            _dirs: (dir_a, dir_b),
            curricular_fer: fer,
            curricular_cer: cer,
            curricular_batches: batches,
            train_seconds,
            softmax_cer,
            softmax_batches,
            inter_cer: inter_report.cer_percent,
            gallery_size: inter_report.gallery_size.unwrap(),
        }
    })
}

#[test]
fn criterion_6_end_to_end_toy_training() {
    let runs = toy();
    assert!(
        runs.curricular_cer <= 5.0,
        "curricular CER {}% > 5%",
        runs.curricular_cer
    );
    assert!(
        runs.curricular_fer <= 25.0,
        "curricular FER {}% > 25%",
        runs.curricular_fer
    );
    assert!(runs.curricular_batches <= 2000);
    assert!(
        runs.train_seconds < 900.0,
        "training took {:.0} s (limit 900 s)",
        runs.train_seconds
    );
    assert!(
        runs.softmax_cer <= 10.0,
        "softmax CER {}% > 10%",
        runs.softmax_cer
    );
    assert!(runs.softmax_batches <= 2000);
    println!(
        "[PASS] criterion 6: toy training — curricular FER {:.2}% CER {:.2}% in {} batches ({:.0} s); softmax CER {:.2}% in {} batches",
        runs.curricular_fer,
        runs.curricular_cer,
        runs.curricular_batches,
        runs.train_seconds,
        runs.softmax_cer,
        runs.softmax_batches
    );
}

#[test]
fn criterion_7_inter_dataset_smoke() {
    let runs = toy();
    assert_eq!(runs.gallery_size, 10);
    assert!(
        runs.inter_cer <= 30.0,
        "inter-dataset CER {}% > 30% (chance is 90%)",
        runs.inter_cer
    );
    println!(
        "[PASS] criterion 7: inter-dataset — {} unseen speakers identified at CER {:.2}% (chance 90%)",
        runs.gallery_size, runs.inter_cer
    );
}

// ── Criterion 8: metric oracles ───────────────────────────────────

#[test]
fn criterion_8_metric_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let classes = 8usize;
    let utterances: Vec<UtterancePosteriors> = (0..50)
        .map(|_| {
            let frames = (0..rng.random_range(1..10))
                .map(|_| {
                    let mut p: Vec<f64> =
                        (0..classes).map(|_| rng.random_range(0.0..1.0)).collect();
                    let sum: f64 = p.iter().sum();
                    p.iter_mut().for_each(|v| *v /= sum);
                    p
                })
                .collect();
            UtterancePosteriors {
                speaker_index: rng.random_range(0..classes),
                frames,
            }
        })
        .collect();
    let dump = PosteriorDump {
        class_count: classes,
        utterances,
    };

    // brute-force recomputation, independently coded
    let mut frames = 0;
    let mut frame_errors = 0;
    let mut utt_errors = 0;
    for utt in &dump.utterances {
        let mut sums = vec![0.0; classes];
        for frame in &utt.frames {
            let mut best = 0;
            for c in 0..classes {
                if frame[c] > frame[best] {
                    best = c;
                }
                sums[c] += frame[c];
            }
            frames += 1;
            if best != utt.speaker_index {
                frame_errors += 1;
            }
        }
        let mut best = 0;
        for c in 0..classes {
            if sums[c] > sums[best] {
                best = c;
            }
        }
        if best != utt.speaker_index {
            utt_errors += 1;
        }
    }
    let fer_ref = 100.0 * frame_errors as f64 / frames as f64;
    let cer_ref = 100.0 * utt_errors as f64 / dump.utterances.len() as f64;
    assert_eq!(frame_error_rate(&dump).unwrap(), fer_ref);
    assert_eq!(sentence_cer(&dump).unwrap(), cer_ref);

    // random classifier over C classes sits at 100·(1 − 1/C) within 3σ
    let big: Vec<UtterancePosteriors> = (0..400)
        .map(|_| UtterancePosteriors {
            speaker_index: rng.random_range(0..classes),
            frames: (0..10)
                .map(|_| {
                    let mut p: Vec<f64> =
                        (0..classes).map(|_| rng.random_range(0.0..1.0)).collect();
                    let sum: f64 = p.iter().sum();
                    p.iter_mut().for_each(|v| *v /= sum);
                    p
                })
                .collect(),
        })
        .collect();
    let dump = PosteriorDump {
        class_count: classes,
        utterances: big,
    };
    let n = 4000.0;
    let p = 1.0 - 1.0 / classes as f64;
    let sigma = 100.0 * (p * (1.0 - p) / n).sqrt();
    let fer = frame_error_rate(&dump).unwrap();
    assert!(
        (fer - 100.0 * p).abs() <= 3.0 * sigma,
        "random FER {fer} vs {} ± {sigma:.2}",
        100.0 * p
    );
    println!(
        "[PASS] criterion 8: metrics exact vs brute force on 50 utterances; random FER {fer:.2}% ≈ {:.1}%",
        100.0 * p
    );
}

// ── Criterion 9: byte-level determinism through the CLI ───────────

fn run_ok(args: &[&str]) {
    let output = csnc_bin().args(args).output().expect("command runs");
    assert!(
        output.status.success(),
        "`csnc {}` failed:\n{}",
        args.join(" "),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn criterion_9_determinism() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let corpus_str = corpus.to_str().unwrap();
    run_ok(&[
        "synth", "--speakers", "4", "--utts", "8", "--seconds", "3", "--seed", "7", "--out",
        corpus_str,
    ]);
    let manifest = corpus.join("manifest.tsv");

    let small_model: &[&str] = &[
        "--set", "sinc_count=8", "--set", "sinc_kernel_len=65", "--set", "sinc_stride=8",
        "--set", "sinc_pool=4", "--set", "conv_layers=8:5:4", "--set", "fc_layers=32",
        "--set", "embedding_dim=16", "--set", "f_min_hz=60",
    ];
    let mut runs: Vec<PathBuf> = Vec::new();
    for name in ["run-a", "run-b"] {
        let out = dir.path().join(name);
        let mut args: Vec<&str> = vec![
            "train",
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
            "--loss",
            "curricular",
            "--batch",
            "16",
            "--epochs",
            "1",
            "--batches-per-epoch",
            "25",
            "--lr",
            "0.002",
            "--seed",
            "11",
            "--threads",
            "1",
        ];
        args.extend_from_slice(small_model);
        run_ok(&args);
        let eval_out = dir.path().join(format!("{name}-eval"));
        run_ok(&[
            "eval",
            "--protocol",
            "intra",
            "--ckpt",
            out.join("final.ckpt").to_str().unwrap(),
            "--manifest",
            manifest.to_str().unwrap(),
            "--out",
            eval_out.to_str().unwrap(),
            "--threads",
            "1",
        ]);
        runs.push(out);
    }

    let a = &runs[0];
    let b = &runs[1];
    assert_eq!(
        read(&a.join("train_log.csv")),
        read(&b.join("train_log.csv")),
        "training logs differ"
    );
    assert_eq!(
        read(&a.join("final.ckpt")),
        read(&b.join("final.ckpt")),
        "checkpoints differ"
    );
    assert_eq!(
        read(&a.join("train.config.txt")),
        read(&b.join("train.config.txt")),
        "config echoes differ"
    );
    let report_a = read(&dir.path().join("run-a-eval/report.json"));
    let report_b = read(&dir.path().join("run-b-eval/report.json"));
    assert_eq!(report_a, report_b, "eval reports differ");
    let parsed: serde_json::Value = serde_json::from_slice(&report_a).unwrap();
    assert_eq!(parsed["protocol"], "intra");
    assert!(parsed["fer_percent"].is_number());
    println!("[PASS] criterion 9: two identical runs produced byte-identical logs, checkpoints, and reports");
}
